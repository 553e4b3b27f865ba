#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/embed_metric.hpp"
#include "groundnav/exemplar_db.hpp"
#include "groundnav/sim_env.hpp"

namespace groundnav::ground {

using db::ObjectDatabase;
using db::Phrase;
using metric::EmbeddingNet;
using metric::KdeModel;
using sim::RenderedScene;

struct Proposal {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // pixels
  double objectness = 0;
  int source_object = -1;  // layout index when proposed from an annotation, else -1
};

inline void validate(const Proposal& p, int width, int height) {
  if (!(p.x_min < p.x_max && p.y_min < p.y_max))
    throw std::runtime_error("proposal: box must have positive extent");
  if (p.x_min < 0 || p.y_min < 0 || p.x_max > width || p.y_max > height)
    throw std::runtime_error("proposal: box outside image bounds");
  if (p.objectness < 0 || p.objectness > 1)
    throw std::runtime_error("proposal: objectness must be in [0, 1]");
}

inline double box_iou(double ax0, double ay0, double ax1, double ay1,
                      double bx0, double by0, double bx1, double by1) {
  const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0;
  const double inter = iw * ih;
  const double uni = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
  return inter / uni;
}

struct ProposalConfig {
  double jitter = 2.0;          // uniform +-jitter pixels per box edge
  int false_positives = 1;      // distractor boxes per scene
  double objectness_noise = 0;  // stddev of Gaussian noise added to IoU
};

/// Stand-in for a region proposal network: one jittered box per visible
/// object with objectness = clamp(IoU + noise, 0, 1), plus low-objectness
/// distractor boxes.
inline std::vector<Proposal> propose_regions(const RenderedScene& scene,
                                             const ProposalConfig& cfg, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jit(-cfg.jitter, cfg.jitter);
  std::normal_distribution<double> noise(0.0, cfg.objectness_noise > 0 ? cfg.objectness_noise : 1.0);
  std::vector<Proposal> out;
  for (const auto& a : scene.annotations) {
    Proposal p;
    p.source_object = a.object;
    p.x_min = a.x_min;
    p.y_min = a.y_min;
    p.x_max = a.x_max;
    p.y_max = a.y_max;
    if (cfg.jitter > 0) {
      p.x_min = clampd(p.x_min + jit(rng), 0, scene.width - 1);
      p.y_min = clampd(p.y_min + jit(rng), 0, scene.height - 1);
      p.x_max = clampd(p.x_max + jit(rng), p.x_min + 1, scene.width);
      p.y_max = clampd(p.y_max + jit(rng), p.y_min + 1, scene.height);
    }
    double obj = box_iou(p.x_min, p.y_min, p.x_max, p.y_max, a.x_min, a.y_min, a.x_max, a.y_max);
    if (cfg.objectness_noise > 0) obj += noise(rng);
    p.objectness = clampd(obj, 0, 1);
    out.push_back(p);
  }
  std::uniform_real_distribution<double> fp_obj(0.05, 0.3);
  for (int k = 0; k < cfg.false_positives; ++k) {
    std::uniform_real_distribution<double> half(4.0, 16.0);
    const double hx = half(rng), hy = half(rng);
    std::uniform_real_distribution<double> ux(hx, scene.width - hx), uy(hy, scene.height - hy);
    const double cx = ux(rng), cy = uy(rng);
    Proposal p;
    p.x_min = cx - hx;
    p.x_max = cx + hx;
    p.y_min = cy - hy;
    p.y_max = cy + hy;
    p.objectness = fp_obj(rng);
    out.push_back(p);
  }
  for (const auto& p : out) validate(p, scene.width, scene.height);
  return out;
}

// ---------------------------------------------------------------------------
// Alignment scores

/// Align(b, r) for every proposal-reference pair, with the intermediate
/// per-object posteriors kept for inspection.
struct AlignmentTable {
  int n_proposals = 0, n_references = 0, n_objects = 0;
  std::vector<double> align;           // n_proposals x n_references, row-major
  std::vector<double> p_obj_given_box; // n_proposals x n_objects
  std::vector<double> p_obj_given_ref; // n_references x n_objects
  bool underflow = false;

  double at(int b, int r) const { return align[static_cast<size_t>(b) * n_references + r]; }
  double box_posterior(int b, int o) const {
    return p_obj_given_box[static_cast<size_t>(b) * n_objects + o];
  }
  double ref_posterior(int r, int o) const {
    return p_obj_given_ref[static_cast<size_t>(r) * n_objects + o];
  }
};

/// Align(b,r) = sum_o P(o|b) P(b) P(o|r) / P(o) with P(o) uniform over the
/// database and P(b) the raw objectness.
inline AlignmentTable align_score(const RenderedScene& scene, const std::vector<Proposal>& proposals,
                                  const std::vector<Phrase>& references, const ObjectDatabase& database,
                                  const EmbeddingNet& net, const db::WordVectorTable& table,
                                  const KdeModel& kde_img, const KdeModel& kde_txt) {
  if (proposals.empty() || references.empty())
    throw std::runtime_error("align_score: need at least one proposal and one reference");
  AlignmentTable t;
  t.n_proposals = static_cast<int>(proposals.size());
  t.n_references = static_cast<int>(references.size());
  t.n_objects = database.size();
  t.p_obj_given_box.resize(static_cast<size_t>(t.n_proposals) * t.n_objects);
  t.p_obj_given_ref.resize(static_cast<size_t>(t.n_references) * t.n_objects);
  t.align.assign(static_cast<size_t>(t.n_proposals) * t.n_references, 0.0);

  for (int b = 0; b < t.n_proposals; ++b) {
    const auto& p = proposals[b];
    const db::ImagePatch patch = sim::crop_patch(scene, p.x_min, p.y_min, p.x_max, p.y_max);
    const metric::Posterior post = metric::kde_posterior(kde_img, database, metric::embed(net, patch));
    t.underflow = t.underflow || post.underflow;
    std::copy(post.probs.begin(), post.probs.end(),
              t.p_obj_given_box.begin() + static_cast<size_t>(b) * t.n_objects);
  }
  for (int r = 0; r < t.n_references; ++r) {
    const auto emb = db::phrase_embedding(references[r], table);
    const metric::Posterior post = metric::kde_posterior(kde_txt, database, emb.vec);
    t.underflow = t.underflow || post.underflow;
    std::copy(post.probs.begin(), post.probs.end(),
              t.p_obj_given_ref.begin() + static_cast<size_t>(r) * t.n_objects);
  }

  const double inv_prior = static_cast<double>(t.n_objects);  // 1 / P(o), P(o) uniform
  for (int b = 0; b < t.n_proposals; ++b)
    for (int r = 0; r < t.n_references; ++r) {
      double s = 0;
      for (int o = 0; o < t.n_objects; ++o)
        s += t.box_posterior(b, o) * t.ref_posterior(r, o);
      t.align[static_cast<size_t>(b) * t.n_references + r] = s * proposals[b].objectness * inv_prior;
    }
  return t;
}

// ---------------------------------------------------------------------------
// Mask refinement and assembly

/// Full-image mask of the most prominent object (largest pixel area, ties to
/// the smaller layout index) inside the box; zero elsewhere.
inline GridF refine_box(const RenderedScene& scene, double x_min, double y_min, double x_max,
                        double y_max, double fg_threshold = 0.5) {
  GridF mask(scene.width, scene.height);
  if (x_min < 0 || y_min < 0 || x_max > scene.width || y_max > scene.height || x_min >= x_max ||
      y_min >= y_max)
    throw std::runtime_error("refine_box: box outside image bounds");
  const int px0 = std::max(0, static_cast<int>(std::floor(x_min)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y_min)));
  const int px1 = std::min(scene.width, static_cast<int>(std::ceil(x_max)));
  const int py1 = std::min(scene.height, static_cast<int>(std::ceil(y_max)));

  std::vector<int> area;
  for (int y = py0; y < py1; ++y)
    for (int x = px0; x < px1; ++x) {
      const int idx = scene.object_index.at(x, y);
      const double fg = idx >= 0 ? 1.0 : 0.0;  // rendered foreground channel is binary
      if (fg <= fg_threshold) continue;
      if (idx >= static_cast<int>(area.size())) area.resize(idx + 1, 0);
      ++area[idx];
    }
  int winner = -1;
  for (size_t i = 0; i < area.size(); ++i)
    if (area[i] > 0 && (winner < 0 || area[i] > area[winner])) winner = static_cast<int>(i);
  if (winner < 0) return mask;

  for (int y = py0; y < py1; ++y)
    for (int x = px0; x < px1; ++x)
      if (scene.object_index.at(x, y) == winner) mask.at(x, y) = 1.0;
  return mask;
}

inline std::vector<GridF> refine_all(const RenderedScene& scene,
                                     const std::vector<Proposal>& proposals,
                                     double fg_threshold = 0.5) {
  std::vector<GridF> masks;
  masks.reserve(proposals.size());
  for (const auto& p : proposals)
    masks.push_back(refine_box(scene, p.x_min, p.y_min, p.x_max, p.y_max, fg_threshold));
  return masks;
}

/// S(I, r) = clip(sum_b Align(b, r) * M_b, 0, 1).
inline GridF segment_reference(const std::vector<GridF>& box_masks, const AlignmentTable& table,
                               int reference) {
  if (static_cast<int>(box_masks.size()) != table.n_proposals)
    throw std::runtime_error("segment_reference: mask count does not match table");
  if (reference < 0 || reference >= table.n_references)
    throw std::runtime_error("segment_reference: reference index out of range");
  if (box_masks.empty()) throw std::runtime_error("segment_reference: no proposals");
  GridF out(box_masks[0].w, box_masks[0].h);
  for (int b = 0; b < table.n_proposals; ++b) {
    const double w = table.at(b, reference);
    if (w == 0.0) continue;
    for (size_t i = 0; i < out.cells.size(); ++i) out.cells[i] += w * box_masks[b].cells[i];
  }
  for (auto& v : out.cells) v = clampd(v, 0, 1);
  return out;
}

/// S(I) = pixelwise max over per-box masks; empty proposals give all zero.
inline GridF segment_all(const RenderedScene& scene, const std::vector<GridF>& box_masks) {
  GridF out(scene.width, scene.height);
  for (const auto& m : box_masks)
    for (size_t i = 0; i < out.cells.size(); ++i) out.cells[i] = std::max(out.cells[i], m.cells[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Trace records

struct MaskSummary {
  double max_value = 0;
  double centroid_x = 0, centroid_y = 0;  // mass-weighted, pixels
};

inline MaskSummary summarize_mask(const GridF& mask) {
  MaskSummary s;
  double mass = 0;
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      const double v = mask.at(x, y);
      s.max_value = std::max(s.max_value, v);
      mass += v;
      s.centroid_x += v * (x + 0.5);
      s.centroid_y += v * (y + 0.5);
    }
  if (mass > 0) {
    s.centroid_x /= mass;
    s.centroid_y /= mass;
  }
  return s;
}

inline nlohmann::json trace_record(const std::vector<Proposal>& proposals,
                                   const AlignmentTable& table,
                                   const std::vector<MaskSummary>& ref_summaries) {
  nlohmann::json props = nlohmann::json::array();
  for (const auto& p : proposals)
    props.push_back({{"box", {p.x_min, p.y_min, p.x_max, p.y_max}}, {"objectness", p.objectness}});
  nlohmann::json align = nlohmann::json::array();
  for (int b = 0; b < table.n_proposals; ++b) {
    nlohmann::json row = nlohmann::json::array();
    for (int r = 0; r < table.n_references; ++r) row.push_back(table.at(b, r));
    align.push_back(row);
  }
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& s : ref_summaries)
    refs.push_back({{"max", s.max_value}, {"centroid", {s.centroid_x, s.centroid_y}}});
  return {{"proposals", props}, {"align", align}, {"references", refs},
          {"underflow", table.underflow}};
}

}  // namespace groundnav::ground
