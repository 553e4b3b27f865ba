#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.
// Everything here recomputes expected values from scratch (closed forms,
// nested loops over the raw exemplar sets, central finite differences)
// rather than calling back into the functions being checked.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "groundnav/groundnav.hpp"

namespace oracles {

using groundnav::l2sq;

// --------------------------------------------------------------------------
// KDE closed forms

inline double kde_pdf_closed_form(const std::vector<std::vector<double>>& exemplars,
                                  const std::vector<double>& query, double sigma) {
  if (exemplars.empty()) throw std::runtime_error("oracle kde: no exemplars");
  const double dim = static_cast<double>(query.size());
  double s = 0;
  for (const auto& e : exemplars) s += std::exp(-l2sq(e, query) / (2.0 * sigma * sigma));
  return s / static_cast<double>(exemplars.size()) / std::pow(2.0 * M_PI * sigma * sigma, dim / 2.0);
}

/// Bayes posterior computed directly from the model's exemplar sets.
inline std::vector<double> kde_posterior_closed_form(const groundnav::metric::KdeModel& model,
                                                     const groundnav::db::ObjectDatabase& database,
                                                     const std::vector<double>& query) {
  std::vector<double> p(database.entries.size());
  double total = 0;
  for (size_t i = 0; i < database.entries.size(); ++i) {
    p[i] = kde_pdf_closed_form(model.exemplars.at(database.entries[i].id), query, model.sigma) *
           database.prior[i];
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

// --------------------------------------------------------------------------
// Alignment score brute force

/// A random small grounding problem: a noise image, random boxes and phrases,
/// and a database of random exemplar patches.
struct AlignInstance {
  groundnav::sim::RenderedScene scene;
  std::vector<groundnav::ground::Proposal> proposals;
  std::vector<groundnav::db::Phrase> references;
  groundnav::db::ObjectDatabase database;
  groundnav::db::WordVectorTable words;
  groundnav::metric::EmbeddingNet net;
  groundnav::metric::KdeModel kde_img, kde_txt;
};

inline AlignInstance make_align_instance(uint64_t seed, int max_objects = 3, int max_proposals = 3,
                                         int max_references = 3) {
  using namespace groundnav;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::vector<std::string> vocab = {"red",  "blue", "green", "box",
                                          "disk", "cone", "tall",  "small"};

  AlignInstance in;
  in.words = db::make_synthetic_word_table(vocab, 8, 17);

  auto random_patch = [&] {
    db::ImagePatch p;
    p.h = db::kPatchSize;
    p.w = db::kPatchSize;
    p.c = 3;
    p.data.resize(p.count());
    for (auto& v : p.data) v = static_cast<float>(unit(rng));
    return p;
  };
  auto random_phrase = [&] {
    db::Phrase ph;
    const int len = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < len; ++i) ph.push_back(vocab[rng() % vocab.size()]);
    return ph;
  };

  const int n_obj = 1 + static_cast<int>(rng() % max_objects);
  for (int i = 0; i < n_obj; ++i) {
    db::ObjectEntry e;
    e.id = "obj" + std::to_string(i);
    const int n_img = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < n_img; ++k) e.images.push_back(random_patch());
    const int n_phr = 1 + static_cast<int>(rng() % 2);
    for (int k = 0; k < n_phr; ++k) e.phrases.push_back(random_phrase());
    in.database.entries.push_back(std::move(e));
  }
  in.database.prior = db::uniform_prior(in.database.entries.size());

  in.net = metric::make_net(db::kPatchSize * db::kPatchSize * 3, 8, metric::kEmbedDim, rng());
  in.kde_img = metric::build_image_kde(in.database, in.net);
  in.kde_txt = metric::build_text_kde(in.database, in.words);

  in.scene.width = 64;
  in.scene.height = 48;
  in.scene.rgb.resize(static_cast<size_t>(in.scene.width) * in.scene.height * 3);
  for (auto& v : in.scene.rgb) v = static_cast<float>(unit(rng));
  in.scene.object_index = Grid<int>(in.scene.width, in.scene.height, -1);

  const int n_prop = 1 + static_cast<int>(rng() % max_proposals);
  for (int i = 0; i < n_prop; ++i) {
    ground::Proposal p;
    p.x_min = unit(rng) * (in.scene.width - 12);
    p.y_min = unit(rng) * (in.scene.height - 12);
    p.x_max = p.x_min + 4 + unit(rng) * (in.scene.width - p.x_min - 4);
    p.y_max = p.y_min + 4 + unit(rng) * (in.scene.height - p.y_min - 4);
    p.objectness = 0.05 + 0.95 * unit(rng);
    in.proposals.push_back(p);
  }
  const int n_ref = 1 + static_cast<int>(rng() % max_references);
  for (int i = 0; i < n_ref; ++i) in.references.push_back(random_phrase());
  return in;
}

/// Nested-loop Align(b,r) = sum_o P(o|b) P(b) P(o|r) / P(o) using only
/// closed-form kernel sums over the raw exemplar embeddings.
inline std::vector<std::vector<double>> brute_force_align(const AlignInstance& in) {
  using namespace groundnav;
  const size_t n_obj = in.database.entries.size();
  std::vector<std::vector<double>> post_box, post_ref;
  for (const auto& p : in.proposals) {
    const db::ImagePatch patch = sim::crop_patch(in.scene, p.x_min, p.y_min, p.x_max, p.y_max);
    post_box.push_back(
        kde_posterior_closed_form(in.kde_img, in.database, metric::embed(in.net, patch)));
  }
  for (const auto& r : in.references)
    post_ref.push_back(
        kde_posterior_closed_form(in.kde_txt, in.database, db::phrase_embedding(r, in.words).vec));

  std::vector<std::vector<double>> align(in.proposals.size(),
                                         std::vector<double>(in.references.size(), 0.0));
  const double inv_prior = static_cast<double>(n_obj);
  for (size_t b = 0; b < in.proposals.size(); ++b)
    for (size_t r = 0; r < in.references.size(); ++r) {
      double s = 0;
      for (size_t o = 0; o < n_obj; ++o) s += post_box[b][o] * post_ref[r][o];
      align[b][r] = s * in.proposals[b].objectness * inv_prior;
    }
  return align;
}

// --------------------------------------------------------------------------
// Triplet-loss gradient check

struct GradCheck {
  double max_rel_err = 0;
  int resamples = 0;
};

/// Central finite differences over every net parameter, resampling the
/// problem whenever a hinge term or a relu preactivation sits close enough
/// to its kink for the difference quotient to straddle it.
inline GradCheck fd_gradient_check(uint64_t seed, double h = 1e-4, double kink_margin = 1e-3) {
  using namespace groundnav;
  GradCheck result;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < 100; ++attempt) {
    const int in_dim = 12;  // 2x2x3 patches
    metric::EmbeddingNet net = metric::make_net(in_dim, 6, 4, rng());

    auto random_patch = [&] {
      db::ImagePatch p;
      p.h = 2;
      p.w = 2;
      p.c = 3;
      p.data.resize(p.count());
      for (auto& v : p.data) v = static_cast<float>(2.0 * unit(rng) - 1.0);
      return p;
    };
    metric::TripletBatch batch;
    batch.anchor = random_patch();
    batch.positives = {random_patch(), random_patch()};
    batch.negatives = {random_patch(), random_patch()};

    metric::detail::NetGrad grad(net);
    const metric::TripletEval ev = metric::triplet_loss_grad(net, batch, grad);

    bool near_kink = std::abs(ev.s_pos - batch.margin_far) < kink_margin ||
                     std::abs(ev.s_neg - batch.margin_far) < kink_margin ||
                     std::abs(ev.s_pos - ev.s_neg + batch.margin_near) < kink_margin;
    // min-over-set switches and relu kinks are just as hostile to central
    // differences as the hinge terms
    auto set_gap = [&](const std::vector<db::ImagePatch>& set) {
      const auto a = metric::embed(net, batch.anchor);
      double d0 = l2sq(a, metric::embed(net, set[0]));
      double d1 = l2sq(a, metric::embed(net, set[1]));
      return std::abs(d0 - d1);
    };
    near_kink = near_kink || set_gap(batch.positives) < kink_margin ||
                set_gap(batch.negatives) < kink_margin;
    auto check_preacts = [&](const db::ImagePatch& p) {
      const metric::detail::ForwardCache c = metric::detail::forward(net, p);
      for (double v : c.pre1)
        if (std::abs(v) < kink_margin) return true;
      return false;
    };
    near_kink = near_kink || check_preacts(batch.anchor);
    for (const auto& p : batch.positives) near_kink = near_kink || check_preacts(p);
    for (const auto& p : batch.negatives) near_kink = near_kink || check_preacts(p);
    if (near_kink) {
      ++result.resamples;
      continue;
    }

    for (size_t i = 0; i < net.param_count(); ++i) {
      const double saved = *net.param(i);
      *net.param(i) = saved + h;
      const double up = metric::triplet_loss(net, batch);
      *net.param(i) = saved - h;
      const double down = metric::triplet_loss(net, batch);
      *net.param(i) = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = *grad.param(i);
      // the floor absorbs difference-quotient roundoff (~eps * |loss| / h)
      // on parameters whose true gradient is zero
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - an) / denom);
    }
    return result;
  }
  throw std::runtime_error("fd_gradient_check: could not sample a kink-free instance");
}

// --------------------------------------------------------------------------
// Misc

inline double binomial_3sigma(double p, int trials) {
  return 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

}  // namespace oracles
