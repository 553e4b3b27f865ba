#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/exemplar_db.hpp"
#include "groundnav/embed_metric.hpp"
#include "groundnav/geo_mapping.hpp"
#include "groundnav/grounding.hpp"
#include "groundnav/instruction.hpp"
#include "groundnav/policy.hpp"
#include "groundnav/sim_env.hpp"

namespace groundnav::eval {

constexpr int kResamplePoints = 64;
constexpr double kSuccessRadius = 0.47;  // 10% of the environment edge

using policy::Traj;

// ---------------------------------------------------------------------------
// Trajectory metrics

inline double path_length(const Traj& t) {
  double len = 0;
  for (size_t i = 1; i < t.size(); ++i)
    len += std::hypot(t[i][0] - t[i - 1][0], t[i][1] - t[i - 1][1]);
  return len;
}

/// K points at uniform arc length, endpoints included. A zero-length input
/// degenerates to K copies of its single position.
inline Traj resample_arclength(const Traj& traj, int k = kResamplePoints) {
  if (traj.empty()) throw std::runtime_error("resample_arclength: empty trajectory");
  if (k < 2) throw std::runtime_error("resample_arclength: need at least two points");
  const double total = path_length(traj);
  Traj out;
  out.reserve(static_cast<size_t>(k));
  if (total <= 0) {
    out.assign(static_cast<size_t>(k), traj.front());
    return out;
  }
  size_t seg = 0;
  double seg_start = 0;
  double seg_len = 0;
  auto advance_to = [&](double s) -> std::array<double, 2> {
    while (seg + 1 < traj.size()) {
      seg_len = std::hypot(traj[seg + 1][0] - traj[seg][0], traj[seg + 1][1] - traj[seg][1]);
      if (seg_start + seg_len >= s || seg + 2 == traj.size()) break;
      seg_start += seg_len;
      ++seg;
    }
    if (seg_len <= 0) return traj[seg];
    const double t = clampd((s - seg_start) / seg_len, 0, 1);
    return {traj[seg][0] + t * (traj[seg + 1][0] - traj[seg][0]),
            traj[seg][1] + t * (traj[seg + 1][1] - traj[seg][1])};
  };
  for (int i = 0; i < k; ++i) out.push_back(advance_to(total * i / (k - 1)));
  return out;
}

/// Exact minimum-cost perfect matching on a square cost matrix
/// (Kuhn-Munkres with potentials, O(n^3)). Returns row -> column.
inline std::vector<int> hungarian_assign(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  if (n == 0) throw std::runtime_error("hungarian_assign: empty cost matrix");
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != n)
      throw std::runtime_error("hungarian_assign: cost matrix must be square");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> rowsol(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j]) rowsol[p[j] - 1] = j - 1;
  return rowsol;
}

/// Earth mover's distance between two trajectories: resample each to K
/// arc-length-uniform points, match them exactly, report the mean matched
/// distance in meters.
inline double emd(const Traj& a, const Traj& b, int k = kResamplePoints) {
  const Traj ra = resample_arclength(a, k), rb = resample_arclength(b, k);
  std::vector<std::vector<double>> cost(static_cast<size_t>(k),
                                        std::vector<double>(static_cast<size_t>(k)));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      cost[i][j] = std::hypot(ra[i][0] - rb[j][0], ra[i][1] - rb[j][1]);
  const std::vector<int> match = hungarian_assign(cost);
  double total = 0;
  for (int i = 0; i < k; ++i) total += cost[i][match[i]];
  return total / k;
}

inline double success_rate(const std::vector<double>& stop_distances,
                           double threshold = kSuccessRadius) {
  if (stop_distances.empty()) throw std::runtime_error("success_rate: no episodes");
  int hits = 0;
  for (double d : stop_distances)
    if (d <= threshold) ++hits;
  return static_cast<double>(hits) / static_cast<double>(stop_distances.size());
}

// ---------------------------------------------------------------------------
// Episodes

struct EpisodeResult {
  bool success = false;
  double emd = 0;            // meters vs. the demonstration
  double stop_distance = 0;  // meters from the demonstration endpoint
  int steps = 0;
  double intrinsic = 0;  // intrinsic return of the rollout
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

struct EpisodeRecord {
  EpisodeResult result;
  policy::RolloutTrace trace;
  Traj demo;
};

inline Traj straight_demo(double x0, double y0, double x1, double y1, double step = 0.05) {
  Traj demo;
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    demo.push_back({x0 + t * (x1 - x0), y0 + t * (y1 - y0)});
  }
  return demo;
}

struct OracleConfig {
  double wall_margin = 0.5;
  double min_span = 0.8;  // minimum start-to-goal distance
  double demo_step = 0.05;
  double success_threshold = kSuccessRadius;
  policy::GoldConfig gold;
  policy::ControllerConfig ctrl;
  sim::SimConfig sim;
  int max_steps = 400;
};

/// Closure probe: drive the controller on gold distributions of a random
/// straight demonstration and measure how close to its endpoint we stop.
inline EpisodeRecord run_oracle_episode(uint64_t seed, const OracleConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> place(cfg.wall_margin, geo::kEnvEdge - cfg.wall_margin);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  double x0, y0, x1, y1;
  do {
    x0 = place(rng);
    y0 = place(rng);
    x1 = place(rng);
    y1 = place(rng);
  } while (std::hypot(x1 - x0, y1 - y0) < cfg.min_span);

  EpisodeRecord rec;
  rec.demo = straight_demo(x0, y0, x1, y1, cfg.demo_step);
  const policy::VisitationDistributions gold = policy::gold_distributions(rec.demo, cfg.gold);

  sim::AgentState start;
  start.x = x0;
  start.y = y0;
  start.yaw = angle(rng);
  const policy::RolloutResult roll =
      policy::run_rollout(start, gold, cfg.ctrl, cfg.sim, cfg.max_steps);
  rec.trace = roll.trace;

  rec.result.seed = seed;
  rec.result.steps = static_cast<int>(roll.trace.steps.size());
  rec.result.stop_distance =
      std::hypot(roll.final_state.x - x1, roll.final_state.y - y1);
  rec.result.success = rec.result.stop_distance <= cfg.success_threshold;
  rec.result.emd = emd(policy::trace_positions(roll.trace), rec.demo);
  rec.result.intrinsic = policy::intrinsic_return(roll.trace, gold).total;
  return rec;
}

// ---------------------------------------------------------------------------
// Full pipeline episodes

/// Everything the language-conditioned pipeline needs at inference time.
struct PipelineContext {
  std::vector<sim::ObjectType> train_pool;  // embedder training classes
  std::vector<sim::ObjectType> eval_pool;   // held-out classes in the database
  metric::EmbeddingNet net;
  db::ObjectDatabase database;
  metric::KdeModel kde_img, kde_txt;
  db::WordVectorTable words;
  lang::Lexicon lexicon;
  lang::ObjRefClassifier objref;
};

/// Synthetic word vectors covering the lexicon plus every palette color and
/// shape name.
inline db::WordVectorTable default_word_table(int dim = 50) {
  std::set<std::string> vocab;
  const lang::Lexicon lex = lang::builtin_lexicon();
  for (const auto& [tok, tags] : lex.tags) vocab.insert(tok);
  for (const auto& [name, rgb] : sim::color_palette()) vocab.insert(name);
  vocab.insert("disk");
  vocab.insert("box");
  vocab.insert("cone");
  return db::make_synthetic_word_table(
      std::vector<std::string>(vocab.begin(), vocab.end()), dim);
}

/// Train an embedder on `train` classes, then build the exemplar database
/// and KDE models from held-out `eval` classes. Mirrors few-shot transfer:
/// the metric is learned once, new objects enter via exemplars only.
inline PipelineContext make_pipeline_context(uint64_t seed, int pool_size = 24,
                                             int held_out = 8, int train_frames = 120,
                                             int eval_frames = 30, int embed_epochs = 6) {
  if (held_out <= 0 || held_out >= pool_size)
    throw std::runtime_error("make_pipeline_context: held_out must be in (0, pool_size)");
  PipelineContext ctx;
  const std::vector<sim::ObjectType> pool = sim::make_object_pool(pool_size, seed);
  ctx.train_pool.assign(pool.begin(), pool.end() - held_out);
  ctx.eval_pool.assign(pool.end() - held_out, pool.end());

  const sim::ArDataset train_ds = sim::gen_ar_dataset(ctx.train_pool, train_frames, seed ^ 0xa5a5a5a5ULL);
  std::vector<db::ImagePatch> patch_pool;
  patch_pool.reserve(train_ds.patches.size());
  for (const auto& p : train_ds.patches) patch_pool.push_back(p.patch);
  metric::TrainConfig tcfg;
  tcfg.epochs = embed_epochs;
  tcfg.seed = seed;
  ctx.net = metric::train_embedder(patch_pool, train_ds.triplets, tcfg).net;

  const sim::ArDataset eval_ds = sim::gen_ar_dataset(ctx.eval_pool, eval_frames, seed ^ 0x5a5a5a5aULL);
  ctx.database = sim::build_database(ctx.eval_pool, eval_ds.patches);
  ctx.words = default_word_table();
  ctx.kde_img = metric::build_image_kde(ctx.database, ctx.net);
  ctx.kde_txt = metric::build_text_kde(ctx.database, ctx.words);
  ctx.lexicon = lang::builtin_lexicon();
  ctx.objref = lang::make_zero_objref(ctx.words.dim);
  return ctx;
}

struct PipelineConfig {
  double proposal_jitter = 0;
  int false_positives = 0;
  int layout_objects = 6;
  double min_start_dist = 0.9;
  double max_start_dist = 2.2;
  double wall_margin = 0.35;
  double demo_step = 0.05;
  double success_threshold = kSuccessRadius;
  policy::PredictorConfig predictor;
  policy::ControllerConfig ctrl;
  sim::SimConfig sim;
  int max_steps = 400;
};

/// Scene setup plus one language + perception pass from the start pose.
struct GroundingPass {
  sim::Layout layout;
  sim::AgentState start;
  int target_index = -1;  // layout index of the scripted target
  std::string instruction;
  lang::ReferenceSet refset;
  lang::ContextEncoding enc;
  sim::RenderedScene scene;
  std::vector<ground::Proposal> proposals;
  bool aligned = false;  // table/ref_segs valid
  ground::AlignmentTable table;
  std::vector<GridF> ref_segs;  // image-space mask per reference
  geo::ContextMap cmap;
  GridF obs{geo::kMapSize, geo::kMapSize};
};

/// Spawn a held-out layout, aim the agent at a database object, script a
/// "go to the <color> <shape>" instruction for it, and ground the
/// instruction into the allocentric context map.
inline GroundingPass run_grounding(const PipelineContext& ctx, uint64_t seed,
                                   const PipelineConfig& cfg = {}) {
  GroundingPass g;
  std::mt19937_64 rng(seed);
  sim::LayoutConfig lcfg;
  lcfg.forced_count = cfg.layout_objects;
  lcfg.no_repeat = true;
  g.layout = sim::generate_layout(ctx.eval_pool, rng(), lcfg);

  std::vector<int> in_db;
  for (size_t i = 0; i < g.layout.objects.size(); ++i)
    if (ctx.database.index_of(g.layout.objects[i].type.id) >= 0)
      in_db.push_back(static_cast<int>(i));
  if (in_db.empty()) throw std::runtime_error("run_grounding: no database object in layout");
  g.target_index = in_db[std::uniform_int_distribution<size_t>(0, in_db.size() - 1)(rng)];
  const sim::PlacedObject& target = g.layout.objects[static_cast<size_t>(g.target_index)];

  std::uniform_real_distribution<double> radius(cfg.min_start_dist, cfg.max_start_dist);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  bool placed = false;
  for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
    const double a = angle(rng), r = radius(rng);
    g.start.x = target.x + r * std::cos(a);
    g.start.y = target.y + r * std::sin(a);
    if (g.start.x > cfg.wall_margin && g.start.x < geo::kEnvEdge - cfg.wall_margin &&
        g.start.y > cfg.wall_margin && g.start.y < geo::kEnvEdge - cfg.wall_margin)
      placed = true;
  }
  if (!placed) throw std::runtime_error("run_grounding: could not place the agent");
  g.start.yaw = std::atan2(target.y - g.start.y, target.x - g.start.x);

  g.instruction =
      "go to the " + target.type.color_name + " " + sim::shape_name(target.type.shape);
  const std::vector<std::string> tokens = lang::tokenize(g.instruction);
  std::vector<lang::NounChunk> refs;
  for (const auto& c : lang::chunk(tokens, ctx.lexicon))
    if (lang::classify_reference(c, ctx.objref, ctx.database, ctx.words)) refs.push_back(c);
  g.refset = lang::anonymize(tokens, refs);
  g.enc = lang::encode_context(g.refset, ctx.words);

  const geo::Camera cam = geo::make_camera();
  const geo::Pose pose = sim::agent_camera_pose(g.start);
  g.scene = sim::render(g.layout, pose, cam, 0);

  if (!refs.empty()) {
    ground::ProposalConfig pcfg;
    pcfg.jitter = cfg.proposal_jitter;
    pcfg.false_positives = cfg.false_positives;
    g.proposals = ground::propose_regions(g.scene, pcfg, rng());
    if (!g.proposals.empty()) {
      std::vector<db::Phrase> ref_phrases;
      for (const auto& r : g.refset.references) ref_phrases.push_back(r.tokens);
      g.table = ground::align_score(g.scene, g.proposals, ref_phrases, ctx.database, ctx.net,
                                    ctx.words, ctx.kde_img, ctx.kde_txt);
      g.aligned = true;
      const std::vector<GridF> box_masks = ground::refine_all(g.scene, g.proposals);
      std::vector<GridF> map_masks;
      for (int r = 0; r < g.table.n_references; ++r) {
        g.ref_segs.push_back(ground::segment_reference(box_masks, g.table, r));
        map_masks.push_back(geo::project_mask(g.ref_segs.back(), pose, cam));
      }
      const GridF all_objects = geo::project_mask(sim::foreground_grid(g.scene), pose, cam);
      g.cmap = geo::build_context_map(map_masks, g.enc.psi, all_objects);
    }
  }
  g.obs = geo::observability_update(g.obs, pose, cam);
  return g;
}

/// One scripted instruction-following episode: ground the instruction once
/// from the start pose, then follow the predicted distributions to a stop.
inline EpisodeRecord run_pipeline_episode(const PipelineContext& ctx, uint64_t seed,
                                          const PipelineConfig& cfg = {}) {
  const GroundingPass g = run_grounding(ctx, seed, cfg);
  const sim::PlacedObject& target = g.layout.objects[static_cast<size_t>(g.target_index)];

  const policy::VisitationDistributions dists =
      policy::heuristic_predictor(g.cmap, g.obs, g.enc.psi, g.refset.u_hat, g.start.x, g.start.y,
                                  g.start.yaw, cfg.predictor);
  const geo::Camera cam = geo::make_camera();
  const policy::RolloutResult roll =
      policy::run_rollout(g.start, dists, cfg.ctrl, cfg.sim, cfg.max_steps, &cam);

  EpisodeRecord rec;
  rec.demo = straight_demo(g.start.x, g.start.y, target.x, target.y, cfg.demo_step);
  rec.trace = roll.trace;
  rec.result.seed = seed;
  rec.result.steps = static_cast<int>(roll.trace.steps.size());
  rec.result.stop_distance =
      std::hypot(roll.final_state.x - target.x, roll.final_state.y - target.y);
  rec.result.success = rec.result.stop_distance <= cfg.success_threshold;
  rec.result.emd = emd(policy::trace_positions(roll.trace), rec.demo);
  rec.result.intrinsic = policy::intrinsic_return(roll.trace, dists).total;
  return rec;
}

// ---------------------------------------------------------------------------
// Experiment orchestration

struct ExperimentConfig {
  std::string predictor = "oracle";  // "oracle" or "pipeline"
  int episodes = 20;
  uint64_t seed = 1;
  double success_threshold = kSuccessRadius;
  double proposal_jitter = 0;
  int false_positives = 0;
  int pool_size = 24;
  int held_out = 8;
  int train_frames = 120;
  int eval_frames = 30;
  int embed_epochs = 6;
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return nlohmann::json{{"predictor", c.predictor},
                        {"episodes", c.episodes},
                        {"seed", c.seed},
                        {"success_threshold", c.success_threshold},
                        {"proposal_jitter", c.proposal_jitter},
                        {"false_positives", c.false_positives},
                        {"pool_size", c.pool_size},
                        {"held_out", c.held_out},
                        {"train_frames", c.train_frames},
                        {"eval_frames", c.eval_frames},
                        {"embed_epochs", c.embed_epochs}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.predictor = j.value("predictor", c.predictor);
  if (c.predictor != "oracle" && c.predictor != "pipeline")
    throw std::runtime_error("experiment config: predictor must be 'oracle' or 'pipeline'");
  c.episodes = j.value("episodes", c.episodes);
  if (c.episodes <= 0) throw std::runtime_error("experiment config: episodes must be positive");
  c.seed = j.value("seed", c.seed);
  c.success_threshold = j.value("success_threshold", c.success_threshold);
  c.proposal_jitter = j.value("proposal_jitter", c.proposal_jitter);
  c.false_positives = j.value("false_positives", c.false_positives);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.held_out = j.value("held_out", c.held_out);
  c.train_frames = j.value("train_frames", c.train_frames);
  c.eval_frames = j.value("eval_frames", c.eval_frames);
  c.embed_epochs = j.value("embed_epochs", c.embed_epochs);
  return c;
}

struct ExperimentSummary {
  int episodes = 0;
  double success_rate = 0;
  double mean_emd = 0;
  double mean_stop_distance = 0;
  double mean_steps = 0;
  double mean_intrinsic = 0;
  uint64_t config_hash = 0;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline void write_trajectory_svg(const std::vector<EpisodeRecord>& eps, const std::string& path,
                                 size_t max_shown = 20) {
  const double scale = 100;  // 1 m = 100 px
  const double side = geo::kEnvEdge * scale;
  auto px = [&](double x) { return fmt(x * scale); };
  auto py = [&](double y) { return fmt(side - y * scale); };  // world y up, SVG y down

  static const char* kColors[] = {"#1b6ca8", "#c23b22", "#2e8540", "#8640b0",
                                  "#b07d2b", "#147f7f", "#5c5c9e", "#9e3d63"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << fmt(side) << " "
      << fmt(side) << "\">\n";
  out << "<rect width=\"" << fmt(side) << "\" height=\"" << fmt(side)
      << "\" fill=\"#fafaf7\" stroke=\"#444\"/>\n";
  for (size_t e = 0; e < eps.size() && e < max_shown; ++e) {
    const char* color = kColors[e % (sizeof kColors / sizeof kColors[0])];
    out << "<polyline fill=\"none\" stroke=\"#999\" stroke-dasharray=\"4 3\" points=\"";
    for (const auto& p : eps[e].demo) out << px(p[0]) << "," << py(p[1]) << " ";
    out << "\"/>\n";
    const Traj t = policy::trace_positions(eps[e].trace);
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : t) out << px(p[0]) << "," << py(p[1]) << " ";
    out << "\"/>\n";
    if (!t.empty())
      out << "<circle cx=\"" << px(t.back()[0]) << "\" cy=\"" << py(t.back()[1])
          << "\" r=\"4\" fill=\"" << color << "\"/>\n";
    if (!eps[e].demo.empty())
      out << "<circle cx=\"" << px(eps[e].demo.back()[0]) << "\" cy=\""
          << py(eps[e].demo.back()[1]) << "\" r=\"" << fmt(kSuccessRadius * scale)
          << "\" fill=\"none\" stroke=\"#999\" stroke-dasharray=\"2 2\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace detail

inline nlohmann::json episode_result_to_json(const EpisodeResult& r) {
  return nlohmann::json{{"seed", r.seed},
                        {"success", r.success},
                        {"emd", r.emd},
                        {"stop_distance", r.stop_distance},
                        {"steps", r.steps},
                        {"intrinsic_return", r.intrinsic},
                        {"config_hash", r.config_hash}};
}

/// Run the configured episodes and emit results.jsonl (sorted by seed),
/// summary.csv, and trajectories.svg into `out_dir`.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  const uint64_t config_hash = fnv1a64(experiment_config_to_json(cfg).dump());
  PipelineContext ctx;
  if (cfg.predictor == "pipeline")
    ctx = make_pipeline_context(cfg.seed, cfg.pool_size, cfg.held_out, cfg.train_frames,
                                cfg.eval_frames, cfg.embed_epochs);

  std::vector<EpisodeRecord> records;
  for (int i = 0; i < cfg.episodes; ++i) {
    const uint64_t ep_seed = cfg.seed + static_cast<uint64_t>(i);
    EpisodeRecord rec;
    if (cfg.predictor == "oracle") {
      OracleConfig ocfg;
      ocfg.success_threshold = cfg.success_threshold;
      rec = run_oracle_episode(ep_seed, ocfg);
    } else {
      PipelineConfig pcfg;
      pcfg.success_threshold = cfg.success_threshold;
      pcfg.proposal_jitter = cfg.proposal_jitter;
      pcfg.false_positives = cfg.false_positives;
      rec = run_pipeline_episode(ctx, ep_seed, pcfg);
    }
    rec.result.config_hash = config_hash;
    records.push_back(std::move(rec));
  }
  std::sort(records.begin(), records.end(),
            [](const EpisodeRecord& a, const EpisodeRecord& b) {
              return a.result.seed < b.result.seed;
            });

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/results.jsonl");
    if (!out) throw std::runtime_error("cannot write " + out_dir + "/results.jsonl");
    for (const auto& r : records) out << episode_result_to_json(r.result).dump() << "\n";
  }

  ExperimentSummary sum;
  sum.episodes = static_cast<int>(records.size());
  sum.config_hash = config_hash;
  std::vector<double> stops;
  for (const auto& r : records) {
    stops.push_back(r.result.stop_distance);
    sum.mean_emd += r.result.emd;
    sum.mean_stop_distance += r.result.stop_distance;
    sum.mean_steps += r.result.steps;
    sum.mean_intrinsic += r.result.intrinsic;
  }
  sum.mean_emd /= sum.episodes;
  sum.mean_stop_distance /= sum.episodes;
  sum.mean_steps /= sum.episodes;
  sum.mean_intrinsic /= sum.episodes;
  sum.success_rate = success_rate(stops, cfg.success_threshold);

  {
    std::ofstream out(out_dir + "/summary.csv");
    if (!out) throw std::runtime_error("cannot write " + out_dir + "/summary.csv");
    out << "metric,value\n";
    out << "episodes," << sum.episodes << "\n";
    out << "success_rate," << nlohmann::json(sum.success_rate).dump() << "\n";
    out << "mean_emd," << nlohmann::json(sum.mean_emd).dump() << "\n";
    out << "mean_stop_distance," << nlohmann::json(sum.mean_stop_distance).dump() << "\n";
    out << "mean_steps," << nlohmann::json(sum.mean_steps).dump() << "\n";
    out << "mean_intrinsic_return," << nlohmann::json(sum.mean_intrinsic).dump() << "\n";
    out << "config_hash," << config_hash << "\n";
  }
  detail::write_trajectory_svg(records, out_dir + "/trajectories.svg");
  return sum;
}

// ---------------------------------------------------------------------------
// Rollout trace serialization

inline void write_rollout_jsonl(const policy::RolloutTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << nlohmann::json{{"start",
                         {{"x", trace.start_x}, {"y", trace.start_y}, {"yaw", trace.start_yaw}}}}
             .dump()
      << "\n";
  for (const auto& s : trace.steps)
    out << nlohmann::json{{"x", s.x},
                          {"y", s.y},
                          {"yaw", s.yaw},
                          {"v", s.v_cmd},
                          {"omega", s.omega_cmd},
                          {"clamped", s.clamped},
                          {"stop", s.stop},
                          {"new_observed_fraction", s.new_observed_fraction}}
               .dump()
        << "\n";
}

// ---------------------------------------------------------------------------
// Report

/// Summarize an experiment directory (results.jsonl + summary.csv) into a
/// markdown report next to the metrics it cites.
inline void write_report(const std::string& exp_dir, const std::string& out_path) {
  std::ifstream in(exp_dir + "/results.jsonl");
  if (!in) throw std::runtime_error("cannot read " + exp_dir + "/results.jsonl");
  std::vector<EpisodeResult> results;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    EpisodeResult r;
    r.seed = j.at("seed").get<uint64_t>();
    r.success = j.at("success").get<bool>();
    r.emd = j.at("emd").get<double>();
    r.stop_distance = j.at("stop_distance").get<double>();
    r.steps = j.at("steps").get<int>();
    r.intrinsic = j.at("intrinsic_return").get<double>();
    r.config_hash = j.at("config_hash").get<uint64_t>();
    results.push_back(r);
  }
  if (results.empty()) throw std::runtime_error("report: no episodes in " + exp_dir);

  std::vector<double> stops;
  double mean_emd = 0, mean_steps = 0;
  for (const auto& r : results) {
    stops.push_back(r.stop_distance);
    mean_emd += r.emd;
    mean_steps += r.steps;
  }
  mean_emd /= results.size();
  mean_steps /= results.size();
  const double sr = success_rate(stops);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write " + out_path);
  out << "# Experiment report\n\n";
  out << "Config hash: `" << results.front().config_hash << "`\n\n";
  out << "| metric | value |\n|---|---|\n";
  out << "| episodes | " << results.size() << " |\n";
  out << "| success rate (stop within " << detail::fmt(kSuccessRadius) << " m) | "
      << detail::fmt(sr) << " |\n";
  out << "| mean EMD (m) | " << detail::fmt(mean_emd) << " |\n";
  out << "| mean steps | " << detail::fmt(mean_steps) << " |\n\n";
  out << "Trajectory overlays: `trajectories.svg` (demonstrations dashed, rollouts solid, "
         "stop tolerance circled).\n\n";
  out << "Automated metrics only; human preference scores would attach here if collected.\n";
}

/// Render a saved context-map snapshot as three grayscale panels: context
/// channel magnitude, the all-objects channel, and observability. Darker
/// cells carry more mass; world y points up.
inline void write_map_svg(const geo::MapSnapshot& snap, const std::string& path) {
  const int cell = 6, gap = 14, label_h = 16;
  const int side = geo::kMapSize * cell;

  GridF ctx_mag(geo::kMapSize, geo::kMapSize);
  double ctx_max = 0;
  for (int y = 0; y < geo::kMapSize; ++y)
    for (int x = 0; x < geo::kMapSize; ++x) {
      double s = 0;
      for (int c = 0; c < geo::kContextDim; ++c) {
        const double v = snap.map.chan[c].at(x, y);
        s += v * v;
      }
      ctx_mag.at(x, y) = std::sqrt(s);
      ctx_max = std::max(ctx_max, ctx_mag.at(x, y));
    }
  if (ctx_max > 0)
    for (auto& v : ctx_mag.cells) v /= ctx_max;

  const std::array<std::pair<const GridF*, const char*>, 3> panels = {
      {{&ctx_mag, "context"},
       {&snap.map.all_objects(), "all objects"},
       {&snap.observability, "observability"}}};

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 3 * side + 2 * gap
      << "\" height=\"" << side + label_h << "\">\n";
  for (size_t p = 0; p < panels.size(); ++p) {
    const int x0 = static_cast<int>(p) * (side + gap);
    out << "<rect x=\"" << x0 << "\" width=\"" << side << "\" height=\"" << side
        << "\" fill=\"#ffffff\" stroke=\"#444\"/>\n";
    for (int y = 0; y < geo::kMapSize; ++y)
      for (int x = 0; x < geo::kMapSize; ++x) {
        const double v = clampd(panels[p].first->at(x, y), 0, 1);
        if (v <= 0) continue;
        const int shade = 250 - static_cast<int>(std::lround(230 * v));
        out << "<rect x=\"" << x0 + x * cell << "\" y=\"" << side - (y + 1) * cell
            << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << shade
            << "," << shade << "," << shade << ")\"/>\n";
      }
    out << "<text x=\"" << x0 << "\" y=\"" << side + label_h - 4
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << panels[p].second
        << " (t=" << snap.timestep << ")</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace groundnav::eval
