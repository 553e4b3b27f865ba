#pragma once

#include <array>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "groundnav/common.hpp"
#include "groundnav/geo_mapping.hpp"
#include "groundnav/sim_env.hpp"

namespace groundnav::policy {

constexpr int kVisGrid = 64;  // visitation distribution resolution
constexpr double kStopRadius = 0.47;

using Traj = std::vector<std::array<double, 2>>;

/// Predicted visitation (d^p) and stop (d^g) fields over the environment,
/// each with a scalar out-of-bounds mass for unobserved space.
struct VisitationDistributions {
  GridF d_p{kVisGrid, kVisGrid};
  double oob_p = 0;
  GridF d_g{kVisGrid, kVisGrid};
  double oob_g = 0;
};

inline void validate_distribution(const GridF& grid, double oob, const char* name) {
  if (grid.w != kVisGrid || grid.h != kVisGrid)
    throw std::runtime_error(std::string(name) + ": grid must be 64x64");
  if (oob < 0) throw std::runtime_error(std::string(name) + ": negative out-of-bounds mass");
  double s = oob;
  for (double v : grid.cells) {
    if (v < 0) throw std::runtime_error(std::string(name) + ": negative probability");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6)
    throw std::runtime_error(std::string(name) + ": mass sums to " + std::to_string(s));
}

inline void validate(const VisitationDistributions& d) {
  validate_distribution(d.d_p, d.oob_p, "d_p");
  validate_distribution(d.d_g, d.oob_g, "d_g");
}

namespace detail {

inline GridF gaussian_blur(const GridF& in, double sigma) {
  if (sigma <= 0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  for (int k = -radius; k <= radius; ++k) kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
  GridF tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0, wsum = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= in.w) continue;
        s += kernel[k + radius] * in.at(xx, y);
        wsum += kernel[k + radius];
      }
      tmp.at(x, y) = wsum > 0 ? s / wsum : 0;
    }
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double s = 0, wsum = 0;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= in.h) continue;
        s += kernel[k + radius] * tmp.at(x, yy);
        wsum += kernel[k + radius];
      }
      out.at(x, y) = wsum > 0 ? s / wsum : 0;
    }
  return out;
}

/// Scale the grid so its total mass is `mass` (no-op on an all-zero grid).
inline void normalize_to(GridF& g, double mass) {
  const double s = g.sum();
  if (s <= 0) return;
  for (auto& v : g.cells) v *= mass / s;
}

inline int vis_cell(double x) { return geo::cell_index(x, kVisGrid); }
inline double vis_center(int i) { return geo::cell_center(i, kVisGrid); }

/// Mark every visitation cell touched by the polyline, interpolating at
/// half-cell resolution.
inline GridF rasterize_path(const Traj& path) {
  GridF occ(kVisGrid, kVisGrid);
  const double step = geo::cell_size(kVisGrid) / 2;
  for (size_t i = 0; i < path.size(); ++i) {
    occ.at(vis_cell(path[i][0]), vis_cell(path[i][1])) = 1.0;
    if (i + 1 < path.size()) {
      const double dx = path[i + 1][0] - path[i][0], dy = path[i + 1][1] - path[i][1];
      const double len = std::hypot(dx, dy);
      const int n = static_cast<int>(std::floor(len / step));
      for (int k = 1; k <= n; ++k) {
        const double t = k * step / len;
        occ.at(vis_cell(path[i][0] + t * dx), vis_cell(path[i][1] + t * dy)) = 1.0;
      }
    }
  }
  return occ;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gold distributions

struct GoldConfig {
  double sigma_p = 1.5;  // path smoothing, in visitation cells
  // Stop smoothing, in visitation cells. Wide enough that the controller's
  // half-mass stop rule fires ~0.35 m out instead of skimming the 0.47 m
  // success radius.
  double sigma_g = 4.0;
};

/// f*: smoothed occupancy of the demonstration for d^p and a Gaussian bump
/// at its stop cell for d^g. Demonstrations end in bounds, so p_oob = 0.
inline VisitationDistributions gold_distributions(const Traj& demo, const GoldConfig& cfg = {}) {
  if (demo.empty()) throw std::runtime_error("gold_distributions: empty demonstration");
  for (const auto& p : demo)
    if (!geo::in_env(p[0], p[1]))
      throw std::runtime_error("gold_distributions: demonstration leaves the environment");
  VisitationDistributions out;
  out.d_p = detail::gaussian_blur(detail::rasterize_path(demo), cfg.sigma_p);
  detail::normalize_to(out.d_p, 1.0);
  GridF stop(kVisGrid, kVisGrid);
  stop.at(detail::vis_cell(demo.back()[0]), detail::vis_cell(demo.back()[1])) = 1.0;
  out.d_g = detail::gaussian_blur(stop, cfg.sigma_g);
  detail::normalize_to(out.d_g, 1.0);
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// Heuristic visitation predictor

struct PredictorConfig {
  double sigma_p = 1.5;
  double sigma_g = 4.0;  // same stop-rule consideration as GoldConfig
  double side_offset = 0.5;      // left/right/front/behind displacement, meters
  double approach_offset = 0.4;  // pass/before shortfall and past overshoot
  double base_inset = 0.18;      // near-rim to footprint-center correction, meters
};

namespace detail {

struct KeywordEffect {
  bool side = false;
  double side_dx = 0, side_dy = 0;  // unit direction in the agent frame
  double along = 0;                 // stop short (<0) or run past (>0), meters
};

inline KeywordEffect scan_keywords(const std::vector<std::string>& u_hat, double yaw) {
  KeywordEffect e;
  bool have_along = false;
  for (const auto& tok : u_hat) {
    if (!e.side) {
      if (tok == "left") {
        e.side = true;
        e.side_dx = std::cos(yaw + M_PI / 2);
        e.side_dy = std::sin(yaw + M_PI / 2);
      } else if (tok == "right") {
        e.side = true;
        e.side_dx = std::cos(yaw - M_PI / 2);
        e.side_dy = std::sin(yaw - M_PI / 2);
      } else if (tok == "front") {
        e.side = true;
        e.side_dx = std::cos(yaw);
        e.side_dy = std::sin(yaw);
      } else if (tok == "behind") {
        e.side = true;
        e.side_dx = -std::cos(yaw);
        e.side_dy = -std::sin(yaw);
      }
    }
    if (!have_along) {
      if (tok == "pass" || tok == "before") {
        e.along = -1;
        have_along = true;
      } else if (tok == "past") {
        e.along = 1;
        have_along = true;
      } else if (tok == "toward" || tok == "towards") {
        e.along = 0;
        have_along = true;
      }
    }
  }
  return e;
}

/// Equal mass on every observed cell (upsampled from the 32x32 observability
/// grid), remainder on p_oob.
inline void uniform_over_observed(const GridF& observability, GridF* grid, double* oob) {
  const double coverage = geo::observed_fraction(observability);
  *grid = GridF(kVisGrid, kVisGrid);
  *oob = 1.0 - coverage;
  if (coverage <= 0) return;
  int observed_cells = 0;
  for (int y = 0; y < kVisGrid; ++y)
    for (int x = 0; x < kVisGrid; ++x)
      if (observability.at(x / 2, y / 2) > 0) ++observed_cells;
  const double per = coverage / observed_cells;
  for (int y = 0; y < kVisGrid; ++y)
    for (int x = 0; x < kVisGrid; ++x)
      if (observability.at(x / 2, y / 2) > 0) grid->at(x, y) = per;
}

}  // namespace detail

/// Stage-1 stand-in: ground the LAST mentioned reference by correlating its
/// context vector against the map's context channels, apply any spatial
/// keyword offset from the anonymized instruction, and emit a Gaussian stop
/// field plus a smoothed straight path from the agent.
inline VisitationDistributions heuristic_predictor(
    const geo::ContextMap& map, const GridF& observability,
    const std::vector<std::vector<double>>& ref_psis, const std::vector<std::string>& u_hat,
    double agent_x, double agent_y, double agent_yaw, const PredictorConfig& cfg = {}) {
  VisitationDistributions out;

  bool grounded = false;
  double goal_x = 0, goal_y = 0;
  if (!ref_psis.empty()) {
    const std::vector<double> psi = fit_dim(ref_psis.back(), geo::kContextDim);
    GridF score(geo::kMapSize, geo::kMapSize);
    double best = 0;
    for (int y = 0; y < geo::kMapSize; ++y)
      for (int x = 0; x < geo::kMapSize; ++x) {
        double s = 0;
        for (int c = 0; c < geo::kContextDim; ++c) s += psi[c] * map.chan[c].at(x, y);
        score.at(x, y) = s;
        best = std::max(best, s);
      }
    if (best > 0) {
      // Ground-plane projection smears an object's mask away from the
      // camera; the nearest high-scoring cell sits at the object's base.
      int best_x = -1, best_y = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int y = 0; y < geo::kMapSize; ++y)
        for (int x = 0; x < geo::kMapSize; ++x) {
          if (score.at(x, y) < 0.9 * best) continue;
          const double d =
              std::hypot(geo::cell_center(x) - agent_x, geo::cell_center(y) - agent_y);
          if (d < best_d) {
            best_d = d;
            best_x = x;
            best_y = y;
          }
        }
      grounded = true;
      goal_x = geo::cell_center(best_x);
      goal_y = geo::cell_center(best_y);
      // The nearest cell is the object's near rim; push the goal toward the
      // footprint center so the stop fires near it rather than short of it.
      const double dx = goal_x - agent_x, dy = goal_y - agent_y;
      const double len = std::hypot(dx, dy);
      if (len > 1e-9) {
        goal_x += cfg.base_inset * dx / len;
        goal_y += cfg.base_inset * dy / len;
      }
    }
  }

  if (!grounded) {
    detail::uniform_over_observed(observability, &out.d_g, &out.oob_g);
    detail::uniform_over_observed(observability, &out.d_p, &out.oob_p);
    validate(out);
    return out;
  }

  const detail::KeywordEffect kw = detail::scan_keywords(u_hat, agent_yaw);
  if (kw.side) {
    goal_x += cfg.side_offset * kw.side_dx;
    goal_y += cfg.side_offset * kw.side_dy;
  }
  if (kw.along != 0) {
    const double dx = goal_x - agent_x, dy = goal_y - agent_y;
    const double len = std::hypot(dx, dy);
    if (len > 1e-9) {
      goal_x += kw.along * cfg.approach_offset * dx / len;
      goal_y += kw.along * cfg.approach_offset * dy / len;
    }
  }
  goal_x = clampd(goal_x, 0, geo::kEnvEdge);
  goal_y = clampd(goal_y, 0, geo::kEnvEdge);

  const bool goal_observed =
      observability.at(geo::cell_index(goal_x), geo::cell_index(goal_y)) > 0;
  const double coverage = geo::observed_fraction(observability);
  const double grid_mass = goal_observed ? 1.0 : coverage;

  GridF stop(kVisGrid, kVisGrid);
  stop.at(detail::vis_cell(goal_x), detail::vis_cell(goal_y)) = 1.0;
  out.d_g = detail::gaussian_blur(stop, cfg.sigma_g);
  detail::normalize_to(out.d_g, grid_mass);
  out.oob_g = 1.0 - grid_mass;

  out.d_p = detail::gaussian_blur(
      detail::rasterize_path({{agent_x, agent_y}, {goal_x, goal_y}}), cfg.sigma_p);
  detail::normalize_to(out.d_p, grid_mass);
  out.oob_p = 1.0 - grid_mass;
  validate(out);
  return out;
}

// ---------------------------------------------------------------------------
// Distribution-following controller

struct ControllerConfig {
  double lookahead = 0.5;
  double k_omega = 1.5;
  double v_max = sim::kMaxLinearVel;
  double omega_max = sim::kMaxYawRate;
  double stop_radius = kStopRadius;
  double stop_value_frac = 0.9;  // stop when agent cell d_g >= frac * max
  double stop_mass = 0.5;        // stop when d_g mass within stop_radius exceeds this
  double path_mass_frac = 0.2;   // carrot candidates need d_p >= frac * max
};

/// Carrot-chasing follower over the predicted fields. Returns STOP at the
/// stop field's peak region; otherwise steers toward the nearest
/// forward-progress cell of d^p at least one lookahead away.
inline sim::Action follow_controller(double x, double y, double yaw,
                                     const VisitationDistributions& dists,
                                     const ControllerConfig& cfg = {}) {
  validate(dists);
  const double g_max = dists.d_g.max_value();
  if (g_max <= 0) return {0, 0, true};  // all mass out of bounds

  const int ax = detail::vis_cell(x), ay = detail::vis_cell(y);
  if (dists.d_g.at(ax, ay) >= cfg.stop_value_frac * g_max) return {0, 0, true};

  double near_mass = 0;
  for (int cy = 0; cy < kVisGrid; ++cy)
    for (int cx = 0; cx < kVisGrid; ++cx) {
      if (std::hypot(detail::vis_center(cx) - x, detail::vis_center(cy) - y) <= cfg.stop_radius)
        near_mass += dists.d_g.at(cx, cy);
    }
  if (near_mass > cfg.stop_mass) return {0, 0, true};

  int gx = 0, gy = 0;
  for (int cy = 0; cy < kVisGrid; ++cy)
    for (int cx = 0; cx < kVisGrid; ++cx)
      if (dists.d_g.at(cx, cy) > dists.d_g.at(gx, gy)) {
        gx = cx;
        gy = cy;
      }
  const double goal_x = detail::vis_center(gx), goal_y = detail::vis_center(gy);
  const double agent_goal = std::hypot(goal_x - x, goal_y - y);

  const double p_max = dists.d_p.max_value();
  double target_x = goal_x, target_y = goal_y;
  double best_d = std::numeric_limits<double>::infinity(), best_goal_d = 0;
  if (p_max > 0) {
    for (int cy = 0; cy < kVisGrid; ++cy)
      for (int cx = 0; cx < kVisGrid; ++cx) {
        if (dists.d_p.at(cx, cy) < cfg.path_mass_frac * p_max) continue;
        const double px = detail::vis_center(cx), py = detail::vis_center(cy);
        const double d_agent = std::hypot(px - x, py - y);
        const double d_goal = std::hypot(px - goal_x, py - goal_y);
        if (d_agent < cfg.lookahead || d_goal > agent_goal) continue;
        if (d_agent < best_d || (d_agent == best_d && d_goal < best_goal_d)) {
          best_d = d_agent;
          best_goal_d = d_goal;
          target_x = px;
          target_y = py;
        }
      }
  }

  const double err = wrap_angle(std::atan2(target_y - y, target_x - x) - yaw);
  sim::Action a;
  a.omega = clampd(cfg.k_omega * err, -cfg.omega_max, cfg.omega_max);
  a.v = cfg.v_max * std::max(0.0, std::cos(err));
  return a;
}

// ---------------------------------------------------------------------------
// KL loss

/// D(pred || gold) over the 64*64 grid plus the out-of-bounds cell, with
/// gold floored at 1e-9.
inline double kl_divergence(const GridF& pred, double pred_oob, const GridF& gold,
                            double gold_oob) {
  validate_distribution(pred, pred_oob, "kl pred");
  validate_distribution(gold, gold_oob, "kl gold");
  double kl = 0;
  for (size_t i = 0; i < pred.cells.size(); ++i) {
    const double p = pred.cells[i];
    if (p > 0) kl += p * std::log(p / std::max(gold.cells[i], 1e-9));
  }
  if (pred_oob > 0) kl += pred_oob * std::log(pred_oob / std::max(gold_oob, 1e-9));
  return kl;
}

inline double kl_loss(const VisitationDistributions& pred, const VisitationDistributions& gold) {
  return kl_divergence(pred.d_p, pred.oob_p, gold.d_p, gold.oob_p) +
         kl_divergence(pred.d_g, pred.oob_g, gold.d_g, gold.oob_g);
}

// ---------------------------------------------------------------------------
// Intrinsic reward

struct RewardWeights {
  double visit = 0.3;    // lambda_v
  double stop = 0.5;     // lambda_s
  double explore = 1.0;  // lambda_e
  double action = 0.3;   // lambda_a
  double step = 0.04;    // lambda_step
};

struct StepRecord {
  double x = 0, y = 0, yaw = 0;
  double v_cmd = 0, omega_cmd = 0;
  bool clamped = false;
  bool stop = false;
  double new_observed_fraction = 0;  // newly seen map cells / total cells
};

struct RolloutTrace {
  double start_x = 0, start_y = 0, start_yaw = 0;
  std::vector<StepRecord> steps;
};

struct ReturnBreakdown {
  double total = 0;
  double visit = 0, stop = 0, explore = 0, action_penalty = 0, step_penalty = 0;
};

/// Eq.-style intrinsic return: per step, reward d^p mass of newly visited
/// cells and newly observed area, pay the d^g mass near the stop position
/// once at STOP, and penalize clamped actions plus a constant per step.
inline ReturnBreakdown intrinsic_return(const RolloutTrace& trace,
                                        const VisitationDistributions& dists,
                                        const RewardWeights& w = {}) {
  ReturnBreakdown r;
  std::set<int> visited;
  for (const auto& s : trace.steps) {
    const int cell = detail::vis_cell(s.y) * kVisGrid + detail::vis_cell(s.x);
    if (visited.insert(cell).second)
      r.visit += w.visit * dists.d_p.cells[static_cast<size_t>(cell)];
    r.explore += w.explore * s.new_observed_fraction;
    if (s.clamped) r.action_penalty += w.action;
    r.step_penalty += w.step;
    if (s.stop) {
      for (int cy = 0; cy < kVisGrid; ++cy)
        for (int cx = 0; cx < kVisGrid; ++cx)
          if (std::hypot(detail::vis_center(cx) - s.x, detail::vis_center(cy) - s.y) <= kStopRadius)
            r.stop += w.stop * dists.d_g.at(cx, cy);
    }
  }
  r.total = r.visit + r.stop + r.explore - r.action_penalty - r.step_penalty;
  return r;
}

// ---------------------------------------------------------------------------
// Rollout driver

struct RolloutResult {
  RolloutTrace trace;
  sim::AgentState final_state;
  bool stopped = false;
  GridF observability{geo::kMapSize, geo::kMapSize};
};

/// Run the controller to STOP (or step limit) from a start state, updating
/// the observability grid as the camera sweeps.
inline RolloutResult run_rollout(const sim::AgentState& start, const VisitationDistributions& dists,
                                 const ControllerConfig& ctrl_cfg = {},
                                 const sim::SimConfig& sim_cfg = {}, int max_steps = 400,
                                 const geo::Camera* camera = nullptr) {
  const geo::Camera cam = camera ? *camera : geo::make_camera();
  RolloutResult out;
  out.trace.start_x = start.x;
  out.trace.start_y = start.y;
  out.trace.start_yaw = start.yaw;
  sim::AgentState state = start;
  out.observability = geo::observability_update(out.observability, sim::agent_camera_pose(state), cam);
  double seen = out.observability.sum();
  const double total_cells = static_cast<double>(out.observability.size());

  for (int t = 0; t < max_steps; ++t) {
    const sim::Action a = follow_controller(state.x, state.y, state.yaw, dists, ctrl_cfg);
    StepRecord rec;
    rec.v_cmd = a.v;
    rec.omega_cmd = a.omega;
    if (a.stop) {
      rec.x = state.x;
      rec.y = state.y;
      rec.yaw = state.yaw;
      rec.stop = true;
      out.trace.steps.push_back(rec);
      out.stopped = true;
      state = sim::step(state, a, sim_cfg);
      break;
    }
    state = sim::step(state, a, sim_cfg);
    out.observability = geo::observability_update(out.observability, sim::agent_camera_pose(state), cam);
    const double now_seen = out.observability.sum();
    rec.x = state.x;
    rec.y = state.y;
    rec.yaw = state.yaw;
    rec.clamped = state.clamped_action;
    rec.new_observed_fraction = (now_seen - seen) / total_cells;
    seen = now_seen;
    out.trace.steps.push_back(rec);
  }
  out.final_state = state;
  return out;
}

inline Traj trace_positions(const RolloutTrace& trace) {
  Traj t;
  t.push_back({trace.start_x, trace.start_y});
  for (const auto& s : trace.steps)
    if (!s.stop) t.push_back({s.x, s.y});
  return t;
}

}  // namespace groundnav::policy
