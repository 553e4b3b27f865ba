#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"
#include "groundnav/embed_metric.hpp"
#include "groundnav/exemplar_db.hpp"
#include "groundnav/geo_mapping.hpp"

namespace groundnav::sim {

using geo::Camera;
using geo::CameraFrame;
using geo::Pose;
using geo::Vec3;

constexpr double kDt = 0.1;
constexpr double kMaxLinearVel = 0.7;
constexpr double kMaxYawRate = 1.0;
constexpr int kMinLayoutObjects = 6;
constexpr int kMaxLayoutObjects = 16;
constexpr double kMinSpacing = 0.3;

enum class Shape { Disk, Box, Cone };

inline std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Disk: return "disk";
    case Shape::Box: return "box";
    default: return "cone";
  }
}

/// One procedural object type: a colored footprint shape with height.
struct ObjectType {
  std::string id;
  Shape shape = Shape::Disk;
  std::array<double, 3> color{0.5, 0.5, 0.5};
  std::string color_name;
  double radius = 0.15;
  double height = 0.2;
};

inline const std::vector<std::pair<std::string, std::array<double, 3>>>& color_palette() {
  static const std::vector<std::pair<std::string, std::array<double, 3>>> palette = {
      {"red", {0.85, 0.12, 0.12}},    {"green", {0.10, 0.65, 0.15}},
      {"blue", {0.12, 0.25, 0.85}},   {"yellow", {0.90, 0.85, 0.10}},
      {"purple", {0.55, 0.15, 0.70}}, {"orange", {0.95, 0.55, 0.08}},
      {"cyan", {0.10, 0.75, 0.80}},   {"magenta", {0.85, 0.15, 0.70}},
      {"white", {0.92, 0.92, 0.92}},  {"gray", {0.45, 0.45, 0.45}},
      {"pink", {0.95, 0.60, 0.70}},   {"brown", {0.50, 0.32, 0.15}},
      {"teal", {0.10, 0.45, 0.45}},   {"olive", {0.45, 0.48, 0.12}},
      {"navy", {0.08, 0.10, 0.40}},   {"maroon", {0.48, 0.08, 0.12}},
  };
  return palette;
}

/// Deterministic pool of n distinct (color, shape) object types.
inline std::vector<ObjectType> make_object_pool(int n, uint64_t seed) {
  const auto& palette = color_palette();
  std::vector<std::pair<int, Shape>> combos;
  for (size_t c = 0; c < palette.size(); ++c)
    for (Shape s : {Shape::Disk, Shape::Box, Shape::Cone}) combos.push_back({static_cast<int>(c), s});
  if (n < 1 || n > static_cast<int>(combos.size()))
    throw std::runtime_error("make_object_pool: n must be in [1, " + std::to_string(combos.size()) + "]");
  std::mt19937_64 rng(seed);
  std::shuffle(combos.begin(), combos.end(), rng);
  std::uniform_real_distribution<double> radius(0.12, 0.20), height(0.15, 0.30);
  std::vector<ObjectType> pool;
  for (int i = 0; i < n; ++i) {
    ObjectType t;
    t.color_name = palette[combos[i].first].first;
    t.color = palette[combos[i].first].second;
    t.shape = combos[i].second;
    t.id = t.color_name + "_" + shape_name(t.shape);
    t.radius = radius(rng);
    t.height = height(rng);
    pool.push_back(t);
  }
  return pool;
}

struct PlacedObject {
  ObjectType type;
  double x = 0, y = 0;
};

struct Layout {
  std::vector<PlacedObject> objects;
  double edge = geo::kEnvEdge;
};

struct LayoutConfig {
  int forced_count = -1;  // <0: draw uniformly from [6, 16]
  bool no_repeat = false;
  double min_spacing = kMinSpacing;
  double wall_margin = 0.25;
};

inline Layout generate_layout(const std::vector<ObjectType>& pool, uint64_t seed,
                              const LayoutConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  int count;
  if (cfg.forced_count >= 0) {
    if (cfg.forced_count < kMinLayoutObjects || cfg.forced_count > kMaxLayoutObjects)
      throw std::runtime_error("generate_layout: object count must be in [6, 16]");
    count = cfg.forced_count;
  } else {
    count = std::uniform_int_distribution<int>(kMinLayoutObjects, kMaxLayoutObjects)(rng);
  }
  if (cfg.no_repeat && static_cast<int>(pool.size()) < count)
    throw std::runtime_error("generate_layout: pool too small for no-repeat layout");

  std::vector<int> type_idx;
  if (cfg.no_repeat) {
    std::vector<int> all(pool.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    type_idx.assign(all.begin(), all.begin() + count);
  } else {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
    for (int i = 0; i < count; ++i) type_idx.push_back(pick(rng));
  }

  Layout layout;
  std::uniform_real_distribution<double> place(cfg.wall_margin, geo::kEnvEdge - cfg.wall_margin);
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      const double x = place(rng), y = place(rng);
      bool ok = true;
      for (const auto& o : layout.objects)
        if (std::hypot(o.x - x, o.y - y) < cfg.min_spacing) {
          ok = false;
          break;
        }
      if (ok) {
        layout.objects.push_back({pool[type_idx[i]], x, y});
        placed = true;
      }
    }
    if (!placed) throw std::runtime_error("generate_layout: spacing unsatisfiable after 10000 attempts");
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Kinematics

struct SimConfig {
  double dt = kDt;
  double v_max = kMaxLinearVel;
  double omega_max = kMaxYawRate;
};

struct AgentState {
  double x = 0, y = 0, yaw = 0;
  double v = 0, omega = 0;  // current setpoint
  double t = 0;
  bool terminal = false;
  bool clamped_action = false;  // last action exceeded velocity limits
  bool hit_boundary = false;
};

struct Action {
  double v = 0;
  double omega = 0;
  bool stop = false;
};

inline Pose agent_camera_pose(const AgentState& s, double camera_height = geo::kCameraHeight) {
  return Pose{s.x, s.y, camera_height, s.yaw};
}

/// One unicycle integration step: yaw first, then position with the new yaw.
inline AgentState step(const AgentState& state, const Action& action, const SimConfig& cfg = {}) {
  if (state.terminal) throw std::runtime_error("step: episode already terminal");
  AgentState next = state;
  if (action.stop) {
    next.terminal = true;
    next.v = 0;
    next.omega = 0;
    return next;
  }
  next.clamped_action = std::abs(action.v) > cfg.v_max || std::abs(action.omega) > cfg.omega_max;
  next.v = clampd(action.v, -cfg.v_max, cfg.v_max);
  next.omega = clampd(action.omega, -cfg.omega_max, cfg.omega_max);
  next.yaw = wrap_angle(state.yaw + next.omega * cfg.dt);
  next.x = state.x + next.v * cfg.dt * std::cos(next.yaw);
  next.y = state.y + next.v * cfg.dt * std::sin(next.yaw);
  next.hit_boundary = next.x < 0 || next.x > geo::kEnvEdge || next.y < 0 || next.y > geo::kEnvEdge;
  next.x = clampd(next.x, 0, geo::kEnvEdge);
  next.y = clampd(next.y, 0, geo::kEnvEdge);
  next.t = state.t + cfg.dt;
  return next;
}

// ---------------------------------------------------------------------------
// Rendering

struct BoxAnnotation {
  int object = -1;  // index into layout.objects
  std::string id;   // object type id
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;  // max exclusive, pixel units
  int pixel_count = 0;
};

struct RenderedScene {
  int width = 0, height = 0;
  std::vector<float> rgb;      // interleaved, row-major, values in [0, 1]
  Grid<int> object_index;      // per-pixel layout object index, -1 background
  std::vector<BoxAnnotation> annotations;

  float channel(int x, int y, int c) const {
    return rgb[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int object = -1;
};

inline bool hit_cylinder(Vec3 o, Vec3 d, double cx, double cy, double r, double h, double* t_out) {
  const double ax = o.x - cx, ay = o.y - cy;
  const double a = d.x * d.x + d.y * d.y;
  double best = std::numeric_limits<double>::infinity();
  if (a > 1e-12) {
    const double b = 2 * (ax * d.x + ay * d.y);
    const double c = ax * ax + ay * ay - r * r;
    const double disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= 1e-9) continue;
        const double z = o.z + t * d.z;
        if (z >= 0 && z <= h) best = std::min(best, t);
      }
    }
  }
  // top cap
  if (std::abs(d.z) > 1e-12) {
    const double t = (h - o.z) / d.z;
    if (t > 1e-9) {
      const double px = o.x + t * d.x - cx, py = o.y + t * d.y - cy;
      if (px * px + py * py <= r * r) best = std::min(best, t);
    }
  }
  if (!std::isfinite(best)) return false;
  *t_out = best;
  return true;
}

inline bool hit_aabb(Vec3 o, Vec3 d, double cx, double cy, double r, double h, double* t_out) {
  const double lo[3] = {cx - r, cy - r, 0.0}, hi[3] = {cx + r, cy + r, h};
  const double od[3] = {o.x, o.y, o.z}, dd[3] = {d.x, d.y, d.z};
  double t0 = 1e-9, t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dd[i]) < 1e-12) {
      if (od[i] < lo[i] || od[i] > hi[i]) return false;
      continue;
    }
    double a = (lo[i] - od[i]) / dd[i], b = (hi[i] - od[i]) / dd[i];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  *t_out = t0;
  return true;
}

inline bool hit_cone(Vec3 o, Vec3 d, double cx, double cy, double r, double h, double* t_out) {
  // radius shrinks linearly from r at z=0 to 0 at z=h
  const double m = r / h;
  const double ax = o.x - cx, ay = o.y - cy;
  const double rz = r - m * o.z;  // footprint radius at the ray origin's height
  const double A = d.x * d.x + d.y * d.y - m * m * d.z * d.z;
  const double B = 2 * (ax * d.x + ay * d.y) + 2 * m * d.z * rz;
  const double C = ax * ax + ay * ay - rz * rz;
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](double t) {
    if (t <= 1e-9) return;
    const double z = o.z + t * d.z;
    if (z >= 0 && z <= h) best = std::min(best, t);
  };
  if (std::abs(A) < 1e-12) {
    if (std::abs(B) > 1e-12) consider(-C / B);
  } else {
    const double disc = B * B - 4 * A * C;
    if (disc >= 0) {
      const double sq = std::sqrt(disc);
      consider((-B - sq) / (2 * A));
      consider((-B + sq) / (2 * A));
    }
  }
  if (!std::isfinite(best)) return false;
  *t_out = best;
  return true;
}

inline bool hit_object(const PlacedObject& obj, Vec3 o, Vec3 d, double* t_out) {
  switch (obj.type.shape) {
    case Shape::Disk: return hit_cylinder(o, d, obj.x, obj.y, obj.type.radius, obj.type.height, t_out);
    case Shape::Box: return hit_aabb(o, d, obj.x, obj.y, obj.type.radius, obj.type.height, t_out);
    default: return hit_cone(o, d, obj.x, obj.y, obj.type.radius, obj.type.height, t_out);
  }
}

/// Hash-noise ground texture, fixed across runs.
inline double ground_shade(double wx, double wy) {
  const int64_t qx = static_cast<int64_t>(std::floor(wx / 0.1));
  const int64_t qy = static_cast<int64_t>(std::floor(wy / 0.1));
  uint64_t h = fnv1a64(&qx, sizeof(qx));
  h = fnv1a64(&qy, sizeof(qy), h);
  return 0.28 + 0.08 * static_cast<double>(h % 1000) / 1000.0;
}

}  // namespace detail

/// Flat-shaded per-pixel ray cast of the layout. jitter_seed != 0 scales each
/// object's color by a deterministic per-frame factor.
inline RenderedScene render(const Layout& layout, const Pose& pose, const Camera& cam,
                            uint64_t jitter_seed = 0) {
  RenderedScene scene;
  scene.width = cam.width;
  scene.height = cam.height;
  scene.rgb.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.0f);
  scene.object_index = Grid<int>(cam.width, cam.height, -1);

  std::vector<std::array<double, 3>> colors;
  for (size_t i = 0; i < layout.objects.size(); ++i) {
    std::array<double, 3> c = layout.objects[i].type.color;
    if (jitter_seed != 0) {
      std::mt19937_64 rng(fnv1a64(&i, sizeof(i), jitter_seed));
      std::uniform_real_distribution<double> u(-0.08, 0.08);
      const double f = 1.0 + u(rng);
      for (double& ch : c) ch = clampd(ch * f, 0, 1);
    }
    colors.push_back(c);
  }

  const CameraFrame frame = geo::camera_frame(pose, cam);
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const Vec3 dir = geo::pixel_ray(frame, cam, px, py);
      detail::Hit hit;
      for (size_t i = 0; i < layout.objects.size(); ++i) {
        double t;
        if (detail::hit_object(layout.objects[i], frame.origin, dir, &t) && t < hit.t) {
          hit.t = t;
          hit.object = static_cast<int>(i);
        }
      }
      double r, g, b;
      if (hit.object >= 0) {
        const auto& c = colors[hit.object];
        r = c[0];
        g = c[1];
        b = c[2];
        scene.object_index.at(px, py) = hit.object;
      } else if (dir.z < -1e-9) {
        const double t = -frame.origin.z / dir.z;
        const double shade = detail::ground_shade(frame.origin.x + t * dir.x, frame.origin.y + t * dir.y);
        r = shade * 1.05;
        g = shade;
        b = shade * 0.92;
      } else {
        const double grad = 0.55 + 0.15 * (1.0 - static_cast<double>(py) / cam.height);
        r = grad * 0.95;
        g = grad * 0.97;
        b = grad;
      }
      const size_t at = (static_cast<size_t>(py) * cam.width + px) * 3;
      scene.rgb[at] = static_cast<float>(r);
      scene.rgb[at + 1] = static_cast<float>(g);
      scene.rgb[at + 2] = static_cast<float>(b);
    }

  std::map<int, BoxAnnotation> boxes;
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const int idx = scene.object_index.at(px, py);
      if (idx < 0) continue;
      auto [it, fresh] = boxes.try_emplace(idx);
      BoxAnnotation& a = it->second;
      if (fresh) {
        a.object = idx;
        a.id = layout.objects[idx].type.id;
        a.x_min = px;
        a.y_min = py;
        a.x_max = px + 1;
        a.y_max = py + 1;
      }
      a.x_min = std::min(a.x_min, px);
      a.y_min = std::min(a.y_min, py);
      a.x_max = std::max(a.x_max, px + 1);
      a.y_max = std::max(a.y_max, py + 1);
      ++a.pixel_count;
    }
  for (auto& [idx, a] : boxes) scene.annotations.push_back(a);
  return scene;
}

/// Binary mask of the pixels rendered from one layout object.
inline GridF object_mask(const RenderedScene& scene, int object) {
  GridF m(scene.width, scene.height);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.object_index.at(x, y) == object) m.at(x, y) = 1.0;
  return m;
}

/// 1.0 wherever any object is rendered.
inline GridF foreground_grid(const RenderedScene& scene) {
  GridF m(scene.width, scene.height);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      if (scene.object_index.at(x, y) >= 0) m.at(x, y) = 1.0;
  return m;
}

/// Nearest-neighbor crop of a pixel box, resized to the exemplar patch shape.
inline db::ImagePatch crop_patch(const RenderedScene& scene, double x_min, double y_min,
                                 double x_max, double y_max, int out_size = db::kPatchSize) {
  if (!(x_min < x_max && y_min < y_max)) throw std::runtime_error("crop_patch: degenerate box");
  db::ImagePatch patch;
  patch.h = out_size;
  patch.w = out_size;
  patch.c = 3;
  patch.data.resize(patch.count());
  const double bw = x_max - x_min, bh = y_max - y_min;
  for (int j = 0; j < out_size; ++j)
    for (int i = 0; i < out_size; ++i) {
      const int sx = std::max(0, std::min(scene.width - 1,
                        static_cast<int>(std::floor(x_min + (i + 0.5) * bw / out_size))));
      const int sy = std::max(0, std::min(scene.height - 1,
                        static_cast<int>(std::floor(y_min + (j + 0.5) * bh / out_size))));
      for (int c = 0; c < 3; ++c) patch.at(i, j, c) = scene.channel(sx, sy, c);
    }
  return patch;
}

// ---------------------------------------------------------------------------
// AR-style dataset generation

struct ArFrame {
  Layout layout;
  Pose pose;
  RenderedScene scene;
};

struct ArDataset {
  std::vector<ArFrame> frames;
  std::vector<metric::LabeledPatch> patches;        // one per usable annotation
  std::vector<metric::TripletSpec> triplets;        // indices into `patches`
  uint64_t seed = 0;
};

struct ArConfig {
  int min_annotation_pixels = 30;
  int max_positives = 3;
  int max_negatives = 3;
  double min_camera_margin = 0.3;
};

/// Annotated frames from random layouts and poses, plus identity-based
/// triplets over the cropped patches.
inline ArDataset gen_ar_dataset(const std::vector<ObjectType>& pool, int size, uint64_t seed,
                                const ArConfig& cfg = {}) {
  ArDataset ds;
  ds.seed = seed;
  const Camera cam = geo::make_camera();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> place(cfg.min_camera_margin,
                                               geo::kEnvEdge - cfg.min_camera_margin);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  for (int k = 0; k < size; ++k) {
    ArFrame frame;
    frame.layout = generate_layout(pool, rng());
    frame.pose = Pose{place(rng), place(rng), geo::kCameraHeight, angle(rng)};
    frame.scene = render(frame.layout, frame.pose, cam, rng() | 1);
    for (const auto& a : frame.scene.annotations) {
      if (a.pixel_count < cfg.min_annotation_pixels) continue;
      ds.patches.push_back({a.id, crop_patch(frame.scene, a.x_min, a.y_min, a.x_max, a.y_max)});
    }
    ds.frames.push_back(std::move(frame));
  }

  std::map<std::string, std::vector<int>> by_label;
  for (size_t i = 0; i < ds.patches.size(); ++i)
    by_label[ds.patches[i].label].push_back(static_cast<int>(i));
  std::vector<std::string> labels;
  for (const auto& [label, idxs] : by_label)
    if (idxs.size() >= 2) labels.push_back(label);

  // Negatives come from the most confusable classes: rank other labels by
  // distance between mean patches in pixel space.
  std::map<std::string, std::vector<double>> label_mean;
  for (const std::string& label : labels) {
    std::vector<double> mean(ds.patches[static_cast<size_t>(by_label[label][0])].patch.count(), 0.0);
    for (int idx : by_label[label]) {
      const auto& data = ds.patches[static_cast<size_t>(idx)].patch.data;
      for (size_t i = 0; i < mean.size(); ++i) mean[i] += data[i];
    }
    for (double& v : mean) v /= static_cast<double>(by_label[label].size());
    label_mean[label] = std::move(mean);
  }
  std::map<std::string, std::vector<std::string>> hard_order;
  for (const std::string& label : labels) {
    std::vector<std::pair<double, std::string>> ranked;
    for (const std::string& other : labels) {
      if (other == label) continue;
      ranked.push_back({l2sq(label_mean[label], label_mean[other]), other});
    }
    std::sort(ranked.begin(), ranked.end());
    for (const auto& [d, other] : ranked) hard_order[label].push_back(other);
  }

  for (const std::string& label : labels) {
    const auto& own = by_label[label];
    const auto& hard = hard_order[label];
    for (size_t a = 0; a < own.size(); ++a) {
      metric::TripletSpec t;
      t.anchor = own[a];
      for (size_t p = 1; p <= static_cast<size_t>(cfg.max_positives) && p < own.size(); ++p)
        t.positives.push_back(own[(a + p) % own.size()]);
      for (size_t l = 0; l < hard.size() && l < static_cast<size_t>(cfg.max_negatives); ++l)
        t.negatives.push_back(by_label[hard[l]][a % by_label[hard[l]].size()]);
      if (!t.positives.empty() && !t.negatives.empty()) ds.triplets.push_back(std::move(t));
    }
  }
  return ds;
}

/// Phrase variants naming a type, used when assembling exemplar databases.
/// Every variant carries the color: shape-only phrases would pull the text
/// posterior of same-shape objects toward each other.
inline std::vector<db::Phrase> phrases_for_type(const ObjectType& type) {
  const std::string& c = type.color_name;
  const std::string s = shape_name(type.shape);
  return {{c, s}, {"the", c, s}, {"a", c, s}};
}

/// Exemplar database over the pool types present in `patches`, capped at
/// kMaxExemplars images per object.
inline db::ObjectDatabase build_database(const std::vector<ObjectType>& pool,
                                         const std::vector<metric::LabeledPatch>& patches) {
  db::ObjectDatabase d;
  for (const auto& type : pool) {
    db::ObjectEntry e;
    e.id = type.id;
    for (const auto& p : patches) {
      if (p.label != type.id) continue;
      if (static_cast<int>(e.images.size()) >= db::kMaxExemplars) break;
      e.images.push_back(p.patch);
    }
    if (e.images.empty()) continue;
    e.phrases = phrases_for_type(type);
    d.entries.push_back(std::move(e));
  }
  d.prior = db::uniform_prior(d.entries.size());
  db::validate(d);
  return d;
}

// ---------------------------------------------------------------------------
// Dataset directory format

inline nlohmann::json layout_to_json(const Layout& layout) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : layout.objects) {
    objs.push_back({{"id", o.type.id},
                    {"shape", shape_name(o.type.shape)},
                    {"color", o.type.color},
                    {"color_name", o.type.color_name},
                    {"radius", o.type.radius},
                    {"height", o.type.height},
                    {"x", o.x},
                    {"y", o.y}});
  }
  return {{"edge", layout.edge}, {"objects", objs}};
}

inline Layout layout_from_json(const nlohmann::json& j) {
  Layout layout;
  layout.edge = j.at("edge").get<double>();
  for (const auto& jo : j.at("objects")) {
    PlacedObject o;
    o.type.id = jo.at("id").get<std::string>();
    const std::string shape = jo.at("shape").get<std::string>();
    o.type.shape = shape == "disk" ? Shape::Disk : shape == "box" ? Shape::Box : Shape::Cone;
    o.type.color = jo.at("color").get<std::array<double, 3>>();
    o.type.color_name = jo.at("color_name").get<std::string>();
    o.type.radius = jo.at("radius").get<double>();
    o.type.height = jo.at("height").get<double>();
    o.x = jo.at("x").get<double>();
    o.y = jo.at("y").get<double>();
    layout.objects.push_back(std::move(o));
  }
  return layout;
}

/// Writes frame_NNNN.bin (float32 rgb) + frame_NNNN.json sidecars, a patches
/// file, triplet indices, and a manifest with the seed and config hash.
inline void save_dataset(const ArDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[32];
  for (size_t k = 0; k < ds.frames.size(); ++k) {
    const ArFrame& f = ds.frames[k];
    std::snprintf(name, sizeof(name), "frame_%04zu", k);
    std::ofstream bin(dir + "/" + name + ".bin", std::ios::binary);
    bin.write(reinterpret_cast<const char*>(f.scene.rgb.data()),
              static_cast<std::streamsize>(f.scene.rgb.size() * sizeof(float)));
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& a : f.scene.annotations)
      boxes.push_back({{"object", a.object}, {"id", a.id}, {"x_min", a.x_min}, {"y_min", a.y_min},
                       {"x_max", a.x_max}, {"y_max", a.y_max}, {"pixels", a.pixel_count}});
    nlohmann::json side = {{"pose", {{"x", f.pose.x}, {"y", f.pose.y}, {"z", f.pose.z}, {"yaw", f.pose.yaw}}},
                           {"layout", layout_to_json(f.layout)},
                           {"width", f.scene.width},
                           {"height", f.scene.height},
                           {"annotations", boxes}};
    std::ofstream js(dir + "/" + name + ".json");
    js << side.dump(2) << "\n";
  }

  nlohmann::json patches = nlohmann::json::array();
  for (const auto& p : ds.patches)
    patches.push_back({{"label", p.label}, {"h", p.patch.h}, {"w", p.patch.w}, {"c", p.patch.c},
                       {"data_b64", base64_of_floats(p.patch.data)}});
  std::ofstream pf(dir + "/patches.json");
  pf << nlohmann::json{{"patches", patches}}.dump(2) << "\n";

  nlohmann::json triplets = nlohmann::json::array();
  for (const auto& t : ds.triplets)
    triplets.push_back({{"anchor", t.anchor}, {"positives", t.positives}, {"negatives", t.negatives}});
  std::ofstream tf(dir + "/triplets.json");
  tf << nlohmann::json{{"triplets", triplets}}.dump(2) << "\n";

  const nlohmann::json cfg_json = {{"frames", ds.frames.size()}, {"seed", ds.seed}};
  nlohmann::json manifest = {{"seed", ds.seed},
                             {"frames", ds.frames.size()},
                             {"patches", ds.patches.size()},
                             {"triplets", ds.triplets.size()},
                             {"config_hash", fnv1a64(cfg_json.dump())}};
  std::ofstream mf(dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

/// Reload the patch pool and triplets written by save_dataset. Frames are not
/// needed by downstream training and stay on disk.
inline void load_patches_triplets(const std::string& dir, std::vector<metric::LabeledPatch>* patches,
                                  std::vector<metric::TripletSpec>* triplets) {
  std::ifstream pf(dir + "/patches.json");
  if (!pf) throw std::runtime_error("load_patches_triplets: cannot open '" + dir + "/patches.json'");
  nlohmann::json pj;
  pf >> pj;
  for (const auto& jp : pj.at("patches")) {
    metric::LabeledPatch p;
    p.label = jp.at("label").get<std::string>();
    p.patch.h = jp.at("h").get<int>();
    p.patch.w = jp.at("w").get<int>();
    p.patch.c = jp.at("c").get<int>();
    p.patch.data = floats_of_base64(jp.at("data_b64").get<std::string>());
    if (p.patch.data.size() != p.patch.count())
      throw std::runtime_error("load_patches_triplets: patch data length mismatch");
    patches->push_back(std::move(p));
  }
  std::ifstream tf(dir + "/triplets.json");
  if (!tf) throw std::runtime_error("load_patches_triplets: cannot open '" + dir + "/triplets.json'");
  nlohmann::json tj;
  tf >> tj;
  for (const auto& jt : tj.at("triplets")) {
    metric::TripletSpec t;
    t.anchor = jt.at("anchor").get<int>();
    t.positives = jt.at("positives").get<std::vector<int>>();
    t.negatives = jt.at("negatives").get<std::vector<int>>();
    triplets->push_back(std::move(t));
  }
}

}  // namespace groundnav::sim
