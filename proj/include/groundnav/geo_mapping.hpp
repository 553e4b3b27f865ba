#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "groundnav/common.hpp"

namespace groundnav::geo {

constexpr double kEnvEdge = 4.7;  // environment edge length, meters
constexpr int kMapSize = 32;      // allocentric grid resolution
constexpr int kContextDim = 38;   // context channels, +2 fixed channels = 40
constexpr int kImageWidth = 128;
constexpr int kImageHeight = 72;
constexpr double kHorizontalFov = 84.0 * M_PI / 180.0;
constexpr double kCameraHeight = 0.4;
constexpr double kCameraPitch = 15.0 * M_PI / 180.0;  // downward tilt

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 v) { return {s * v.x, s * v.y, s * v.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 v) { return std::sqrt(dot(v, v)); }

/// Agent/camera pose in the world frame: position in meters, heading yaw in
/// radians about +z (0 points along +x). z is the camera height above ground.
struct Pose {
  double x = 0, y = 0, z = kCameraHeight;
  double yaw = 0;
};

struct Camera {
  int width = kImageWidth;
  int height = kImageHeight;
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  double pitch = kCameraPitch;  // downward tilt of the optical axis
};

inline Camera make_camera(double hfov = kHorizontalFov, double pitch = kCameraPitch,
                          int width = kImageWidth, int height = kImageHeight) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = (width / 2.0) / std::tan(hfov / 2.0);
  cam.fy = cam.fx;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.pitch = pitch;
  if (!(cam.fx > 0 && cam.fy > 0))
    throw std::runtime_error("make_camera: intrinsics must be positive");
  return cam;
}

/// Orthonormal camera basis in world coordinates (x right, y down, z forward).
struct CameraFrame {
  Vec3 origin;
  Vec3 right, down, forward;
};

inline CameraFrame camera_frame(const Pose& pose, const Camera& cam) {
  const double cy = std::cos(pose.yaw), sy = std::sin(pose.yaw);
  const double cp = std::cos(cam.pitch), sp = std::sin(cam.pitch);
  CameraFrame f;
  f.origin = {pose.x, pose.y, pose.z};
  f.forward = {cy * cp, sy * cp, -sp};
  f.right = {sy, -cy, 0};
  f.down = cross(f.forward, f.right);
  return f;
}

struct Pixel {
  double u = 0, v = 0;
  double depth = 0;  // distance along the optical axis
};

/// World point -> pixel. Empty if at or behind the camera plane.
inline std::optional<Pixel> project_point(const CameraFrame& f, const Camera& cam, Vec3 p) {
  const Vec3 d = p - f.origin;
  const double zc = dot(d, f.forward);
  if (zc <= 1e-9) return std::nullopt;
  Pixel px;
  px.u = cam.fx * dot(d, f.right) / zc + cam.cx;
  px.v = cam.fy * dot(d, f.down) / zc + cam.cy;
  px.depth = zc;
  return px;
}

inline bool in_frame(const Camera& cam, const Pixel& px) {
  return px.u >= 0 && px.u <= cam.width && px.v >= 0 && px.v <= cam.height;
}

/// World-space direction of the ray through pixel center (i+0.5, j+0.5).
inline Vec3 pixel_ray(const CameraFrame& f, const Camera& cam, int i, int j) {
  const double xc = (i + 0.5 - cam.cx) / cam.fx;
  const double yc = (j + 0.5 - cam.cy) / cam.fy;
  return xc * f.right + yc * f.down + f.forward;
}

// ---------------------------------------------------------------------------
// Grid geometry

inline double cell_size(int grid = kMapSize) { return kEnvEdge / grid; }

inline double cell_center(int i, int grid = kMapSize) { return (i + 0.5) * cell_size(grid); }

/// World coordinate -> cell index, clamped to the grid.
inline int cell_index(double x, int grid = kMapSize) {
  const int i = static_cast<int>(std::floor(x / cell_size(grid)));
  return std::max(0, std::min(grid - 1, i));
}

inline bool in_env(double x, double y) {
  return x >= 0 && x <= kEnvEdge && y >= 0 && y <= kEnvEdge;
}

// ---------------------------------------------------------------------------
// Mask projection

namespace detail {

/// Bilinear sample with pixel centers at integer+0.5, clamped at edges.
inline double bilinear(const GridF& img, double u, double v) {
  const double s = u - 0.5, t = v - 0.5;
  const int i0 = std::max(0, std::min(img.w - 1, static_cast<int>(std::floor(s))));
  const int i1 = std::min(img.w - 1, i0 + 1);
  const int j0 = std::max(0, std::min(img.h - 1, static_cast<int>(std::floor(t))));
  const int j1 = std::min(img.h - 1, j0 + 1);
  const double a = clampd(s - i0, 0, 1), b = clampd(t - j0, 0, 1);
  return (1 - a) * (1 - b) * img.at(i0, j0) + a * (1 - b) * img.at(i1, j0) +
         (1 - a) * b * img.at(i0, j1) + a * b * img.at(i1, j1);
}

inline bool degenerate_view(const Pose& pose, const Camera& cam) {
  return pose.z <= 1e-9 && std::abs(cam.pitch) <= 1e-9;
}

}  // namespace detail

/// Project an image-space mask onto the ground-plane grid by inverse warp:
/// each map cell center is lifted to its ground point, projected through the
/// camera, and bilinearly sampled if it lands in-frame.
inline GridF project_mask(const GridF& mask, const Pose& pose, const Camera& cam,
                          bool* degenerate = nullptr) {
  if (mask.w != cam.width || mask.h != cam.height)
    throw std::runtime_error("project_mask: mask dimensions do not match camera");
  GridF out(kMapSize, kMapSize);
  if (degenerate) *degenerate = false;
  if (detail::degenerate_view(pose, cam)) {
    if (degenerate) *degenerate = true;
    return out;
  }
  const CameraFrame f = camera_frame(pose, cam);
  for (int iy = 0; iy < kMapSize; ++iy)
    for (int ix = 0; ix < kMapSize; ++ix) {
      const Vec3 p{cell_center(ix), cell_center(iy), 0};
      const auto px = project_point(f, cam, p);
      if (!px || !in_frame(cam, *px)) continue;
      out.at(ix, iy) = clampd(detail::bilinear(mask, px->u, px->v), 0, 1);
    }
  return out;
}

/// Cellwise running max over timesteps.
inline GridF accumulate(const GridF& prev, const GridF& next) {
  if (!prev.same_shape(next)) throw std::runtime_error("accumulate: dimension mismatch");
  GridF out = prev;
  for (size_t i = 0; i < out.cells.size(); ++i)
    out.cells[i] = std::max(out.cells[i], next.cells[i]);
  return out;
}

/// Mark every cell whose center currently projects in-frame as seen.
/// Monotone: cells are only ever set, never cleared.
inline GridF observability_update(const GridF& prev, const Pose& pose, const Camera& cam) {
  if (prev.w != kMapSize || prev.h != kMapSize)
    throw std::runtime_error("observability_update: grid must be " + std::to_string(kMapSize) +
                             "x" + std::to_string(kMapSize));
  GridF out = prev;
  if (detail::degenerate_view(pose, cam)) return out;
  const CameraFrame f = camera_frame(pose, cam);
  for (int iy = 0; iy < kMapSize; ++iy)
    for (int ix = 0; ix < kMapSize; ++ix) {
      const auto px = project_point(f, cam, {cell_center(ix), cell_center(iy), 0});
      if (px && in_frame(cam, *px)) out.at(ix, iy) = 1.0;
    }
  return out;
}

inline double observed_fraction(const GridF& obs) {
  double n = 0;
  for (float v : obs.cells) n += v > 0 ? 1 : 0;
  return n / static_cast<double>(obs.cells.size());
}

// ---------------------------------------------------------------------------
// Object context grounding map

/// Channel stack over the allocentric grid: kContextDim context channels
/// (sum over references of ψ(r)·mask_r), then the all-object channel, then
/// the boundary ring.
struct ContextMap {
  std::vector<GridF> chan;

  ContextMap() {
    chan.assign(kContextDim + 2, GridF(kMapSize, kMapSize));
  }

  int channels() const { return static_cast<int>(chan.size()); }
  const GridF& all_objects() const { return chan[kContextDim]; }
  const GridF& boundary() const { return chan[kContextDim + 1]; }
};

inline GridF make_boundary_grid() {
  GridF b(kMapSize, kMapSize);
  for (int i = 0; i < kMapSize; ++i) {
    b.at(i, 0) = 1.0;
    b.at(i, kMapSize - 1) = 1.0;
    b.at(0, i) = 1.0;
    b.at(kMapSize - 1, i) = 1.0;
  }
  return b;
}

inline ContextMap build_context_map(const std::vector<GridF>& ref_masks,
                                    const std::vector<std::vector<double>>& ref_psis,
                                    const GridF& all_object_mask) {
  if (ref_masks.size() != ref_psis.size())
    throw std::runtime_error("build_context_map: one psi per reference mask required");
  ContextMap map;
  if (all_object_mask.w != kMapSize || all_object_mask.h != kMapSize)
    throw std::runtime_error("build_context_map: all-object mask dimension mismatch");
  for (size_t r = 0; r < ref_masks.size(); ++r) {
    if (ref_masks[r].w != kMapSize || ref_masks[r].h != kMapSize)
      throw std::runtime_error("build_context_map: reference mask dimension mismatch");
    const std::vector<double> psi = fit_dim(ref_psis[r], kContextDim);
    for (int c = 0; c < kContextDim; ++c) {
      if (psi[c] == 0.0) continue;
      GridF& ch = map.chan[c];
      for (size_t i = 0; i < ch.cells.size(); ++i)
        ch.cells[i] += psi[c] * ref_masks[r].cells[i];
    }
  }
  map.chan[kContextDim] = all_object_mask;
  map.chan[kContextDim + 1] = make_boundary_grid();
  return map;
}

// ---------------------------------------------------------------------------
// Map snapshots (JSON header + flat little-endian float32 binary)

inline void save_map_snapshot(const ContextMap& map, const GridF& observability,
                              const std::string& stem, int timestep) {
  std::vector<std::string> names;
  for (int c = 0; c < kContextDim; ++c) names.push_back("ctx" + std::to_string(c));
  names.push_back("all_objects");
  names.push_back("boundary");
  names.push_back("observability");

  const std::string bin_path = stem + ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("save_map_snapshot: cannot write '" + bin_path + "'");
  auto write_grid = [&bin](const GridF& g) {
    for (double v : g.cells) {
      const float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      bin.write(buf, 4);
    }
  };
  for (const auto& ch : map.chan) write_grid(ch);
  write_grid(observability);
  bin.close();

  nlohmann::json header = {
      {"grid", kMapSize},
      {"channels", names.size()},
      {"channel_names", names},
      {"timestep", timestep},
      {"data_file", bin_path.substr(bin_path.find_last_of('/') + 1)},
  };
  std::ofstream hdr(stem + ".json");
  if (!hdr) throw std::runtime_error("save_map_snapshot: cannot write '" + stem + ".json'");
  hdr << header.dump(2) << "\n";
}

struct MapSnapshot {
  ContextMap map;
  GridF observability{kMapSize, kMapSize};
  int timestep = 0;
};

inline MapSnapshot load_map_snapshot(const std::string& stem) {
  std::ifstream hdr(stem + ".json");
  if (!hdr) throw std::runtime_error("load_map_snapshot: cannot open '" + stem + ".json'");
  nlohmann::json header;
  hdr >> header;
  const int grid = header.at("grid").get<int>();
  const size_t channels = header.at("channels").get<size_t>();
  if (grid != kMapSize || channels != static_cast<size_t>(kContextDim) + 3)
    throw std::runtime_error("load_map_snapshot: unexpected grid shape in header");
  const std::string dir = stem.find('/') == std::string::npos ? "" : stem.substr(0, stem.find_last_of('/') + 1);
  const std::string bin_path = dir + header.at("data_file").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("load_map_snapshot: cannot open '" + bin_path + "'");
  MapSnapshot snap;
  snap.timestep = header.at("timestep").get<int>();
  auto read_grid = [&bin, &bin_path](GridF& g) {
    for (auto& v : g.cells) {
      char buf[4];
      bin.read(buf, 4);
      if (!bin) throw std::runtime_error("load_map_snapshot: truncated '" + bin_path + "'");
      float f;
      std::memcpy(&f, buf, 4);
      v = f;
    }
  };
  for (auto& ch : snap.map.chan) read_grid(ch);
  read_grid(snap.observability);
  return snap;
}

}  // namespace groundnav::geo
