#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace groundnav {

/// Dense row-major 2D grid. at(x, y) with x = column, y = row.
template <typename T>
struct Grid {
  int w = 0;
  int h = 0;
  std::vector<T> cells;

  Grid() = default;
  Grid(int w_, int h_, T fill = T{}) : w(w_), h(h_), cells(static_cast<size_t>(w_) * h_, fill) {}

  T& at(int x, int y) { return cells[static_cast<size_t>(y) * w + x]; }
  const T& at(int x, int y) const { return cells[static_cast<size_t>(y) * w + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h; }
  size_t size() const { return cells.size(); }
  bool same_shape(const Grid& o) const { return w == o.w && h == o.h; }

  T max_value() const {
    T m = cells.empty() ? T{} : cells[0];
    for (const T& v : cells) m = std::max(m, v);
    return m;
  }
  double sum() const {
    double s = 0;
    for (const T& v : cells) s += static_cast<double>(v);
    return s;
  }
};

using GridF = Grid<double>;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2sq(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

/// Truncate or zero-pad to n entries.
inline std::vector<double> fit_dim(const std::vector<double>& v, int n) {
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  const size_t k = std::min(v.size(), out.size());
  std::copy(v.begin(), v.begin() + k, out.begin());
  return out;
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t hash = seed;
  for (size_t i = 0; i < n; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

namespace detail {
inline const char* b64_alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}
}  // namespace detail

inline std::string base64_encode(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  const char* tab = detail::b64_alphabet();
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= n; i += 3) {
    uint32_t v = (p[i] << 16) | (p[i + 1] << 8) | p[i + 2];
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back(tab[v & 63]);
  }
  if (i + 1 == n) {
    uint32_t v = p[i] << 16;
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (i + 2 == n) {
    uint32_t v = (p[i] << 16) | (p[i + 1] << 8);
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& s) {
  int rev[256];
  std::fill(rev, rev + 256, -1);
  const char* tab = detail::b64_alphabet();
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(tab[i])] = i;
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  uint32_t buf = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = rev[static_cast<unsigned char>(c)];
    if (v < 0) throw std::runtime_error("base64: invalid character in input");
    buf = (buf << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

inline std::string base64_of_floats(const std::vector<float>& v) {
  return base64_encode(v.data(), v.size() * sizeof(float));
}

inline std::vector<float> floats_of_base64(const std::string& s) {
  const std::vector<unsigned char> raw = base64_decode(s);
  if (raw.size() % sizeof(float) != 0) throw std::runtime_error("base64: payload is not a float32 array");
  std::vector<float> out(raw.size() / sizeof(float));
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

}  // namespace groundnav
