#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <variant>

#include "core.hpp"
#include "data.hpp"

namespace imuspec {

using Matrix3 = std::array<std::array<double, 3>, 3>;

inline constexpr Matrix3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

/// Cyclic shift by k samples: sample i moves to (i + k) mod N.
inline Window time_shift(const Window& w, long long k) {
  Window out = w;
  const auto n = static_cast<long long>(w.size());
  if (n == 0) return out;
  const long long s = ((k % n) + n) % n;
  for (long long i = 0; i < n; ++i) out.samples[(i + s) % n] = w.samples[i];
  return out;
}

inline Window mask(const Window& w, std::size_t start, std::size_t len) {
  if (start > w.size() || len > w.size() - start)
    throw DataError("mask: span [" + std::to_string(start) + ", " + std::to_string(start + len) +
                    ") outside window of " + std::to_string(w.size()) + " samples");
  Window out = w;
  for (std::size_t i = start; i < start + len; ++i) out.samples[i] = {0.0, 0.0, 0.0};
  return out;
}

inline Window add_noise(const Window& w, double amplitude, std::uint64_t seed) {
  if (!(amplitude >= 0.0)) throw DataError("add_noise: amplitude must be >= 0");
  Window out = w;
  if (amplitude == 0.0) return out;
  Rng rng(seed);
  for (auto& s : out.samples)
    for (auto& v : s) v += rng.uniform(-amplitude, amplitude);
  return out;
}

inline double det3(const Matrix3& r) {
  return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
         r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
}

inline bool is_rotation(const Matrix3& r, double tol = 1e-9) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k][i] * r[k][j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  return std::abs(det3(r) - 1.0) <= tol;
}

inline Window rotate(const Window& w, const Matrix3& r) {
  if (!is_rotation(r)) throw DataError("rotate: matrix is not a proper rotation (R^T R = I, det = +1)");
  Window out = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& v = w.samples[i];
    for (int a = 0; a < 3; ++a) out.samples[i][a] = r[a][0] * v[0] + r[a][1] * v[1] + r[a][2] * v[2];
  }
  return out;
}

namespace detail {

// cos/sin with exact values at multiples of 90 degrees.
inline std::pair<double, double> cos_sin_degrees(double degrees) {
  const double q = degrees / 90.0;
  if (q == std::round(q)) {
    const long long k = ((static_cast<long long>(q) % 4) + 4) % 4;
    constexpr double c[4] = {1, 0, -1, 0};
    constexpr double s[4] = {0, 1, 0, -1};
    return {c[k], s[k]};
  }
  const double rad = degrees * M_PI / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace detail

/// Readings of a sensor whose body frame is turned by `degrees` about `axis`
/// (right-hand rule): a fixed vector v is observed as R^T v. Turning the
/// device 90 degrees about z maps (x, y, z) to (y, -x, z).
inline Matrix3 sensor_rotation(char axis, double degrees) {
  const auto [c, s] = detail::cos_sin_degrees(degrees);
  switch (axis) {
    case 'x': return {{{1, 0, 0}, {0, c, s}, {0, -s, c}}};
    case 'y': return {{{c, 0, -s}, {0, 1, 0}, {s, 0, c}}};
    case 'z': return {{{c, s, 0}, {-s, c, 0}, {0, 0, 1}}};
  }
  throw ConfigError(std::string("sensor_rotation: unknown axis '") + axis + "'");
}

/// Output axis a takes input axis perm[a]. Odd permutations also flip the
/// sign of output axis 0 so the result stays a proper rotation.
inline Matrix3 axis_permutation(const std::array<int, 3>& perm) {
  std::array<int, 3> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != std::array<int, 3>{0, 1, 2}) throw ConfigError("axis_permutation: not a permutation of {0, 1, 2}");
  int inversions = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) inversions += perm[i] > perm[j];
  Matrix3 r{};
  for (int a = 0; a < 3; ++a) r[a][perm[a]] = 1.0;
  if (inversions % 2) r[0][perm[0]] = -1.0;
  return r;
}

// ---- config-text form: "aug = rotate; axis = z; degrees = 90" ----

struct TimeShiftSpec {
  long long k = 0;
};
struct MaskSpec {
  std::size_t start = 0, len = 0;
};
struct NoiseSpec {
  double amplitude = 0.0;
  std::uint64_t seed = 0;
};
struct RotateSpec {
  Matrix3 r = identity3();
};

using SensoryAugSpec = std::variant<TimeShiftSpec, MaskSpec, NoiseSpec, RotateSpec>;

inline SensoryAugSpec parse_sensory_aug(std::string_view text) {
  std::map<std::string, std::string> kv;
  for (const auto& part : split(text, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("sensory aug: expected key = value, got '" + part + "'");
    kv[std::string(trim(std::string_view(part).substr(0, eq)))] = std::string(trim(std::string_view(part).substr(eq + 1)));
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("sensory aug: missing key '" + key + "'");
    auto v = it->second;
    kv.erase(it);
    return v;
  };
  auto number = [&](const std::string& key) {
    double v;
    if (!parse_double(take(key), v)) throw ConfigError("sensory aug: '" + key + "' is not a number");
    return v;
  };
  auto integer = [&](const std::string& key) {
    long long v;
    if (!parse_int(take(key), v)) throw ConfigError("sensory aug: '" + key + "' is not an integer");
    return v;
  };

  const auto kind = take("aug");
  SensoryAugSpec spec;
  if (kind == "time_shift") {
    spec = TimeShiftSpec{integer("k")};
  } else if (kind == "mask") {
    const auto start = integer("start"), len = integer("len");
    if (start < 0 || len < 0) throw ConfigError("sensory aug: mask start/len must be >= 0");
    spec = MaskSpec{std::size_t(start), std::size_t(len)};
  } else if (kind == "noise") {
    NoiseSpec n{number("amplitude"), 0};
    if (kv.count("seed")) n.seed = static_cast<std::uint64_t>(integer("seed"));
    if (n.amplitude < 0) throw ConfigError("sensory aug: noise amplitude must be >= 0");
    spec = n;
  } else if (kind == "rotate") {
    const auto axis = take("axis");
    if (axis.size() != 1) throw ConfigError("sensory aug: axis must be x, y or z");
    spec = RotateSpec{sensor_rotation(axis[0], number("degrees"))};
  } else {
    throw ConfigError("sensory aug: unknown kind '" + kind + "'");
  }
  if (!kv.empty()) throw ConfigError("sensory aug: unknown key '" + kv.begin()->first + "'");
  return spec;
}

inline Window apply_sensory_aug(const Window& w, const SensoryAugSpec& spec) {
  return std::visit(
      [&](const auto& s) -> Window {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TimeShiftSpec>) return time_shift(w, s.k);
        else if constexpr (std::is_same_v<T, MaskSpec>) return mask(w, s.start, s.len);
        else if constexpr (std::is_same_v<T, NoiseSpec>) return add_noise(w, s.amplitude, s.seed);
        else return rotate(w, s.r);
      },
      spec);
}

}  // namespace imuspec
