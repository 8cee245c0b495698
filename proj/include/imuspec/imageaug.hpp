#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "image.hpp"

namespace imuspec {

/// Cyclic shift of columns to the right by s (mod width); rows untouched.
inline Image translate_x(const Image& img, long long s) {
  const long long w = img.width;
  if (w == 0) return img;
  const long long k = ((s % w) + w) % w;
  if (k == 0) return img;
  Image out(img.height, img.width);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < img.height; ++r)
      for (long long c = 0; c < w; ++c) out.at(ch, r, static_cast<int>((c + k) % w)) = img.at(ch, r, static_cast<int>(c));
  return out;
}

/// Near-equal contiguous column chunks; the first width % n chunks are one
/// column wider. Returns chunk start offsets plus the end sentinel.
inline std::vector<int> chunk_bounds(int width, int n_chunks) {
  std::vector<int> b{0};
  const int base = width / n_chunks, rem = width % n_chunks;
  for (int i = 0; i < n_chunks; ++i) b.push_back(b.back() + base + (i < rem ? 1 : 0));
  return b;
}

/// Output chunk i is input chunk perm[i].
inline Image permute_x(const Image& img, int n_chunks, const std::vector<int>& perm) {
  if (n_chunks < 2 || n_chunks > img.width)
    throw std::invalid_argument("permute_x: chunk count must be in [2, width]");
  if (static_cast<int>(perm.size()) != n_chunks)
    throw std::invalid_argument("permute_x: permutation length differs from chunk count");
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n_chunks; ++i)
    if (sorted[i] != i) throw std::invalid_argument("permute_x: not a permutation of 0..n-1");

  const auto bounds = chunk_bounds(img.width, n_chunks);
  Image out(img.height, img.width);
  int dst = 0;
  for (int i = 0; i < n_chunks; ++i) {
    const int src0 = bounds[perm[i]], src1 = bounds[perm[i] + 1];
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < img.height; ++r)
      {
        const double* row = img.data.data() + ch * img.plane() + std::size_t(r) * img.width;
        std::copy(row + src0, row + src1, &out.at(ch, r, 0) + dst);
      }
    dst += src1 - src0;
  }
  return out;
}

// ---- HSV ----

struct Hsv {
  double h, s, v;  // h in degrees [0, 360)
};

inline Hsv rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  Hsv out{0.0, mx > 0.0 ? d / mx : 0.0, mx};
  if (d > 0.0) {
    double h;
    if (mx == r)
      h = (g - b) / d;
    else if (mx == g)
      h = 2.0 + (b - r) / d;
    else
      h = 4.0 + (r - g) / d;
    h *= 60.0;
    if (h < 0.0) h += 360.0;
    out.h = h;
  }
  return out;
}

// The max channel is always exactly v.
inline std::array<double, 3> hsv_to_rgb(Hsv c) {
  if (c.s <= 0.0) return {c.v, c.v, c.v};
  double h = std::fmod(c.h, 360.0);
  if (h < 0.0) h += 360.0;
  h /= 60.0;
  const int sector = std::min(static_cast<int>(h), 5);
  const double f = h - sector;
  const double p = c.v * (1.0 - c.s);
  const double q = c.v * (1.0 - c.s * f);
  const double t = c.v * (1.0 - c.s * (1.0 - f));
  switch (sector) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

inline Image hue_rotate(const Image& img, double degrees) {
  if (std::fmod(degrees, 360.0) == 0.0) return img;
  Image out(img.height, img.width);
  const std::size_t n = img.plane();
  const double* r = img.data.data();
  const double* g = r + n;
  const double* b = g + n;
  for (std::size_t i = 0; i < n; ++i) {
    auto hsv = rgb_to_hsv(r[i], g[i], b[i]);
    hsv.h = std::fmod(hsv.h + degrees, 360.0);
    if (hsv.h < 0.0) hsv.h += 360.0;
    const auto rgb = hsv_to_rgb(hsv);
    for (int ch = 0; ch < 3; ++ch) out.data[ch * n + i] = rgb[ch];
  }
  return out;
}

/// Per-pixel, per-channel U(-a, a) noise, clamped to [0, 1].
inline Image jitter(const Image& img, double a, std::uint64_t seed) {
  if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("jitter: amplitude must be in [0, 1]");
  if (a == 0.0) return img;
  Image out = img;
  Rng rng(seed);
  for (auto& v : out.data) v = std::clamp(v + rng.uniform(-a, a), 0.0, 1.0);
  return out;
}

// ---- policy ----

enum AugFlag : unsigned { kTranslate = 1, kPermute = 2, kHue = 4, kJitter = 8, kAllAugs = 15 };

/// Augmentation chain TranslateX -> PermuteX -> Hue -> Jitter, each stage
/// gated by an independent Bernoulli(p) draw.
struct AugPolicy {
  unsigned enabled = kAllAugs;
  double p = 0.5;
  double jitter_max = 0.1;
  double hue_max_deg = 360.0;
  std::vector<int> permute_chunks{2, 3, 4};

  void validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augment: p must be in [0, 1]");
    if (!(jitter_max >= 0.0 && jitter_max <= 1.0)) throw ConfigError("augment: jitter_max must be in [0, 1]");
    if (!(hue_max_deg >= 0.0 && hue_max_deg <= 360.0)) throw ConfigError("augment: hue_max_deg must be in [0, 360]");
    if (permute_chunks.empty()) throw ConfigError("augment: permute_chunks must not be empty");
    for (int c : permute_chunks)
      if (c < 2) throw ConfigError("augment: permute chunk counts must be >= 2");
  }
};

/// "T,P,H,J" (any subset, any order, also "TPHJ") to a flag mask.
inline unsigned parse_aug_set(std::string_view text) {
  unsigned mask = 0;
  for (char c : text) {
    switch (c) {
      case 'T': mask |= kTranslate; break;
      case 'P': mask |= kPermute; break;
      case 'H': mask |= kHue; break;
      case 'J': mask |= kJitter; break;
      case ',': case ' ': case '+': break;
      default: throw ConfigError(std::string("augment: unknown augmentation '") + c + "'");
    }
  }
  return mask;
}

inline std::string aug_set_name(unsigned mask) {
  std::string s;
  if (mask & kTranslate) s += 'T';
  if (mask & kPermute) s += 'P';
  if (mask & kHue) s += 'H';
  if (mask & kJitter) s += 'J';
  return s.empty() ? "none" : s;
}

/// Concrete parameters of one pass through the chain; a stage is applied
/// only when its flag is set.
struct AugParams {
  unsigned apply = 0;
  long long shift = 0;
  std::vector<int> perm{0, 1};
  double hue_deg = 0.0;
  double jitter_amp = 0.0;
  std::uint64_t jitter_seed = 0;
};

/// Every parameter is drawn even when its gate is closed, so toggling one
/// stage does not reshuffle the others.
inline AugParams draw_aug_params(int width, const AugPolicy& policy, std::uint64_t seed) {
  Rng rng(seed);
  AugParams a;
  auto gate = [&](unsigned flag) {
    if (rng.uniform() < policy.p && (policy.enabled & flag)) a.apply |= flag;
  };
  gate(kTranslate);
  a.shift = static_cast<long long>(rng.below(std::max(width, 1)));
  gate(kPermute);
  const int chunks = policy.permute_chunks[rng.below(policy.permute_chunks.size())];
  a.perm.resize(chunks);
  std::iota(a.perm.begin(), a.perm.end(), 0);
  rng.shuffle(a.perm);
  if (chunks > width) a.apply &= ~unsigned(kPermute);
  gate(kHue);
  a.hue_deg = rng.uniform(0.0, policy.hue_max_deg);
  gate(kJitter);
  a.jitter_amp = rng.uniform(0.0, policy.jitter_max);
  a.jitter_seed = rng.next();
  return a;
}

inline Image apply_augmentations(const Image& img, const AugParams& a) {
  Image out = img;
  if (a.apply & kTranslate) out = translate_x(out, a.shift);
  if (a.apply & kPermute) out = permute_x(out, static_cast<int>(a.perm.size()), a.perm);
  if (a.apply & kHue) out = hue_rotate(out, a.hue_deg);
  if (a.apply & kJitter) out = jitter(out, a.jitter_amp, a.jitter_seed);
  return out;
}

inline Image augment(const Image& img, const AugPolicy& policy, std::uint64_t seed) {
  return apply_augmentations(img, draw_aug_params(img.width, policy, seed));
}

inline std::pair<Image, Image> sample_view_pair(const Image& img, const AugPolicy& policy, std::uint64_t seed) {
  policy.validate();
  return {augment(img, policy, derive_seed(seed, 0)), augment(img, policy, derive_seed(seed, 1))};
}

}  // namespace imuspec
