#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "image.hpp"

namespace imuspec {

struct SpectrogramConfig {
  int nfft = 32;
  int noverlap = 30;
  double log_floor_db = -80.0;
  int out_h = 96;
  int out_w = 128;
  ChannelStats stats;

  int hop() const { return nfft - noverlap; }

  void validate() const {
    if (nfft < 2 || (nfft & (nfft - 1)) != 0) throw ConfigError("spectrogram: nfft must be a power of two >= 2");
    if (noverlap < 0 || noverlap >= nfft) throw ConfigError("spectrogram: noverlap must be in [0, nfft)");
    if (out_h < 1 || out_w < 1) throw ConfigError("spectrogram: output size must be positive");
  }
};

inline constexpr double kLogEpsilon = 1e-10;

/// Periodic Hann window of length n.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

/// Magnitude spectrogram, frequency-major: mag[f * frames + t].
struct Spectrum {
  int bins = 0;
  int frames = 0;
  std::vector<double> mag;

  double at(int f, int t) const { return mag[std::size_t(f) * frames + t]; }
};

namespace detail {

// One real-to-complex FFTW plan per transform size. The planner is not
// thread-safe, so plans are per thread.
class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* output() const { return out_; }
  void execute() { fftw_execute(plan_); }

  static RealFft& get(int n) {
    thread_local std::map<int, std::unique_ptr<RealFft>> cache;
    auto& slot = cache[n];
    if (!slot) slot = std::make_unique<RealFft>(n);
    return *slot;
  }

 private:
  int n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

inline Spectrum stft_magnitude(std::span<const double> signal, const SpectrogramConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<long long>(signal.size());
  if (n < cfg.nfft)
    throw DataError("nfft exceeds window length: need at least " + std::to_string(cfg.nfft) + " samples, got " +
                    std::to_string(n));
  const int hop = cfg.hop();
  Spectrum s;
  s.bins = cfg.nfft / 2 + 1;
  s.frames = static_cast<int>((n - cfg.nfft) / hop + 1);
  s.mag.assign(std::size_t(s.bins) * s.frames, 0.0);

  const auto window = hann_window(cfg.nfft);
  auto& fft = detail::RealFft::get(cfg.nfft);
  for (int t = 0; t < s.frames; ++t) {
    const double* frame = signal.data() + std::size_t(t) * hop;
    double* in = fft.input();
    for (int i = 0; i < cfg.nfft; ++i) in[i] = frame[i] * window[i];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (int f = 0; f < s.bins; ++f) s.mag[std::size_t(f) * s.frames + t] = std::hypot(out[f][0], out[f][1]);
  }
  return s;
}

/// Triaxial window to a native-resolution RGB spectrogram: R/G/B carry the
/// x/y/z log-magnitudes, row 0 is Nyquist and the last row is DC.
///
/// All three channels share one affine dB-to-[0,1] map. The floor is
/// log_floor_db; the ceiling is the largest magnitude any frame of this window
/// could reach (peak |sample| times the Hann window sum). Both depend only on
/// the multiset of sample magnitudes, so a cyclic time shift or an axis
/// permutation of the window leaves the map unchanged.
inline Image to_rgb_spectrogram(const Window& w, const SpectrogramConfig& cfg) {
  cfg.validate();
  std::array<std::vector<double>, 3> axes;
  double peak = 0.0;
  for (int a = 0; a < 3; ++a) {
    axes[a].resize(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      axes[a][i] = w.samples[i][a];
      peak = std::max(peak, std::abs(w.samples[i][a]));
    }
  }
  double window_sum = 0.0;
  for (double v : hann_window(cfg.nfft)) window_sum += v;
  const double floor_db = cfg.log_floor_db;
  const double ceil_db = 20.0 * std::log10(peak * window_sum + kLogEpsilon);
  const double range = ceil_db - floor_db;

  Image img;
  for (int a = 0; a < 3; ++a) {
    const auto spec = stft_magnitude(axes[a], cfg);
    if (a == 0) img = Image(spec.bins, spec.frames);
    for (int f = 0; f < spec.bins; ++f) {
      const int row = spec.bins - 1 - f;
      for (int t = 0; t < spec.frames; ++t) {
        const double db = std::max(20.0 * std::log10(spec.at(f, t) + kLogEpsilon), floor_db);
        img.at(a, row, t) = range > 0.0 ? std::clamp((db - floor_db) / range, 0.0, 1.0) : 0.0;
      }
    }
  }
  return img;
}

/// Full conversion used as model input: spectrogram, resize, normalize.
inline Image window_to_input(const Window& w, const SpectrogramConfig& cfg) {
  return normalize(resize_bilinear(to_rgb_spectrogram(w, cfg), cfg.out_h, cfg.out_w), cfg.stats);
}

// ---- nfft / noverlap grid search ----

struct GridEntry {
  int nfft = 0;
  int noverlap = 0;
  double score = 0.0;
};

struct GridResult {
  SpectrogramConfig best;
  std::vector<GridEntry> table;
};

inline std::vector<std::pair<int, int>> spectro_grid() {
  std::vector<std::pair<int, int>> g;
  for (int nfft : {32, 64, 128, 256})
    for (int d : {2, 4, 8, 16}) g.emplace_back(nfft, nfft - d);
  return g;
}

inline std::vector<std::pair<int, int>> feasible_spectro_grid(std::size_t window_samples) {
  auto g = spectro_grid();
  std::erase_if(g, [&](const auto& p) { return std::size_t(p.first) > window_samples; });
  return g;
}

/// Evaluates every feasible (nfft, noverlap) with `score` (higher is better).
/// Ties prefer the smaller nfft, then the larger noverlap.
inline GridResult grid_search_spectro(const SpectrogramConfig& base, std::size_t window_samples,
                                      const std::function<double(const SpectrogramConfig&)>& score) {
  const auto grid = feasible_spectro_grid(window_samples);
  if (grid.empty()) throw DataError("grid search: no feasible nfft for a " + std::to_string(window_samples) + "-sample window");
  GridResult result;
  const GridEntry* best = nullptr;
  result.table.reserve(grid.size());
  for (const auto& [nfft, noverlap] : grid) {
    SpectrogramConfig cfg = base;
    cfg.nfft = nfft;
    cfg.noverlap = noverlap;
    result.table.push_back({nfft, noverlap, score(cfg)});
  }
  for (const auto& e : result.table) {
    if (!best || e.score > best->score ||
        (e.score == best->score && (e.nfft < best->nfft || (e.nfft == best->nfft && e.noverlap > best->noverlap))))
      best = &e;
  }
  result.best = base;
  result.best.nfft = best->nfft;
  result.best.noverlap = best->noverlap;
  return result;
}

}  // namespace imuspec
