#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "image.hpp"

namespace imuspec {

using Sample = std::array<double, 3>;

/// One contiguous triaxial recording. label holds one class id per sample,
/// -1 where the sample is unlabeled.
struct TriaxialSeries {
  std::vector<double> t;
  std::vector<double> x, y, z;
  std::vector<int> label;
  double rate_hz = 0.0;
  std::string subject_id;

  std::size_t size() const { return t.size(); }

  void validate() const {
    const auto n = t.size();
    if (x.size() != n || y.size() != n || z.size() != n || (!label.empty() && label.size() != n))
      throw DataError("series " + subject_id + ": column lengths differ");
    if (!(rate_hz > 0.0)) throw DataError("series " + subject_id + ": rate_hz must be positive");
    for (std::size_t i = 1; i < n; ++i)
      if (!(t[i] > t[i - 1])) throw DataError("series " + subject_id + ": t not strictly increasing at sample " + std::to_string(i));
    if (n >= 2) {
      const double md = median_dt();
      if (std::abs(1.0 / md - rate_hz) > 0.01 * rate_hz)
        throw DataError("series " + subject_id + ": rate_hz inconsistent with median sample spacing");
    }
  }

  double median_dt() const {
    std::vector<double> d;
    d.reserve(t.size());
    for (std::size_t i = 1; i < t.size(); ++i) d.push_back(t[i] - t[i - 1]);
    if (d.empty()) return 0.0;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    double m = d[d.size() / 2];
    if (d.size() % 2 == 0) {
      const double lo = *std::max_element(d.begin(), d.begin() + d.size() / 2);
      m = 0.5 * (m + lo);
    }
    return m;
  }
};

struct Window {
  std::vector<Sample> samples;
  double rate_hz = 0.0;
  int label = -1;
  std::string subject_id;
  std::size_t origin_index = 0;

  std::size_t size() const { return samples.size(); }
  bool operator==(const Window&) const = default;
};

struct SubjectSplit {
  std::set<std::string> train, val, test;
};

struct SplitRatio {
  double train = 0.6, val = 0.2, test = 0.2;
};

struct ImageCorpus {
  std::vector<Image> images;
  ChannelStats stats;

  /// Per-channel population mean/std over every pixel of every image
  /// (single pass, Welford).
  void recompute_stats() {
    if (images.empty()) throw DataError("image corpus is empty");
    for (int ch = 0; ch < 3; ++ch) {
      double mean = 0.0, m2 = 0.0;
      std::size_t count = 0;
      for (const auto& img : images) {
        if (img.height != images.front().height || img.width != images.front().width)
          throw ShapeError("image corpus: all images must share one size");
        const double* p = img.data.data() + ch * img.plane();
        for (std::size_t i = 0; i < img.plane(); ++i) {
          ++count;
          const double d = p[i] - mean;
          mean += d / double(count);
          m2 += d * (p[i] - mean);
        }
      }
      stats.mean[ch] = mean;
      stats.std[ch] = std::sqrt(m2 / double(count));
    }
  }
};

// ---- CSV ingestion ----

struct CsvSchema {
  std::string subject = "subject";
  std::string label = "label";
  std::string t = "t";
  std::string x = "x";
  std::string y = "y";
  std::string z = "z";
  // A gap in t larger than this starts a new recording for the same subject.
  double max_gap_seconds = 1.0;
};

struct IngestResult {
  std::vector<TriaxialSeries> series;
  std::size_t rejected_rows = 0;
};

namespace detail {

inline void finish_series(TriaxialSeries& s, std::vector<TriaxialSeries>& out) {
  if (s.t.empty()) return;
  if (s.t.size() >= 2) {
    s.rate_hz = 1.0 / s.median_dt();
  } else {
    s.rate_hz = 1.0;  // single-sample recordings carry no rate information
  }
  if (std::all_of(s.label.begin(), s.label.end(), [](int l) { return l < 0; })) s.label.clear();
  out.push_back(std::move(s));
  s = TriaxialSeries{};
}

}  // namespace detail

inline IngestResult parse_csv(std::istream& in, const CsvSchema& schema = {}) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw DataError("no data rows");
  const auto header = split(line, ',');
  auto column = [&](const std::string& name, bool required) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    if (required) throw ConfigError("csv schema: missing column '" + name + "'");
    return -1;
  };
  const int c_subject = column(schema.subject, true);
  const int c_label = column(schema.label, false);
  const int c_t = column(schema.t, true);
  const int c_x = column(schema.x, true), c_y = column(schema.y, true), c_z = column(schema.z, true);

  // Per subject, in order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, TriaxialSeries> open;
  IngestResult result;
  std::vector<std::pair<std::string, TriaxialSeries>> finished;

  std::size_t row = 1, data_rows = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    ++data_rows;
    const auto cells = split(line, ',');
    if (cells.size() != header.size())
      throw DataError("csv row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields");
    double t, x, y, z;
    if (!parse_double(cells[c_t], t) || !parse_double(cells[c_x], x) || !parse_double(cells[c_y], y) ||
        !parse_double(cells[c_z], z))
      throw DataError("csv row " + std::to_string(row) + ": unparseable number");
    if (!std::isfinite(t) || !std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) {
      ++result.rejected_rows;
      continue;
    }
    int label = -1;
    if (c_label >= 0 && !cells[c_label].empty()) {
      long long l;
      if (!parse_int(cells[c_label], l) || l < 0)
        throw DataError("csv row " + std::to_string(row) + ": label must be a non-negative integer");
      label = static_cast<int>(l);
    }
    const auto& subject = cells[c_subject];
    auto it = open.find(subject);
    if (it == open.end()) {
      order.push_back(subject);
      it = open.emplace(subject, TriaxialSeries{}).first;
      it->second.subject_id = subject;
    }
    auto& s = it->second;
    if (!s.t.empty()) {
      if (!(t > s.t.back()))
        throw DataError("csv row " + std::to_string(row) + ": non-monotone t for subject " + subject);
      if (t - s.t.back() > schema.max_gap_seconds) {
        std::vector<TriaxialSeries> tmp;
        detail::finish_series(s, tmp);
        finished.emplace_back(subject, std::move(tmp.front()));
        s.subject_id = subject;
      }
    }
    s.t.push_back(t);
    s.x.push_back(x);
    s.y.push_back(y);
    s.z.push_back(z);
    s.label.push_back(label);
  }
  if (data_rows == 0) throw DataError("no data rows");

  for (const auto& subject : order) {
    for (auto& [sub, series] : finished)
      if (sub == subject) result.series.push_back(std::move(series));
    detail::finish_series(open[subject], result.series);
  }
  return result;
}

inline IngestResult ingest_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path);
  return parse_csv(f, schema);
}

// ---- resampling / windowing ----

/// Linear-interpolation resampling onto a uniform grid t0 + i/target_hz
/// covering [t0, t_end]. Labels take the nearest preceding sample's label.
inline TriaxialSeries resample(const TriaxialSeries& s, double target_hz) {
  if (!(target_hz > 0.0)) throw DataError("resample: target rate must be positive");
  if (s.size() < 2) throw DataError("resample: series " + s.subject_id + " needs at least 2 samples");

  const double dt = 1.0 / target_hz;
  bool uniform = true;
  for (std::size_t i = 1; i < s.size() && uniform; ++i)
    uniform = std::abs((s.t[i] - s.t[i - 1]) - dt) <= 1e-9 * dt;
  if (uniform) {
    TriaxialSeries out = s;
    out.rate_hz = target_hz;
    return out;
  }

  TriaxialSeries out;
  out.subject_id = s.subject_id;
  out.rate_hz = target_hz;
  const double t0 = s.t.front(), t_end = s.t.back();
  const auto n = static_cast<std::size_t>(std::floor((t_end - t0) * target_hz + 1e-9)) + 1;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = t0 + double(i) * dt;
    while (j + 2 < s.size() && s.t[j + 1] <= g) ++j;
    const double f = std::clamp((g - s.t[j]) / (s.t[j + 1] - s.t[j]), 0.0, 1.0);
    auto lerp = [f](double a, double b) { return f == 0.0 ? a : a + (b - a) * f; };
    out.t.push_back(g);
    out.x.push_back(lerp(s.x[j], s.x[j + 1]));
    out.y.push_back(lerp(s.y[j], s.y[j + 1]));
    out.z.push_back(lerp(s.z[j], s.z[j + 1]));
    if (!s.label.empty()) out.label.push_back(f >= 1.0 ? s.label[j + 1] : s.label[j]);
  }
  return out;
}

inline std::size_t window_length(double window_seconds, double rate_hz) {
  const double n = std::round(window_seconds * rate_hz);
  if (!(n >= 2)) throw DataError("window must span at least 2 samples");
  return static_cast<std::size_t>(n);
}

// Majority over labeled samples; ties go to the lower class id.
inline int majority_label(const std::vector<int>& labels, std::size_t begin, std::size_t end) {
  std::map<int, std::size_t> counts;
  for (std::size_t i = begin; i < end; ++i)
    if (labels[i] >= 0) ++counts[labels[i]];
  int best = -1;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts)
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  return best;
}

inline std::vector<Window> make_windows(const TriaxialSeries& s, double window_seconds, double overlap_fraction) {
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw DataError("make_windows: overlap fraction must be in [0, 1)");
  const std::size_t n = window_length(window_seconds, s.rate_hz);
  const auto hop = static_cast<std::size_t>(std::max(1.0, std::round(double(n) * (1.0 - overlap_fraction))));
  std::vector<Window> out;
  for (std::size_t origin = 0; origin + n <= s.size(); origin += hop) {
    Window w;
    w.rate_hz = s.rate_hz;
    w.subject_id = s.subject_id;
    w.origin_index = origin;
    w.samples.reserve(n);
    for (std::size_t i = origin; i < origin + n; ++i) w.samples.push_back({s.x[i], s.y[i], s.z[i]});
    w.label = s.label.empty() ? -1 : majority_label(s.label, origin, origin + n);
    out.push_back(std::move(w));
  }
  return out;
}

// ---- subject splits ----

namespace detail {

inline std::vector<std::size_t> ratio_sizes(std::size_t n, const std::vector<double>& ratios) {
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (double r : ratios) {
    sizes.push_back(static_cast<std::size_t>(std::floor(r * double(n) + 1e-9)));
    used += sizes.back();
  }
  for (std::size_t i = 0; used < n; i = (i + 1) % sizes.size(), ++used) ++sizes[i];
  return sizes;
}

inline std::vector<std::string> shuffled_subjects(const std::set<std::string>& subjects, std::uint64_t seed) {
  std::vector<std::string> v(subjects.begin(), subjects.end());
  Rng rng(derive_seed(seed, 0x5b1e));
  rng.shuffle(v);
  return v;
}

}  // namespace detail

inline SubjectSplit split_subjects(const std::set<std::string>& subjects, SplitRatio ratio, std::uint64_t seed) {
  if (!(ratio.train > 0 && ratio.val > 0 && ratio.test > 0) ||
      std::abs(ratio.train + ratio.val + ratio.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");
  if (subjects.size() < 3) throw DataError("split_subjects: need at least 3 subjects, got " + std::to_string(subjects.size()));
  const auto order = detail::shuffled_subjects(subjects, seed);
  const auto sizes = detail::ratio_sizes(order.size(), {ratio.train, ratio.val, ratio.test});
  SubjectSplit split;
  std::size_t i = 0;
  for (; i < sizes[0]; ++i) split.train.insert(order[i]);
  for (; i < sizes[0] + sizes[1]; ++i) split.val.insert(order[i]);
  for (; i < order.size(); ++i) split.test.insert(order[i]);
  return split;
}

/// k folds; each subject is a test subject in exactly one fold and the
/// remaining subjects split train/val in the train:val proportion of ratio.
inline std::vector<SubjectSplit> kfold_subjects(const std::set<std::string>& subjects, int k, std::uint64_t seed,
                                                SplitRatio ratio = {}) {
  if (k < 2) throw ConfigError("kfold_subjects: k must be >= 2");
  if (static_cast<std::size_t>(k) > subjects.size())
    throw DataError("kfold_subjects: k=" + std::to_string(k) + " exceeds subject count " + std::to_string(subjects.size()));
  const auto order = detail::shuffled_subjects(subjects, seed);
  const auto fold_sizes = detail::ratio_sizes(order.size(), std::vector<double>(k, 1.0 / k));
  const double tv = ratio.train + ratio.val;
  std::vector<SubjectSplit> folds;
  std::size_t start = 0;
  for (int f = 0; f < k; ++f) {
    SubjectSplit split;
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i >= start && i < start + fold_sizes[f])
        split.test.insert(order[i]);
      else
        rest.push_back(order[i]);
    }
    const auto sizes = detail::ratio_sizes(rest.size(), {ratio.train / tv, ratio.val / tv});
    for (std::size_t i = 0; i < rest.size(); ++i) (i < sizes[0] ? split.train : split.val).insert(rest[i]);
    folds.push_back(std::move(split));
    start += fold_sizes[f];
  }
  return folds;
}

inline std::vector<Window> select_subjects(const std::vector<Window>& windows, const std::set<std::string>& subjects) {
  std::vector<Window> out;
  for (const auto& w : windows)
    if (subjects.count(w.subject_id)) out.push_back(w);
  return out;
}

inline std::set<std::string> subjects_of(const std::vector<Window>& windows) {
  std::set<std::string> s;
  for (const auto& w : windows) s.insert(w.subject_id);
  return s;
}

// ---- synthetic IMU data ----

enum class Envelope { constant, pulsed, ramp };

/// Generative description of one activity class: a sinusoidal carrier per
/// axis, shaped by an amplitude envelope, plus a static offset (gravity) and
/// uniform noise.
struct ImuClassSpec {
  Sample carrier_hz{2.0, 2.0, 2.0};
  Sample amplitude{1.0, 1.0, 1.0};
  Sample offset{0.0, 0.0, 0.0};
  Envelope envelope = Envelope::constant;
  double envelope_hz = 1.0;
  double noise = 0.0;

  bool operator==(const ImuClassSpec&) const = default;
};

struct SynthImuOptions {
  std::vector<ImuClassSpec> classes;
  int n_subjects = 5;
  int n_windows_per_class = 40;  // per subject
  double window_seconds = 2.0;
  double rate_hz = 50.0;
  double subject_gain_spread = 0.2;
  double subject_freq_spread = 0.1;
  std::uint64_t seed = 0;
};

/// Three activity-like classes used by the desk experiments.
inline std::vector<ImuClassSpec> default_class_specs() {
  return {
      {{2.0, 2.0, 4.0}, {1.0, 0.5, 0.6}, {0.0, 0.0, 1.0}, Envelope::constant, 1.0, 0.4},
      {{3.0, 3.0, 6.0}, {1.4, 1.0, 0.9}, {0.0, 0.0, 1.0}, Envelope::pulsed, 1.5, 0.4},
      {{1.5, 4.5, 1.5}, {0.6, 0.9, 0.5}, {0.0, 0.7, 0.7}, Envelope::ramp, 0.5, 0.4},
  };
}

/// Pairs of classes that cannot be told apart: identical generative specs.
inline std::vector<std::pair<int, int>> degenerate_class_pairs(const std::vector<ImuClassSpec>& classes) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t a = 0; a < classes.size(); ++a)
    for (std::size_t b = a + 1; b < classes.size(); ++b)
      if (classes[a] == classes[b]) out.emplace_back(int(a), int(b));
  return out;
}

inline std::vector<Window> synth_imu_dataset(const SynthImuOptions& opt) {
  if (opt.classes.size() < 2) throw ConfigError("synth_imu_dataset: need at least 2 classes");
  if (opt.n_subjects < 1 || opt.n_windows_per_class < 1) throw ConfigError("synth_imu_dataset: counts must be >= 1");
  const std::size_t n = window_length(opt.window_seconds, opt.rate_hz);
  std::vector<Window> out;
  for (int s = 0; s < opt.n_subjects; ++s) {
    Rng subject_rng(derive_seed(opt.seed, 1, s));
    Sample gain, phase;
    for (int a = 0; a < 3; ++a) gain[a] = 1.0 + subject_rng.uniform(-opt.subject_gain_spread, opt.subject_gain_spread);
    for (int a = 0; a < 3; ++a) phase[a] = subject_rng.uniform(0.0, 2.0 * M_PI);
    const double freq_scale = 1.0 + subject_rng.uniform(-opt.subject_freq_spread, opt.subject_freq_spread);
    char name[32];
    std::snprintf(name, sizeof name, "s%02d", s);

    for (std::size_t c = 0; c < opt.classes.size(); ++c) {
      const auto& spec = opt.classes[c];
      for (int i = 0; i < opt.n_windows_per_class; ++i) {
        Rng rng(derive_seed(opt.seed, 2, derive_seed(s, c, i)));
        const double t0 = rng.uniform(0.0, 60.0);
        Window w;
        w.rate_hz = opt.rate_hz;
        w.label = static_cast<int>(c);
        w.subject_id = name;
        w.origin_index = static_cast<std::size_t>(i) * n;
        w.samples.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
          const double t = t0 + double(k) / opt.rate_hz;
          double env = 1.0;
          switch (spec.envelope) {
            case Envelope::constant: break;
            case Envelope::pulsed: env = 0.5 + 0.5 * std::cos(2.0 * M_PI * spec.envelope_hz * t); break;
            case Envelope::ramp: env = std::fmod(spec.envelope_hz * t, 1.0); break;
          }
          for (int a = 0; a < 3; ++a) {
            const double f = spec.carrier_hz[a] * freq_scale;
            w.samples[k][a] = spec.offset[a] +
                              gain[a] * spec.amplitude[a] * env * std::sin(2.0 * M_PI * f * t + phase[a]) +
                              spec.noise * rng.uniform(-1.0, 1.0);
          }
        }
        out.push_back(std::move(w));
      }
    }
  }
  return out;
}

// ---- synthetic image corpus ----

enum class ImageFamily { grating, blocks, blobs };

inline Image synth_image(ImageFamily family, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  switch (family) {
    case ImageFamily::grating: {
      const double theta = rng.uniform(0.0, M_PI);
      const double cycles = rng.uniform(1.5, 12.0);
      const double ct = std::cos(theta), st = std::sin(theta);
      for (int ch = 0; ch < 3; ++ch) {
        const double base = rng.uniform(0.25, 0.75);
        const double amp = rng.uniform(0.0, std::min(base, 1.0 - base));
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) {
            const double u = (c * ct + r * st) / double(w);
            img.at(ch, r, c) = base + amp * std::sin(2.0 * M_PI * cycles * u + phi);
          }
      }
      break;
    }
    case ImageFamily::blocks: {
      for (int ch = 0; ch < 3; ++ch) {
        const double bg = rng.uniform();
        for (std::size_t i = 0; i < img.plane(); ++i) img.data[ch * img.plane() + i] = bg;
      }
      const int count = 3 + static_cast<int>(rng.below(6));
      for (int b = 0; b < count; ++b) {
        const int r0 = static_cast<int>(rng.below(h)), c0 = static_cast<int>(rng.below(w));
        const int r1 = std::min(h, r0 + 1 + static_cast<int>(rng.below(h / 2 + 1)));
        const int c1 = std::min(w, c0 + 1 + static_cast<int>(rng.below(w / 2 + 1)));
        const Sample color{rng.uniform(), rng.uniform(), rng.uniform()};
        for (int ch = 0; ch < 3; ++ch)
          for (int r = r0; r < r1; ++r)
            for (int c = c0; c < c1; ++c) img.at(ch, r, c) = color[ch];
      }
      break;
    }
    case ImageFamily::blobs: {
      const Sample bg{rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5)};
      for (int ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < img.plane(); ++i) img.data[ch * img.plane() + i] = bg[ch];
      const int count = 2 + static_cast<int>(rng.below(5));
      for (int b = 0; b < count; ++b) {
        const double cr = rng.uniform(0.0, h), cc = rng.uniform(0.0, w);
        const double sigma = rng.uniform(0.05, 0.25) * std::min(h, w);
        const Sample color{rng.uniform(-0.5, 1.0), rng.uniform(-0.5, 1.0), rng.uniform(-0.5, 1.0)};
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c) {
            const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
            const double g = std::exp(-0.5 * d2 / (sigma * sigma));
            for (int ch = 0; ch < 3; ++ch) img.at(ch, r, c) += color[ch] * g;
          }
      }
      break;
    }
  }
  for (auto& v : img.data) v = std::clamp(v, 0.0, 1.0);
  return img;
}

inline ImageCorpus synth_image_corpus(int n, int h, int w, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synth_image_corpus: n must be >= 1");
  if (h < 1 || w < 1) throw ConfigError("synth_image_corpus: image size must be positive");
  ImageCorpus corpus;
  corpus.images.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto s = derive_seed(seed, 3, i);
    const auto family = static_cast<ImageFamily>(Rng(s).below(3));
    corpus.images.push_back(synth_image(family, h, w, derive_seed(s, 1)));
  }
  corpus.recompute_stats();
  return corpus;
}

}  // namespace imuspec
