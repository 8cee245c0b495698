#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "moco.hpp"
#include "nn.hpp"
#include "sensoraug.hpp"
#include "spectro.hpp"

namespace imuspec {

// ---- metrics ----

struct RunReport {
  int n_classes = 0;
  std::vector<double> precision, recall, f1;
  std::vector<int> support;  // label count per class
  double macro_f1 = 0.0;
  std::string config_hash;
  int fold = -1;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;
};

/// Per-class precision/recall/F1 (0/0 taken as 0). The macro average is the
/// unweighted mean over classes that occur in `labels`; classes never
/// labelled are reported but not averaged.
inline RunReport macro_f1(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("macro_f1: predictions and labels differ in length");
  if (n_classes < 1) throw std::invalid_argument("macro_f1: n_classes must be >= 1");
  std::vector<long long> tp(n_classes), fp(n_classes), fn(n_classes);
  RunReport r;
  r.n_classes = n_classes;
  r.support.assign(n_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], l = labels[i];
    if (p < 0 || p >= n_classes || l < 0 || l >= n_classes)
      throw std::out_of_range("macro_f1: class id outside [0, n_classes)");
    ++r.support[l];
    if (p == l) {
      ++tp[l];
    } else {
      ++fp[p];
      ++fn[l];
    }
  }
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < n_classes; ++c) {
    const double pd = double(tp[c] + fp[c]), rd = double(tp[c] + fn[c]);
    const double prec = pd > 0 ? tp[c] / pd : 0.0;
    const double rec = rd > 0 ? tp[c] / rd : 0.0;
    const double f = prec + rec > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    r.precision.push_back(prec);
    r.recall.push_back(rec);
    r.f1.push_back(f);
    if (r.support[c] > 0) {
      sum += f;
      ++counted;
    }
  }
  r.macro_f1 = counted ? sum / counted : 0.0;
  return r;
}

/// Relative F1 change in percent, as reported per robustness condition.
inline double f1_drop_percent(double f1_original, double f1_variant) {
  if (f1_original == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (f1_variant - f1_original) / f1_original * 100.0;
}

// ---- few-shot sampling ----

inline int class_count(const std::vector<Window>& windows) {
  int mx = -1;
  for (const auto& w : windows) mx = std::max(mx, w.label);
  return mx + 1;
}

/// Indices of exactly n windows per labelled class, drawn uniformly without
/// replacement; grouped by class in ascending order.
inline std::vector<std::size_t> sample_few_shot(const std::vector<Window>& windows, int n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw ConfigError("few-shot: n_per_class must be >= 1");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (windows[i].label >= 0) by_class[windows[i].label].push_back(i);
  if (by_class.empty()) throw DataError("few-shot: no labelled windows");
  std::vector<std::size_t> out;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(n_per_class))
      throw DataError("few-shot: class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " windows, need " + std::to_string(n_per_class));
    Rng(derive_seed(seed, 0xfe5, label)).shuffle(idx);
    out.insert(out.end(), idx.begin(), idx.begin() + n_per_class);
  }
  return out;
}

// ---- linear probe ----

struct ProbeConfig {
  int n_per_class = 10;
  int epochs = 50;
  int batch_size = 4;
  LrSchedule schedule{10, 1e-8, 1e-5, 1e-6, 50};
  AdamOptions adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_per_class < 1) throw ConfigError("finetune: n_per_class must be >= 1");
    if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
    schedule.validate();
  }
};

/// Encoder outputs for a set of windows. The encoder is frozen during
/// probing, so features are computed once and reused.
struct FeatureSet {
  Tensor features;  // N x D
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  FeatureSet subset(std::span<const std::size_t> idx) const {
    FeatureSet s;
    const int D = features.dim(1);
    s.features = Tensor({static_cast<int>(idx.size()), D});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(features.data.begin() + idx[i] * D, D, s.features.data.begin() + i * D);
      s.labels.push_back(labels[idx[i]]);
    }
    return s;
  }
};

inline FeatureSet extract_features(const EncoderParams& encoder, const std::vector<Window>& windows,
                                   const SpectrogramConfig& cfg, int batch_size = 32) {
  if (windows.empty()) throw DataError("extract_features: no windows");
  FeatureSet fs;
  fs.features = Tensor({static_cast<int>(windows.size()), encoder.arch.backbone_dim()});
  for (std::size_t i = 0; i < windows.size(); i += batch_size) {
    std::vector<Image> imgs;
    for (std::size_t j = i; j < std::min(windows.size(), i + batch_size); ++j)
      imgs.push_back(window_to_input(windows[j], cfg));
    const Tensor f = encoder_features(encoder, make_batch(imgs));
    std::copy(f.data.begin(), f.data.end(), fs.features.data.begin() + i * f.dim(1));
  }
  for (const auto& w : windows) fs.labels.push_back(w.label);
  return fs;
}

inline std::vector<int> predict(const LinearHead& head, const Tensor& features) {
  const Tensor logits = linear_head_forward(head, features);
  const int C = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (int b = 0; b < logits.dim(0); ++b) {
    const double* row = logits.data.data() + std::size_t(b) * C;
    out[b] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

struct HeadTraining {
  LinearHead head;
  std::vector<double> loss_curve;  // mean loss per epoch
};

/// Trains a freshly initialized linear head with softmax cross-entropy and
/// Adam under the configured warmup/cosine schedule.
inline HeadTraining train_linear_head(const FeatureSet& train, int n_classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw DataError("linear probe: empty training set");
  const int D = train.features.dim(1);
  HeadTraining out{LinearHead::init(n_classes, D, derive_seed(cfg.seed, 0x4ead)), {}};
  AdamState adam;
  auto params = out.head.tensors();
  const std::size_t n = train.size();
  const std::size_t steps = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng(derive_seed(cfg.seed, 0xe90c, epoch)).shuffle(order);
    double total = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto begin = order.begin() + s * cfg.batch_size;
      const std::vector<std::size_t> idx(begin, begin + std::min<std::size_t>(cfg.batch_size, n - s * cfg.batch_size));
      const FeatureSet batch = train.subset(idx);
      const Tensor logits = linear_head_forward(out.head, batch.features);
      const auto ce = cross_entropy(logits, batch.labels);
      for (auto* p : params) p->zero_grad();
      linear_backward(batch.features, out.head.weight, out.head.bias, ce.grad);
      adam_step(params, adam, lr_at(cfg.schedule, double(epoch) + double(s) / double(steps)), cfg.adam);
      total += ce.loss * double(idx.size());
    }
    out.loss_curve.push_back(total / double(n));
  }
  return out;
}

inline RunReport evaluate_head(const LinearHead& head, const FeatureSet& test) {
  return macro_f1(predict(head, test.features), test.labels, head.classes());
}

struct ProbeResult {
  LinearHead head;
  RunReport report;  // metrics on the training subset
};

/// Frozen-encoder linear evaluation on raw windows. Throws if the encoder
/// changed during training.
inline ProbeResult linear_probe(const EncoderParams& encoder, const std::vector<Window>& train, int n_classes,
                                const ProbeConfig& cfg, const SpectrogramConfig& spectro) {
  const auto before = encoder.checksum();
  const FeatureSet fs = extract_features(encoder, train, spectro);
  auto trained = train_linear_head(fs, n_classes, cfg);
  if (encoder.checksum() != before) throw std::logic_error("linear probe modified the frozen encoder");
  ProbeResult r{std::move(trained.head), {}};
  r.report = evaluate_head(r.head, fs);
  r.report.loss_curve = std::move(trained.loss_curve);
  r.report.seed = cfg.seed;
  return r;
}

// ---- varying-n study ----

struct ProbeProtocol {
  int folds = 5;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t split_seed = 0;
  SplitRatio ratio;
};

struct VaryingNRow {
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int runs = 0;
  int absent = 0;  // (fold, seed) cells skipped for lack of class support
  std::vector<double> scores;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / double(v.size() - 1))};
}

/// Test-fold macro-F1 of few-shot probes over folds x seeds, for one n.
/// `features` must be aligned with `windows`.
inline VaryingNRow probe_cell(const std::vector<Window>& windows, const FeatureSet& features, int n_classes, int n,
                              const ProbeProtocol& protocol, const ProbeConfig& base) {
  VaryingNRow row;
  row.n = n;
  const auto folds = kfold_subjects(subjects_of(windows), protocol.folds, protocol.split_seed, protocol.ratio);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_idx, test_idx;
    std::vector<Window> train_windows;
    for (std::size_t i = 0; i < windows.size(); ++i) {
      if (folds[f].train.count(windows[i].subject_id)) {
        train_idx.push_back(i);
        train_windows.push_back(windows[i]);
      } else if (folds[f].test.count(windows[i].subject_id)) {
        test_idx.push_back(i);
      }
    }
    const FeatureSet test = features.subset(test_idx);
    for (auto seed : protocol.seeds) {
      std::vector<std::size_t> pick;
      try {
        pick = sample_few_shot(train_windows, n, derive_seed(seed, f, n));
      } catch (const DataError&) {
        ++row.absent;
        continue;
      }
      for (auto& p : pick) p = train_idx[p];
      ProbeConfig cfg = base;
      cfg.n_per_class = n;
      cfg.seed = derive_seed(seed, f);
      const auto trained = train_linear_head(features.subset(pick), n_classes, cfg);
      row.scores.push_back(evaluate_head(trained.head, test).macro_f1);
    }
  }
  row.runs = static_cast<int>(row.scores.size());
  std::tie(row.mean, row.stddev) = mean_std(row.scores);
  return row;
}

inline std::vector<VaryingNRow> eval_varying_n(const EncoderParams& encoder, const std::vector<Window>& windows,
                                               const std::vector<int>& n_list, const ProbeProtocol& protocol,
                                               const ProbeConfig& base, const SpectrogramConfig& spectro) {
  const int n_classes = class_count(windows);
  const FeatureSet features = extract_features(encoder, windows, spectro);
  std::vector<VaryingNRow> table;
  for (int n : n_list) table.push_back(probe_cell(windows, features, n_classes, n, protocol, base));
  return table;
}

// ---- robustness ablation ----

enum class SensoryVariant { original, time_shifted, masked, noised, rotated };

inline const char* variant_name(SensoryVariant v) {
  switch (v) {
    case SensoryVariant::original: return "original";
    case SensoryVariant::time_shifted: return "time-shifted";
    case SensoryVariant::masked: return "masked";
    case SensoryVariant::noised: return "noised";
    case SensoryVariant::rotated: return "rotated";
  }
  return "?";
}

inline std::vector<SensoryVariant> all_variants() {
  return {SensoryVariant::original, SensoryVariant::time_shifted, SensoryVariant::masked, SensoryVariant::noised,
          SensoryVariant::rotated};
}

struct VariantParams {
  double shift_fraction = 0.25;    // shift of +-fraction*N samples
  double mask_fraction = 0.25;     // masked span of fraction*N samples at a random start
  double noise_scale = 0.1;        // amplitude = scale * dataset std
  double rotation_degrees = 90.0;  // about a randomly chosen axis
};

/// Applies one sensory augmentation to every window, each with its own
/// seeded parameters.
inline std::vector<Window> make_variant_dataset(const std::vector<Window>& windows, SensoryVariant variant,
                                                const VariantParams& params, std::uint64_t seed) {
  if (variant == SensoryVariant::original) return windows;
  double std_all = 0.0;
  if (variant == SensoryVariant::noised) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (const auto& w : windows)
      for (const auto& s : w.samples)
        for (double v : s) {
          sum += v;
          sum2 += v * v;
          ++count;
        }
    const double m = sum / double(count);
    std_all = std::sqrt(std::max(0.0, sum2 / double(count) - m * m));
  }
  std::vector<Window> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Rng rng(derive_seed(seed, 0x5e45, i));
    const auto& w = windows[i];
    const auto n = static_cast<long long>(w.size());
    switch (variant) {
      case SensoryVariant::time_shifted: {
        const auto k = static_cast<long long>(std::llround(params.shift_fraction * double(n)));
        out.push_back(time_shift(w, rng.uniform() < 0.5 ? k : -k));
        break;
      }
      case SensoryVariant::masked: {
        const auto len = static_cast<std::size_t>(std::llround(params.mask_fraction * double(n)));
        const auto start = static_cast<std::size_t>(rng.below(w.size() - std::min(len, w.size()) + 1));
        out.push_back(mask(w, start, len));
        break;
      }
      case SensoryVariant::noised:
        out.push_back(add_noise(w, params.noise_scale * std_all, rng.next()));
        break;
      case SensoryVariant::rotated: {
        const char axis = "xyz"[rng.below(3)];
        out.push_back(rotate(w, sensor_rotation(axis, params.rotation_degrees)));
        break;
      }
      case SensoryVariant::original: out.push_back(w); break;
    }
  }
  return out;
}

struct AblationRow {
  std::string subset;
  std::vector<double> f1;    // per variant, in all_variants() order
  std::vector<double> drop;  // percent, relative to the original column
};

struct AblationReport {
  std::vector<SensoryVariant> variants;
  std::vector<AblationRow> rows;
};

inline std::vector<unsigned> default_ablation_subsets() {
  return {kAllAugs, kPermute | kHue | kJitter, kTranslate | kHue | kJitter, kTranslate | kPermute | kHue,
          kTranslate | kPermute | kJitter};
}

/// For each augmentation subset: pre-train (via `pretrain`), then score the
/// frozen encoder with the few-shot probe protocol on every sensory variant
/// of the dataset.
inline AblationReport ablation_table(const std::vector<unsigned>& subsets, const std::vector<Window>& windows,
                                     const std::function<EncoderCheckpoint(unsigned subset)>& pretrain,
                                     const ProbeProtocol& protocol, const ProbeConfig& probe,
                                     const SpectrogramConfig& spectro, const VariantParams& params,
                                     std::uint64_t variant_seed) {
  AblationReport report;
  report.variants = all_variants();
  const int n_classes = class_count(windows);
  std::vector<std::vector<Window>> datasets;
  for (auto v : report.variants) datasets.push_back(make_variant_dataset(windows, v, params, variant_seed));
  for (unsigned subset : subsets) {
    const auto encoder = pretrain(subset);
    SpectrogramConfig sc = spectro;
    sc.stats = encoder.stats;
    AblationRow row;
    row.subset = aug_set_name(subset);
    for (const auto& data : datasets) {
      const FeatureSet fs = extract_features(encoder.params, data, sc);
      row.f1.push_back(probe_cell(data, fs, n_classes, probe.n_per_class, protocol, probe).mean);
    }
    for (double f : row.f1) row.drop.push_back(f1_drop_percent(row.f1.front(), f));
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---- Grad-CAM ----

struct GradCam {
  int height = 0, width = 0;
  std::vector<double> raw;      // ReLU(sum_k alpha_k A_k)
  std::vector<double> heatmap;  // raw min-max scaled to [0, 1]
  std::vector<double> alpha;    // per-channel weights
  double logit = 0.0;
};

/// Class-discriminative map at conv stage `stage` (default: the last one).
/// `input` is a normalized 3 x H x W model input.
inline GradCam grad_cam(const EncoderParams& encoder, const LinearHead& head, const Image& input, int target_class,
                        int stage = -1) {
  if (target_class < 0 || target_class >= head.classes())
    throw std::out_of_range("grad_cam: class " + std::to_string(target_class) + " outside [0, " +
                            std::to_string(head.classes()) + ")");
  const int stages = static_cast<int>(encoder.conv_w.size());
  if (stage < 0) stage = stages - 1;
  if (stage >= stages) throw std::out_of_range("grad_cam: stage index out of range");

  EncoderTrace trace;
  encoder_backbone(encoder, make_batch(std::span<const Image>(&input, 1)), trace);
  const Tensor logits = linear_head_forward(head, trace.pooled);
  const int D = head.weight.dim(1);
  Tensor grad_pooled({1, D});
  std::copy_n(head.weight.data.begin() + std::size_t(target_class) * D, D, grad_pooled.data.begin());
  Tensor grad = global_avg_pool_backward(trace.acts.back(), grad_pooled);
  EncoderParams scratch = encoder;
  grad = backward_conv_stack(scratch, trace, std::move(grad), static_cast<std::size_t>(stage + 1), false);

  const Tensor& act = trace.acts[stage + 1];
  const int K = act.dim(1), H = act.dim(2), W = act.dim(3);
  const std::size_t hw = std::size_t(H) * W;
  GradCam cam;
  cam.height = H;
  cam.width = W;
  cam.logit = logits.data[target_class];
  cam.raw.assign(hw, 0.0);
  for (int k = 0; k < K; ++k) {
    double a = 0.0;
    for (std::size_t i = 0; i < hw; ++i) a += grad.data[k * hw + i];
    a /= double(hw);
    cam.alpha.push_back(a);
    for (std::size_t i = 0; i < hw; ++i) cam.raw[i] += a * act.data[k * hw + i];
  }
  for (auto& v : cam.raw) v = std::max(v, 0.0);
  const auto [mn, mx] = std::minmax_element(cam.raw.begin(), cam.raw.end());
  cam.heatmap.assign(hw, 0.0);
  if (*mx > *mn)
    for (std::size_t i = 0; i < hw; ++i) cam.heatmap[i] = (cam.raw[i] - *mn) / (*mx - *mn);
  return cam;
}

inline std::array<double, 3> jet_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  auto ramp = [](double x) { return std::clamp(1.5 - std::abs(4.0 * x), 0.0, 1.0); };
  return {ramp(v - 0.75), ramp(v - 0.5), ramp(v - 0.25)};
}

/// Heatmap upsampled bilinearly onto `base` (values in [0, 1]) and blended
/// half-and-half with a jet colormap.
inline Image grad_cam_overlay(const Image& base, const GradCam& cam) {
  Image heat(cam.height, cam.width);
  for (int c = 0; c < 3; ++c)
    std::copy(cam.heatmap.begin(), cam.heatmap.end(), heat.data.begin() + c * heat.plane());
  const Image up = resize_bilinear(heat, base.height, base.width);
  Image out(base.height, base.width);
  for (int r = 0; r < base.height; ++r)
    for (int c = 0; c < base.width; ++c) {
      const auto color = jet_color(up.at(0, r, c));
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r, c) = 0.5 * std::clamp(base.at(ch, r, c), 0.0, 1.0) + 0.5 * color[ch];
    }
  return out;
}

// ---- CSV reports ----

inline std::string run_report_csv(const RunReport& r) {
  std::string s = "# config_hash=" + r.config_hash + " fold=" + std::to_string(r.fold) + " seed=" + std::to_string(r.seed) + "\n";
  s += "class,precision,recall,f1,support\n";
  for (int c = 0; c < r.n_classes; ++c)
    s += std::to_string(c) + "," + format_double(r.precision[c]) + "," + format_double(r.recall[c]) + "," +
         format_double(r.f1[c]) + "," + std::to_string(r.support[c]) + "\n";
  s += "macro,,," + format_double(r.macro_f1) + ",\n";
  return s;
}

inline std::string varying_n_csv(const std::vector<VaryingNRow>& rows, const std::string& config_hash) {
  std::string s = "# config_hash=" + config_hash + "\nn,mean_macro_f1,std_macro_f1,runs,absent\n";
  for (const auto& r : rows)
    s += std::to_string(r.n) + "," + format_double(r.mean) + "," + format_double(r.stddev) + "," +
         std::to_string(r.runs) + "," + std::to_string(r.absent) + "\n";
  return s;
}

inline std::string ablation_csv(const AblationReport& rep, const std::string& config_hash) {
  std::string s = "# config_hash=" + config_hash + "\nsubset";
  for (auto v : rep.variants) {
    s += std::string(",f1_") + variant_name(v);
    if (v != SensoryVariant::original) s += std::string(",drop_pct_") + variant_name(v);
  }
  s += "\n";
  for (const auto& row : rep.rows) {
    s += row.subset;
    for (std::size_t i = 0; i < rep.variants.size(); ++i) {
      s += "," + format_double(row.f1[i]);
      if (rep.variants[i] != SensoryVariant::original) s += "," + format_double(row.drop[i]);
    }
    s += "\n";
  }
  return s;
}

}  // namespace imuspec
