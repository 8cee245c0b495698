#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "imageaug.hpp"
#include "moco.hpp"
#include "probe.hpp"
#include "spectro.hpp"

namespace imuspec {

struct ConfigKey {
  const char* section;
  const char* key;
  const char* default_value;
  const char* doc;
};

// Defaults reproduce the full-scale training presets; configs/desk.cfg scales
// them down for CPU runs.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"data", "rate_hz", "50", "resampling rate of IMU series (Hz)"},
      {"data", "window_seconds", "2", "window length (s)"},
      {"data", "overlap", "0.5", "sliding-window overlap fraction"},
      {"data", "split", "0.6,0.2,0.2", "subject split ratio train,val,test"},
      {"data", "split_seed", "0", "seed for subject splits and folds"},
      {"data", "csv_subject", "subject", "CSV column holding the subject id"},
      {"data", "csv_label", "label", "CSV column holding the class id"},
      {"data", "csv_t", "t", "CSV column holding time (s)"},
      {"data", "csv_x", "x", "CSV column for the x axis"},
      {"data", "csv_y", "y", "CSV column for the y axis"},
      {"data", "csv_z", "z", "CSV column for the z axis"},
      {"data", "max_gap_seconds", "1", "time gap that starts a new recording"},
      {"data", "synth_subjects", "5", "synthetic IMU set: subjects"},
      {"data", "synth_windows_per_class", "40", "synthetic IMU set: windows per class per subject"},
      {"data", "synth_noise", "0.4", "synthetic IMU set: uniform noise amplitude"},
      {"data", "synth_seed", "7", "synthetic IMU set: seed"},
      {"data", "corpus_size", "2000", "procedural pre-training images"},
      {"data", "image_height", "96", "procedural image height"},
      {"data", "image_width", "128", "procedural image width"},
      {"data", "corpus_seed", "11", "procedural corpus seed"},
      {"spectrogram", "nfft", "32", "FFT length (power of two)"},
      {"spectrogram", "noverlap", "30", "frame overlap in samples (< nfft)"},
      {"spectrogram", "log_floor_db", "-80", "log-magnitude floor (dB)"},
      {"spectrogram", "out_height", "96", "model input height"},
      {"spectrogram", "out_width", "128", "model input width"},
      {"augment", "augs", "T,P,H,J", "enabled image augmentations"},
      {"augment", "p", "0.5", "per-augmentation apply probability"},
      {"augment", "jitter_max", "0.1", "maximum jitter amplitude"},
      {"augment", "hue_max_deg", "360", "hue rotation drawn from [0, hue_max_deg)"},
      {"augment", "permute_chunks", "2,3,4", "PermuteX chunk counts"},
      {"pretrain", "epochs", "40", "pre-training epochs"},
      {"pretrain", "batch_size", "256", "pre-training batch size"},
      {"pretrain", "lr", "1e-6", "pre-training learning rate (constant)"},
      {"pretrain", "queue_size", "4096", "negative-key queue size"},
      {"pretrain", "feature_dim", "64", "embedding dimension"},
      {"pretrain", "temperature", "0.07", "InfoNCE temperature"},
      {"pretrain", "momentum", "0.999", "key-encoder moving-average coefficient"},
      {"pretrain", "channels", "8,16,32,64", "conv stage widths"},
      {"pretrain", "kernel", "3", "conv kernel size"},
      {"pretrain", "stride", "2", "conv stride"},
      {"pretrain", "pad", "1", "conv padding"},
      {"pretrain", "seed", "1", "initialization and augmentation seed"},
      {"pretrain", "heldout", "256", "held-out images for contrastive evaluation"},
      {"finetune", "n_per_class", "10", "few-shot samples per class"},
      {"finetune", "epochs", "50", "linear-probe epochs"},
      {"finetune", "batch_size", "4", "linear-probe batch size"},
      {"finetune", "warmup_epochs", "10", "linear warmup epochs"},
      {"finetune", "lr_start", "1e-8", "learning rate at epoch 0"},
      {"finetune", "lr_peak", "1e-5", "learning rate at the end of warmup"},
      {"finetune", "lr_end", "1e-6", "learning rate at the last epoch"},
      {"finetune", "seed", "0", "head initialization seed"},
      {"eval", "n_list", "1,2,5,10,20,50", "few-shot sizes for the varying-n study"},
      {"eval", "folds", "5", "cross-validation folds"},
      {"eval", "seeds", "5", "seeds per fold"},
      {"eval", "ablation_subsets", "TPHJ,PHJ,THJ,TPH,TPJ", "augmentation subsets for the ablation"},
      {"eval", "shift_fraction", "0.25", "time-shifted variant: shift as a fraction of the window"},
      {"eval", "mask_fraction", "0.25", "masked variant: masked fraction of the window"},
      {"eval", "noise_scale", "0.1", "noised variant: amplitude as a multiple of the data std"},
      {"eval", "rotation_degrees", "90", "rotated variant: angle about a random axis"},
      {"eval", "variant_seed", "0", "seed for sensory variants"},
  };
  return schema;
}

inline const std::vector<std::string>& config_sections() {
  static const std::vector<std::string> s{"data", "spectrogram", "augment", "pretrain", "finetune", "eval"};
  return s;
}

/// Sectioned key=value configuration. Every key has a default; unknown
/// sections or keys are errors.
class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.section][k.key] = k.default_value;
  }

  static Config parse(std::string_view text) {
    Config c;
    std::string section;
    int line_no = 0;
    for (const auto& raw : split(text, '\n')) {
      ++line_no;
      const std::string_view full = raw;
      const std::string_view line = trim(full.substr(0, full.find('#')));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (!c.values_.count(section)) throw ConfigError("config line " + std::to_string(line_no) + ": unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside of a section");
      const std::string key(trim(line.substr(0, eq)));
      if (!c.values_[section].count(key))
        throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "' in [" + section + "]");
      c.set(section, key, std::string(trim(line.substr(eq + 1))));
    }
    c.validate();
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& section, const std::string& key, std::string value) {
    auto s = values_.find(section);
    if (s == values_.end()) throw ConfigError("config: unknown section [" + section + "]");
    auto k = s->second.find(key);
    if (k == s->second.end()) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    k->second = std::move(value);
  }

  const std::string& str(const std::string& section, const std::string& key) const {
    auto s = values_.find(section);
    if (s == values_.end() || !s->second.count(key)) throw ConfigError("config: unknown key " + section + "." + key);
    return s->second.at(key);
  }

  double num(const std::string& section, const std::string& key) const {
    double v;
    if (!parse_double(str(section, key), v)) throw ConfigError("config: " + section + "." + key + " is not a number");
    return v;
  }

  long long integer(const std::string& section, const std::string& key) const {
    long long v;
    if (!parse_int(str(section, key), v)) throw ConfigError("config: " + section + "." + key + " is not an integer");
    return v;
  }

  std::vector<double> nums(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split(str(section, key), ',')) {
      double v;
      if (!parse_double(part, v)) throw ConfigError("config: " + section + "." + key + " must be a number list");
      out.push_back(v);
    }
    return out;
  }

  std::vector<int> ints(const std::string& section, const std::string& key) const {
    std::vector<int> out;
    for (const auto& part : split(str(section, key), ',')) {
      long long v;
      if (!parse_int(part, v)) throw ConfigError("config: " + section + "." + key + " must be an integer list");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  /// Canonical form: sections and keys in schema order, one "key = value" per line.
  std::string serialize() const {
    std::string out;
    for (const auto& section : config_sections()) {
      out += "[" + section + "]\n";
      for (const auto& k : config_schema())
        if (section == k.section) out += std::string(k.key) + " = " + values_.at(section).at(k.key) + "\n";
      out += "\n";
    }
    return out;
  }

  std::string hash() const { return hash_hex(serialize()); }

  bool operator==(const Config& o) const { return values_ == o.values_; }

  // ---- typed views ----

  SpectrogramConfig spectrogram() const {
    SpectrogramConfig s;
    s.nfft = static_cast<int>(integer("spectrogram", "nfft"));
    s.noverlap = static_cast<int>(integer("spectrogram", "noverlap"));
    s.log_floor_db = num("spectrogram", "log_floor_db");
    s.out_h = static_cast<int>(integer("spectrogram", "out_height"));
    s.out_w = static_cast<int>(integer("spectrogram", "out_width"));
    s.validate();
    return s;
  }

  AugPolicy policy() const {
    AugPolicy p;
    p.enabled = parse_aug_set(str("augment", "augs"));
    p.p = num("augment", "p");
    p.jitter_max = num("augment", "jitter_max");
    p.hue_max_deg = num("augment", "hue_max_deg");
    p.permute_chunks = ints("augment", "permute_chunks");
    p.validate();
    return p;
  }

  EncoderArch arch() const {
    EncoderArch a;
    a.channels = ints("pretrain", "channels");
    a.conv.kernel = static_cast<int>(integer("pretrain", "kernel"));
    a.conv.stride = static_cast<int>(integer("pretrain", "stride"));
    a.conv.pad = static_cast<int>(integer("pretrain", "pad"));
    a.feature_dim = static_cast<int>(integer("pretrain", "feature_dim"));
    a.validate();
    return a;
  }

  MoCoConfig moco() const {
    MoCoConfig m;
    m.arch = arch();
    const auto q = integer("pretrain", "queue_size");
    if (q < 1) throw ConfigError("config: pretrain.queue_size must be >= 1");
    m.queue_size = static_cast<std::size_t>(q);
    m.temperature = num("pretrain", "temperature");
    m.momentum = num("pretrain", "momentum");
    m.batch_size = static_cast<int>(integer("pretrain", "batch_size"));
    m.epochs = static_cast<int>(integer("pretrain", "epochs"));
    if (m.batch_size < 1 || m.epochs < 1) throw ConfigError("config: pretrain.batch_size and epochs must be >= 1");
    const double lr = num("pretrain", "lr");
    m.schedule = LrSchedule::constant(lr, m.epochs);
    m.schedule.validate();
    m.policy = policy();
    m.seed = static_cast<std::uint64_t>(integer("pretrain", "seed"));
    if (!(m.temperature > 0.0)) throw ConfigError("config: pretrain.temperature must be > 0");
    if (!(m.momentum >= 0.0 && m.momentum <= 1.0)) throw ConfigError("config: pretrain.momentum must be in [0, 1]");
    return m;
  }

  ProbeConfig probe() const {
    ProbeConfig p;
    p.n_per_class = static_cast<int>(integer("finetune", "n_per_class"));
    p.epochs = static_cast<int>(integer("finetune", "epochs"));
    p.batch_size = static_cast<int>(integer("finetune", "batch_size"));
    p.schedule.warmup_epochs = static_cast<int>(integer("finetune", "warmup_epochs"));
    p.schedule.lr_start = num("finetune", "lr_start");
    p.schedule.lr_peak = num("finetune", "lr_peak");
    p.schedule.lr_end = num("finetune", "lr_end");
    p.schedule.total_epochs = p.epochs;
    p.seed = static_cast<std::uint64_t>(integer("finetune", "seed"));
    p.validate();
    return p;
  }

  ProbeProtocol protocol() const {
    ProbeProtocol p;
    p.folds = static_cast<int>(integer("eval", "folds"));
    const auto seeds = integer("eval", "seeds");
    if (seeds < 1) throw ConfigError("config: eval.seeds must be >= 1");
    p.seeds.clear();
    for (long long s = 0; s < seeds; ++s) p.seeds.push_back(static_cast<std::uint64_t>(s));
    p.split_seed = static_cast<std::uint64_t>(integer("data", "split_seed"));
    p.ratio = split_ratio();
    return p;
  }

  SplitRatio split_ratio() const {
    const auto r = nums("data", "split");
    if (r.size() != 3) throw ConfigError("config: data.split needs three ratios");
    return {r[0], r[1], r[2]};
  }

  VariantParams variants() const {
    return {num("eval", "shift_fraction"), num("eval", "mask_fraction"), num("eval", "noise_scale"),
            num("eval", "rotation_degrees")};
  }

  std::vector<unsigned> ablation_subsets() const {
    std::vector<unsigned> out;
    for (const auto& s : split(str("eval", "ablation_subsets"), ',')) out.push_back(parse_aug_set(s));
    return out;
  }

  CsvSchema csv_schema() const {
    CsvSchema s;
    s.subject = str("data", "csv_subject");
    s.label = str("data", "csv_label");
    s.t = str("data", "csv_t");
    s.x = str("data", "csv_x");
    s.y = str("data", "csv_y");
    s.z = str("data", "csv_z");
    s.max_gap_seconds = num("data", "max_gap_seconds");
    return s;
  }

  SynthImuOptions synth_imu() const {
    SynthImuOptions o;
    o.classes = default_class_specs();
    for (auto& c : o.classes) c.noise = num("data", "synth_noise");
    o.n_subjects = static_cast<int>(integer("data", "synth_subjects"));
    o.n_windows_per_class = static_cast<int>(integer("data", "synth_windows_per_class"));
    o.window_seconds = num("data", "window_seconds");
    o.rate_hz = num("data", "rate_hz");
    o.seed = static_cast<std::uint64_t>(integer("data", "synth_seed"));
    return o;
  }

  void validate() const {
    spectrogram();
    policy();
    moco();
    probe();
    protocol();
    variants();
    ablation_subsets();
    if (!(num("data", "rate_hz") > 0)) throw ConfigError("config: data.rate_hz must be > 0");
    const double ov = num("data", "overlap");
    if (!(ov >= 0 && ov < 1)) throw ConfigError("config: data.overlap must be in [0, 1)");
    for (int n : ints("eval", "n_list"))
      if (n < 1) throw ConfigError("config: eval.n_list entries must be >= 1");
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace imuspec
