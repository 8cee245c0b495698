#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "config.hpp"

namespace imuspec {

// Glue between a Config and the module entry points.

inline ImageCorpus pretrain_corpus(const Config& cfg) {
  return synth_image_corpus(static_cast<int>(cfg.integer("data", "corpus_size")),
                            static_cast<int>(cfg.integer("data", "image_height")),
                            static_cast<int>(cfg.integer("data", "image_width")),
                            static_cast<std::uint64_t>(cfg.integer("data", "corpus_seed")));
}

/// Every *.ppm in `dir` (sorted by file name), resized to the configured
/// corpus size, with statistics recomputed.
inline ImageCorpus load_ppm_corpus(const std::string& dir, const Config& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("corpus: not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  if (files.empty()) throw DataError("corpus: no .ppm files in " + dir);
  std::sort(files.begin(), files.end());
  const int h = static_cast<int>(cfg.integer("data", "image_height"));
  const int w = static_cast<int>(cfg.integer("data", "image_width"));
  ImageCorpus corpus;
  for (const auto& f : files) {
    Image img = read_ppm(f.string());
    corpus.images.push_back(img.height == h && img.width == w ? std::move(img) : resize_bilinear(img, h, w));
  }
  corpus.recompute_stats();
  return corpus;
}

/// CSV recordings resampled to the configured rate and cut into windows.
inline std::vector<Window> windows_from_csv(const std::string& path, const Config& cfg) {
  const auto ingest = ingest_csv(path, cfg.csv_schema());
  const double rate = cfg.num("data", "rate_hz");
  std::vector<Window> out;
  for (const auto& series : ingest.series) {
    const auto ws = make_windows(resample(series, rate), cfg.num("data", "window_seconds"), cfg.num("data", "overlap"));
    out.insert(out.end(), ws.begin(), ws.end());
  }
  if (out.empty()) throw DataError("no complete windows in " + path);
  return out;
}

struct HeldoutImages {
  std::vector<Image> images;
  std::vector<Image> negatives;
};

// Disjoint from the training corpus (different seed streams).
inline HeldoutImages heldout_images(const Config& cfg) {
  const auto seed = static_cast<std::uint64_t>(cfg.integer("data", "corpus_seed"));
  const int h = static_cast<int>(cfg.integer("data", "image_height"));
  const int w = static_cast<int>(cfg.integer("data", "image_width"));
  const int n = static_cast<int>(cfg.integer("pretrain", "heldout"));
  if (n < 1) throw ConfigError("config: pretrain.heldout must be >= 1");
  HeldoutImages out;
  out.images = synth_image_corpus(n, h, w, derive_seed(seed, 0x4e1d)).images;
  out.negatives = synth_image_corpus(static_cast<int>(cfg.integer("pretrain", "queue_size")), h, w,
                                     derive_seed(seed, 0x4e9a))
                      .images;
  return out;
}

inline std::vector<Window> imu_windows(const Config& cfg) { return synth_imu_dataset(cfg.synth_imu()); }

inline MoCoState start_pretrain(const Config& cfg, const ImageCorpus& corpus) {
  const MoCoConfig mc = cfg.moco();
  MoCoState s = MoCoState::init(mc, corpus.stats, mc.seed);
  init_projection_bias(s, corpus, mc.policy, mc.seed);
  s.config_hash = cfg.hash();
  return s;
}

/// Runs the remaining epochs of `state`; `on_epoch` sees each epoch's stats.
inline void run_pretrain(MoCoState& state, const ImageCorpus& corpus, const Config& cfg,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  const MoCoConfig mc = cfg.moco();
  while (state.epoch < static_cast<std::uint64_t>(mc.epochs)) {
    const auto st = pretrain_epoch(state, corpus, mc);
    if (on_epoch) on_epoch(st);
  }
}

inline EncoderCheckpoint encoder_of(const MoCoState& s) { return {s.query, s.stats, s.config_hash}; }

inline EncoderCheckpoint random_encoder(const Config& cfg, const ChannelStats& stats) {
  const MoCoConfig mc = cfg.moco();
  return {EncoderParams::init(mc.arch, mc.seed), stats, cfg.hash()};
}

inline SpectrogramConfig spectro_for(const Config& cfg, const EncoderCheckpoint& enc) {
  SpectrogramConfig sc = cfg.spectrogram();
  sc.stats = enc.stats;
  return sc;
}

}  // namespace imuspec
