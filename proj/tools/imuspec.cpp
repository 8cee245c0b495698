#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "imuspec/imuspec.hpp"

namespace fs = std::filesystem;
using namespace imuspec;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfigExit = 2, kDataExit = 3, kNumericExit = 4 };

Config load_config(const std::string& path) { return path.empty() ? Config() : Config::load(path); }

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << text;
  if (!f) throw DataError("write failed: " + path);
}

std::string padded(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

// Where the labelled windows come from: a CSV file or the configured
// synthetic set.
std::vector<Window> load_windows(const std::string& input, const Config& cfg) {
  return input.empty() ? imu_windows(cfg) : windows_from_csv(input, cfg);
}

ImageCorpus load_corpus(const std::string& dir, int synth, const Config& cfg) {
  if (!dir.empty()) return load_ppm_corpus(dir, cfg);
  if (synth > 0) {
    Config c = cfg;
    c.set("data", "corpus_size", std::to_string(synth));
    return pretrain_corpus(c);
  }
  return pretrain_corpus(cfg);
}

EncoderCheckpoint load_or_random(const std::string& ckpt, bool random, const Config& cfg) {
  if (!ckpt.empty() && random) throw ConfigError("use either --ckpt or --random, not both");
  if (random) return random_encoder(cfg, pretrain_corpus(cfg).stats);
  if (ckpt.empty()) throw ConfigError("an encoder is required: pass --ckpt FILE or --random");
  const EncoderArch arch = cfg.arch();
  return load_encoder(ckpt, &arch);
}

struct FoldData {
  std::vector<Window> train, test;
};

FoldData fold_windows(const std::vector<Window>& windows, const Config& cfg, int fold) {
  const auto prot = cfg.protocol();
  const auto folds = kfold_subjects(subjects_of(windows), prot.folds, prot.split_seed, prot.ratio);
  if (fold < 0 || fold >= static_cast<int>(folds.size()))
    throw ConfigError("--fold must be in [0, " + std::to_string(folds.size()) + ")");
  FoldData d;
  d.train = select_subjects(windows, folds[fold].train);
  d.test = select_subjects(windows, folds[fold].test);
  return d;
}

// Few-shot head on one fold's training subjects.
HeadTraining train_fold_head(const EncoderCheckpoint& enc, const FoldData& d, int n_classes, int n, std::uint64_t seed,
                             const Config& cfg) {
  ProbeConfig pc = cfg.probe();
  pc.n_per_class = n;
  pc.seed = seed;
  const auto pick = sample_few_shot(d.train, n, seed);
  std::vector<Window> shots;
  for (auto i : pick) shots.push_back(d.train[i]);
  return train_linear_head(extract_features(enc.params, shots, spectro_for(cfg, enc)), n_classes, pc);
}

// ---- commands ----

int cmd_convert(const std::string& input, const std::string& config, const std::string& out) {
  const Config cfg = load_config(config);
  const auto windows = windows_from_csv(input, cfg);
  const SpectrogramConfig sc = cfg.spectrogram();
  fs::create_directories(out);
  std::string manifest = "path,label,subject\n";
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Image img = resize_bilinear(to_rgb_spectrogram(windows[i], sc), sc.out_h, sc.out_w);
    const std::string name = "window_" + padded(i);
    write_ppm((fs::path(out) / (name + ".ppm")).string(), img);
    ImageCorpus one{{img}, {}};
    one.recompute_stats();
    std::string meta = "nfft=" + std::to_string(sc.nfft) + "\nnoverlap=" + std::to_string(sc.noverlap) +
                       "\nlog_floor_db=" + format_double(sc.log_floor_db) + "\nheight=" + std::to_string(sc.out_h) +
                       "\nwidth=" + std::to_string(sc.out_w) + "\nlabel=" + std::to_string(windows[i].label) +
                       "\nsubject=" + windows[i].subject_id + "\norigin_index=" + std::to_string(windows[i].origin_index) +
                       "\nrate_hz=" + format_double(windows[i].rate_hz);
    for (int c = 0; c < 3; ++c)
      meta += "\nmean_" + std::string(1, "rgb"[c]) + "=" + format_double(one.stats.mean[c]) + "\nstd_" +
              std::string(1, "rgb"[c]) + "=" + format_double(one.stats.std[c]);
    meta += "\nconfig_hash=" + cfg.hash() + "\n";
    write_text((fs::path(out) / (name + ".meta")).string(), meta);
    manifest += name + ".ppm," + std::to_string(windows[i].label) + "," + windows[i].subject_id + "\n";
  }
  write_text((fs::path(out) / "manifest.csv").string(), manifest);
  std::cout << "converted " << windows.size() << " windows into " << out << "\n";
  return kOk;
}

int cmd_pretrain(const std::string& corpus_dir, int synth, const std::string& config, const std::string& out,
                 const std::string& resume, std::string loss_csv) {
  const Config cfg = load_config(config);
  const ImageCorpus corpus = load_corpus(corpus_dir, synth, cfg);
  if (loss_csv.empty()) loss_csv = out + ".loss.csv";
  MoCoState state;
  if (!resume.empty()) {
    const EncoderArch arch = cfg.arch();
    state = load_checkpoint(resume, &arch);
    if (state.config_hash != cfg.hash())
      std::cerr << "note: resuming a checkpoint written under config " << state.config_hash << "\n";
    state.config_hash = cfg.hash();
  } else {
    state = start_pretrain(cfg, corpus);
  }
  if (resume.empty() || !fs::exists(loss_csv))
    write_text(loss_csv, "# config_hash=" + cfg.hash() + "\nepoch,loss,pos_cos,lr\n");
  std::ofstream csv(loss_csv, std::ios::app);
  if (!csv) throw DataError("cannot open for writing: " + loss_csv);
  run_pretrain(state, corpus, cfg, [&](const EpochStats& s) {
    csv << s.epoch << "," << format_double(s.loss) << "," << format_double(s.pos_cos) << "," << format_double(s.lr)
        << "\n";
    csv.flush();
    save_checkpoint(out, state);
    std::cout << "epoch " << s.epoch << " loss " << s.loss << " pos_cos " << s.pos_cos << std::endl;
  });
  save_checkpoint(out, state);
  return kOk;
}

int cmd_probe(const std::string& ckpt, bool random, const std::string& config, const std::string& input, int n,
              int fold, std::optional<std::uint64_t> seed, const std::string& out) {
  const Config cfg = load_config(config);
  const auto enc = load_or_random(ckpt, random, cfg);
  const auto windows = load_windows(input, cfg);
  const int n_classes = class_count(windows);
  if (n <= 0) n = cfg.probe().n_per_class;
  const std::uint64_t s = seed.value_or(cfg.probe().seed);
  const FoldData d = fold_windows(windows, cfg, fold);
  const auto trained = train_fold_head(enc, d, n_classes, n, s, cfg);
  auto report = evaluate_head(trained.head, extract_features(enc.params, d.test, spectro_for(cfg, enc)));
  report.config_hash = cfg.hash();
  report.fold = fold;
  report.seed = s;
  report.loss_curve = trained.loss_curve;
  if (!out.empty()) write_text(out, run_report_csv(report));
  std::cout << "macro_f1=" << format_double(report.macro_f1) << "\n";
  return kOk;
}

int cmd_evaluate(const std::string& ckpt, bool random, const std::string& config, const std::string& input,
                 std::vector<int> n_list, const std::string& out) {
  const Config cfg = load_config(config);
  const auto enc = load_or_random(ckpt, random, cfg);
  const auto windows = load_windows(input, cfg);
  if (n_list.empty()) n_list = cfg.ints("eval", "n_list");
  for (int n : n_list)
    if (n < 1) throw ConfigError("--n entries must be >= 1");
  const auto rows = eval_varying_n(enc.params, windows, n_list, cfg.protocol(), cfg.probe(), spectro_for(cfg, enc));
  const auto csv = varying_n_csv(rows, cfg.hash());
  if (!out.empty()) write_text(out, csv);
  std::cout << csv;
  return kOk;
}

int cmd_ablate(const std::string& corpus_dir, int synth, const std::string& config, const std::string& input,
               const std::string& out) {
  const Config cfg = load_config(config);
  const ImageCorpus corpus = load_corpus(corpus_dir, synth, cfg);
  const auto windows = load_windows(input, cfg);
  auto pretrain = [&](unsigned subset) {
    Config c = cfg;
    c.set("augment", "augs", aug_set_name(subset));
    std::cerr << "pre-training with " << aug_set_name(subset) << "\n";
    MoCoState st = start_pretrain(c, corpus);
    run_pretrain(st, corpus, c);
    return encoder_of(st);
  };
  const auto rep = ablation_table(cfg.ablation_subsets(), windows, pretrain, cfg.protocol(), cfg.probe(),
                                  cfg.spectrogram(), cfg.variants(),
                                  static_cast<std::uint64_t>(cfg.integer("eval", "variant_seed")));
  const auto csv = ablation_csv(rep, cfg.hash());
  if (!out.empty()) write_text(out, csv);
  std::cout << csv;
  return kOk;
}

int cmd_gradcam(const std::string& ckpt, bool random, const std::string& config, const std::string& input,
                const std::string& out, int count, int target) {
  const Config cfg = load_config(config);
  const auto enc = load_or_random(ckpt, random, cfg);
  const auto windows = load_windows(input, cfg);
  const int n_classes = class_count(windows);
  if (target >= n_classes) throw ConfigError("--class must be below the class count " + std::to_string(n_classes));
  const FoldData d = fold_windows(windows, cfg, 0);
  const auto trained = train_fold_head(enc, d, n_classes, cfg.probe().n_per_class, cfg.probe().seed, cfg);
  const auto sc = spectro_for(cfg, enc);
  fs::create_directories(out);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(count, 0)), d.test.size());
  for (std::size_t i = 0; i < k; ++i) {
    const Window& w = d.test[i];
    const int cls = target >= 0 ? target : w.label;
    const Image base = resize_bilinear(to_rgb_spectrogram(w, sc), sc.out_h, sc.out_w);
    const auto cam = grad_cam(enc.params, trained.head, normalize(base, sc.stats), cls);
    const std::string stem = (fs::path(out) / ("gradcam_" + padded(i))).string();
    write_ppm(stem + "_input.ppm", base);
    write_ppm(stem + "_overlay.ppm", grad_cam_overlay(base, cam));
    std::cout << stem << "_overlay.ppm label=" << w.label << " class=" << cls << " logit=" << format_double(cam.logit)
              << "\n";
  }
  return kOk;
}

int cmd_bench(const std::string& ckpt, bool random, const std::string& config, double window_seconds, int iters) {
  if (iters < 1) throw ConfigError("--iters must be >= 1");
  const Config cfg = load_config(config);
  const auto enc = load_or_random(ckpt, random, cfg);
  const double rate = cfg.num("data", "rate_hz");
  if (window_seconds <= 0) window_seconds = cfg.num("data", "window_seconds");
  Rng rng(derive_seed(0xbe7c, 0));
  Window w;
  w.rate_hz = rate;
  w.samples.resize(window_length(window_seconds, rate));
  for (auto& s : w.samples)
    for (auto& v : s) v = rng.normal();
  const auto sc = spectro_for(cfg, enc);
  const auto head = LinearHead::init(3, enc.params.arch.backbone_dim(), 1);

  using clock = std::chrono::steady_clock;
  auto time_ms = [&](auto&& fn) {
    std::vector<double> ms;
    for (int i = 0; i < iters; ++i) {
      const auto t0 = clock::now();
      fn();
      ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    return mean_std(ms);
  };
  Image input;
  const auto [spec_mean, spec_std] = time_ms([&] { input = window_to_input(w, sc); });
  volatile double sink = 0.0;
  const auto [inf_mean, inf_std] = time_ms([&] {
    const Tensor f = encoder_features(enc.params, make_batch(std::span<const Image>(&input, 1)));
    sink = sink + linear_head_forward(head, f).data[0];
  });
  auto record = [&](const char* name, double mean, double sd) {
    nlohmann::json j;
    j["record"] = name;
    j["mean_ms"] = mean;
    j["std_ms"] = sd;
    j["iters"] = iters;
    j["window_seconds"] = window_seconds;
    j["samples"] = w.size();
    std::cout << j.dump() << "\n";
  };
  record("spectrogram", spec_mean, spec_std);
  record("inference", inf_mean, inf_std);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imuspec: IMU activity recognition through RGB spectrograms and contrastive image pre-training"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker cap; results never depend on it (commands currently run on one thread)")
      ->check(CLI::PositiveNumber);

  std::string config, input, out, ckpt, corpus_dir, resume, loss_csv;
  int synth = 0, n = 0, fold = 0, count = 3, target = -1, iters = 100;
  double window_seconds = 0.0;
  bool random = false;
  std::optional<std::uint64_t> seed;
  std::vector<int> n_list;

  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", config, "Config file (INI-style); built-in defaults when omitted")->check(CLI::ExistingFile);
  };
  auto add_encoder = [&](CLI::App* c) {
    c->add_option("--ckpt", ckpt, "Encoder or pre-training checkpoint");
    c->add_flag("--random", random, "Use a randomly initialized encoder instead of a checkpoint");
  };
  auto add_input = [&](CLI::App* c) {
    c->add_option("--input", input, "Labelled IMU CSV (subject,label,t,x,y,z); synthetic set from the config when omitted");
  };
  auto add_corpus = [&](CLI::App* c) {
    auto* dir = c->add_option("--corpus", corpus_dir, "Directory of .ppm pre-training images");
    c->add_option("--synth", synth, "Generate N procedural pre-training images")->excludes(dir)->check(CLI::PositiveNumber);
  };

  auto* convert = app.add_subcommand("convert", "Convert IMU CSV windows into RGB spectrogram PPMs");
  convert->add_option("--input", input, "IMU CSV file")->required();
  add_config(convert);
  convert->add_option("--out", out, "Output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pre-training of the image encoder");
  add_corpus(pretrain);
  add_config(pretrain);
  pretrain->add_option("--out", out, "Checkpoint path (rewritten after every epoch)")->required();
  pretrain->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  pretrain->add_option("--loss-csv", loss_csv, "Per-epoch loss CSV (default: <out>.loss.csv)");

  auto* probe = app.add_subcommand("probe", "Train and score one few-shot linear probe");
  add_encoder(probe);
  add_config(probe);
  add_input(probe);
  probe->add_option("--n", n, "Labelled windows per class (default: finetune.n_per_class)");
  probe->add_option("--fold", fold, "Subject fold to evaluate");
  probe->add_option("--seed", seed, "Sampling seed (default: finetune.seed)");
  probe->add_option("--out", out, "Report CSV");

  auto* evaluate = app.add_subcommand("evaluate", "Macro-F1 versus labelled windows per class");
  add_encoder(evaluate);
  add_config(evaluate);
  add_input(evaluate);
  evaluate->add_option("--n", n_list, "Comma-separated n values (default: eval.n_list)")->delimiter(',');
  evaluate->add_option("--out", out, "Table CSV");

  auto* ablate = app.add_subcommand("ablate", "Augmentation-subset ablation against sensory variants");
  add_corpus(ablate);
  add_config(ablate);
  add_input(ablate);
  ablate->add_option("--out", out, "Report CSV");

  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM overlays for test windows");
  add_encoder(gradcam);
  add_config(gradcam);
  add_input(gradcam);
  gradcam->add_option("--out", out, "Output directory")->required();
  gradcam->add_option("--count", count, "Number of test windows");
  gradcam->add_option("--class", target, "Target class (default: each window's label)");

  auto* bench = app.add_subcommand("bench", "Time spectrogram generation and single-image inference");
  add_encoder(bench);
  add_config(bench);
  bench->add_option("--window-seconds", window_seconds, "Window length (default: data.window_seconds)");
  bench->add_option("--iters", iters, "Iterations per measurement");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    if (*convert) return cmd_convert(input, config, out);
    if (*pretrain) return cmd_pretrain(corpus_dir, synth, config, out, resume, loss_csv);
    if (*probe) return cmd_probe(ckpt, random, config, input, n, fold, seed, out);
    if (*evaluate) return cmd_evaluate(ckpt, random, config, input, n_list, out);
    if (*ablate) return cmd_ablate(corpus_dir, synth, config, input, out);
    if (*gradcam) return cmd_gradcam(ckpt, random, config, input, out, count, target);
    if (*bench) return cmd_bench(ckpt, random, config, window_seconds, iters);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumericExit;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
