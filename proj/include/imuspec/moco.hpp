#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "imageaug.hpp"
#include "nn.hpp"

namespace imuspec {

// ---- InfoNCE ----

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> grad_q;
};

/// -log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_i exp(q.k_i/tau))), evaluated
/// with max subtraction. Keys are constants; the gradient is w.r.t. q only.
/// negatives holds K rows of length q.size().
inline InfoNceResult infonce_loss(std::span<const double> q, std::span<const double> k_plus,
                                  std::span<const double> negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("infonce: temperature must be > 0");
  const std::size_t D = q.size();
  if (k_plus.size() != D || D == 0 || negatives.size() % D != 0 || negatives.empty())
    throw ShapeError("infonce: q, k+ and negatives must share one non-zero dimension and K >= 1");
  const std::size_t K = negatives.size() / D;

  std::vector<double> logits(K + 1);
  auto dot = [&](const double* a) {
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i) s += q[i] * a[i];
    return s;
  };
  logits[0] = dot(k_plus.data()) / tau;
  for (std::size_t j = 0; j < K; ++j) logits[j + 1] = dot(negatives.data() + j * D) / tau;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = mx + std::log(z);

  InfoNceResult r;
  r.loss = log_z - logits[0];
  r.grad_q.assign(D, 0.0);
  // dL/dq = (sum_j p_j key_j - k+) / tau
  const double p0 = std::exp(logits[0] - log_z);
  for (std::size_t i = 0; i < D; ++i) r.grad_q[i] = (p0 - 1.0) * k_plus[i];
  for (std::size_t j = 0; j < K; ++j) {
    const double pj = std::exp(logits[j + 1] - log_z);
    const double* n = negatives.data() + j * D;
    for (std::size_t i = 0; i < D; ++i) r.grad_q[i] += pj * n[i];
  }
  for (auto& g : r.grad_q) g /= tau;
  return r;
}

// ---- negative-key queue ----

/// FIFO ring of unit-norm keys. Grows until it holds `capacity` keys, then
/// each push evicts the oldest entries.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), data_(capacity * dim, 0.0) {
    if (capacity == 0 || dim == 0) throw ConfigError("queue: capacity and dimension must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool full() const { return size_ == capacity_; }

  /// keys: B x dim, row-major.
  void push(std::span<const double> keys) {
    if (keys.size() % dim_ != 0) throw ShapeError("queue: key width does not match queue dimension");
    const std::size_t B = keys.size() / dim_;
    if (B > capacity_)
      throw std::invalid_argument("queue: batch of " + std::to_string(B) + " keys exceeds capacity " + std::to_string(capacity_));
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(keys.begin() + b * dim_, dim_, data_.begin() + head_ * dim_);
      head_ = (head_ + 1) % capacity_;
      size_ = std::min(size_ + 1, capacity_);
    }
  }

  /// Entries oldest first.
  std::vector<double> entries() const {
    std::vector<double> out;
    out.reserve(size_ * dim_);
    const std::size_t start = full() ? head_ : 0;
    for (std::size_t i = 0; i < size_; ++i) {
      const std::size_t slot = (start + i) % capacity_;
      out.insert(out.end(), data_.begin() + slot * dim_, data_.begin() + (slot + 1) * dim_);
    }
    return out;
  }

  // Raw storage, in slot order; used for serialization.
  const std::vector<double>& raw() const { return data_; }
  std::size_t head() const { return head_; }

  static NegativeQueue restore(std::size_t capacity, std::size_t dim, std::size_t size, std::size_t head,
                               std::vector<double> data) {
    NegativeQueue q(capacity, dim);
    if (size > capacity || head >= capacity || data.size() != capacity * dim)
      throw DataError("queue: inconsistent serialized state");
    q.size_ = size;
    q.head_ = head;
    q.data_ = std::move(data);
    return q;
  }

  bool operator==(const NegativeQueue&) const = default;

 private:
  std::size_t capacity_ = 0, dim_ = 0;
  std::vector<double> data_;
  std::size_t size_ = 0, head_ = 0;
};

// ---- state ----

struct MoCoConfig {
  EncoderArch arch;
  std::size_t queue_size = 4096;
  double temperature = 0.07;
  double momentum = 0.999;
  int batch_size = 256;
  int epochs = 40;
  LrSchedule schedule = LrSchedule::constant(1e-6, 40);
  AdamOptions adam;
  AugPolicy policy;
  std::uint64_t seed = 0;
};

struct MoCoState {
  EncoderParams query, key;
  NegativeQueue queue;
  double temperature = 0.07;
  double momentum = 0.999;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  AdamState adam;
  ChannelStats stats;
  std::string config_hash;

  /// Key encoder starts as an exact copy of the query encoder.
  static MoCoState init(const MoCoConfig& cfg, const ChannelStats& stats, std::uint64_t seed) {
    if (!(cfg.temperature > 0.0)) throw ConfigError("pretrain: temperature must be > 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum <= 1.0)) throw ConfigError("pretrain: momentum must be in [0, 1]");
    MoCoState s;
    s.query = EncoderParams::init(cfg.arch, seed);
    s.key = s.query;
    s.queue = NegativeQueue(cfg.queue_size, cfg.arch.feature_dim);
    s.temperature = cfg.temperature;
    s.momentum = cfg.momentum;
    s.stats = stats;
    return s;
  }
};

/// key <- m * key + (1 - m) * query, elementwise.
inline void momentum_update(EncoderParams& key, const EncoderParams& query, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("momentum_update: m must be in [0, 1]");
  if (!(key.arch == query.arch)) throw ShapeError("momentum_update: encoder architectures differ");
  auto kt = key.tensors();
  const auto qt = query.tensors();
  for (std::size_t i = 0; i < kt.size(); ++i) {
    if (kt[i]->size() != qt[i]->size()) throw ShapeError("momentum_update: tensor size mismatch");
    for (std::size_t j = 0; j < kt[i]->size(); ++j)
      kt[i]->data[j] = m * kt[i]->data[j] + (1.0 - m) * qt[i]->data[j];
  }
}

inline void queue_push(MoCoState& state, const Tensor& keys) {
  if (keys.shape.size() != 2 || static_cast<std::size_t>(keys.dim(1)) != state.queue.dim())
    throw ShapeError("queue_push: keys must be B x " + std::to_string(state.queue.dim()));
  state.queue.push(keys.data);
}

/// Mean InfoNCE over a batch of queries against the current queue, plus
/// d(loss)/d(q) and the mean positive-pair cosine q.k+.
struct BatchContrastive {
  double loss = 0.0;
  double pos_cos = 0.0;
  Tensor grad_q;
};

inline BatchContrastive infonce_batch(const Tensor& q, const Tensor& k, std::span<const double> negatives, double tau) {
  const int B = q.dim(0), D = q.dim(1);
  BatchContrastive r;
  r.grad_q = Tensor(q.shape);
  for (int b = 0; b < B; ++b) {
    std::span<const double> qb(q.data.data() + std::size_t(b) * D, D);
    std::span<const double> kb(k.data.data() + std::size_t(b) * D, D);
    const auto one = infonce_loss(qb, kb, negatives, tau);
    r.loss += one.loss;
    for (int i = 0; i < D; ++i) {
      r.grad_q.data[std::size_t(b) * D + i] = one.grad_q[i] / B;
      r.pos_cos += qb[i] * kb[i];
    }
  }
  r.loss /= B;
  r.pos_cos /= B;
  return r;
}

// ---- training ----

struct EpochStats {
  std::uint64_t epoch = 0;
  double loss = 0.0;
  double pos_cos = 0.0;
  double lr = 0.0;
};

namespace detail {

inline std::uint64_t view_seed(std::uint64_t seed, std::uint64_t epoch, std::size_t index) {
  return derive_seed(seed, 1000 + epoch, index);
}

inline std::vector<Image> normalized(std::vector<Image> imgs, const ChannelStats& stats) {
  for (auto& im : imgs) im = normalize(std::move(im), stats);
  return imgs;
}

}  // namespace detail

/// Data-dependent start for the projection bias (see center_projection_bias):
/// pooled features of one augmented view of up to `n` seeded corpus images.
/// Applied to the query encoder and copied to the key encoder.
inline void init_projection_bias(MoCoState& state, const ImageCorpus& corpus, const AugPolicy& policy,
                                 std::uint64_t seed, std::size_t n = 256) {
  if (corpus.images.empty()) throw DataError("pretrain: empty corpus");
  std::vector<std::size_t> order(corpus.images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng(derive_seed(seed, 0xb1a5)).shuffle(order);
  order.resize(std::min(n, order.size()));
  std::vector<double> rows;
  for (const auto& [b0, b1] : batch_ranges(order.size(), 64)) {
    std::vector<Image> views;
    for (std::size_t i = b0; i < b1; ++i)
      views.push_back(sample_view_pair(corpus.images[order[i]], policy, derive_seed(seed, 0xb1a6, i)).first);
    const Tensor f = encoder_features(state.query, make_batch(detail::normalized(std::move(views), state.stats)));
    rows.insert(rows.end(), f.data.begin(), f.data.end());
  }
  Tensor pooled({static_cast<int>(order.size()), state.query.arch.backbone_dim()});
  pooled.data = std::move(rows);
  center_projection_bias(state.query, pooled);
  state.key.proj_b = state.query.proj_b;
}

/// Fills the queue before the first gradient step by encoding second views
/// of corpus images (seeded order, wrapping if the corpus is smaller than
/// the queue) with the key encoder.
inline void prefill_queue(MoCoState& state, const ImageCorpus& corpus, const AugPolicy& policy, int batch_size,
                          std::uint64_t seed) {
  if (corpus.images.empty()) throw DataError("pretrain: empty corpus");
  std::vector<std::size_t> order(corpus.images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng(derive_seed(seed, 0xf111)).shuffle(order);
  std::size_t next = 0;
  while (!state.queue.full()) {
    const std::size_t want = std::min<std::size_t>(batch_size, state.queue.capacity() - state.queue.size());
    std::vector<Image> views;
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t idx = order[(next + i) % order.size()];
      views.push_back(sample_view_pair(corpus.images[idx], policy, derive_seed(seed, 0xf112, next + i)).second);
    }
    next += want;
    queue_push(state, encoder_forward(state.key, make_batch(detail::normalized(std::move(views), state.stats))));
  }
}

/// One pass over the corpus in seeded order (the trailing partial batch is
/// dropped). Per batch: two views per image; q from the query encoder, k
/// from the key encoder without gradient; InfoNCE against the queue; Adam on
/// the query encoder; momentum update of the key encoder; enqueue k.
inline EpochStats pretrain_epoch(MoCoState& state, const ImageCorpus& corpus, const MoCoConfig& cfg) {
  if (corpus.images.empty()) throw DataError("pretrain: empty corpus");
  if (cfg.batch_size < 1 || static_cast<std::size_t>(cfg.batch_size) > corpus.images.size())
    throw DataError("pretrain: batch size " + std::to_string(cfg.batch_size) + " must be in [1, corpus size " +
                    std::to_string(corpus.images.size()));
  if (state.queue.size() == 0) prefill_queue(state, corpus, cfg.policy, cfg.batch_size, cfg.seed);

  std::vector<std::size_t> order(corpus.images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng(derive_seed(cfg.seed, 2000 + state.epoch)).shuffle(order);
  const std::size_t steps = order.size() / cfg.batch_size;

  EpochStats stats;
  stats.epoch = state.epoch;
  auto params = state.query.tensors();
  for (std::size_t s = 0; s < steps; ++s) try {
    std::vector<Image> v1, v2;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = order[s * cfg.batch_size + b];
      auto [a, c] = sample_view_pair(corpus.images[idx], cfg.policy, detail::view_seed(cfg.seed, state.epoch, idx));
      v1.push_back(normalize(std::move(a), state.stats));
      v2.push_back(normalize(std::move(c), state.stats));
    }
    EncoderTrace trace;
    const Tensor q = encoder_forward(state.query, make_batch(v1), trace);
    const Tensor k = encoder_forward(state.key, make_batch(v2));
    const auto negatives = state.queue.entries();
    const auto res = infonce_batch(q, k, negatives, state.temperature);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");

    const double lr = lr_at(cfg.schedule, double(state.epoch) + double(s) / double(steps));
    state.query.zero_grad();
    encoder_backward(state.query, trace, res.grad_q);
    adam_step(params, state.adam, lr, cfg.adam);
    momentum_update(state.key, state.query, state.momentum);
    queue_push(state, k);
    ++state.step;

    stats.loss += res.loss;
    stats.pos_cos += res.pos_cos;
    stats.lr = lr;
  } catch (const NumericError& e) {
    throw NumericError("pretrain: step " + std::to_string(state.step) + " (epoch " + std::to_string(state.epoch) +
                       "): " + e.what());
  }
  stats.loss /= double(steps);
  stats.pos_cos /= double(steps);
  ++state.epoch;
  return stats;
}

/// Contrastive quality on held-out images without touching the state:
/// queries and positive keys come from two views of each image in `images`;
/// the negative set is `negatives` encoded (unaugmented) by the key encoder.
struct ContrastiveEval {
  double loss = 0.0;
  double pos_cos = 0.0;
};

inline ContrastiveEval evaluate_contrastive(const MoCoState& state, const std::vector<Image>& images,
                                            const std::vector<Image>& negatives, const AugPolicy& policy,
                                            std::uint64_t seed, int batch_size = 32) {
  if (images.empty() || negatives.empty()) throw DataError("evaluate_contrastive: empty image set");
  std::vector<double> neg;
  for (const auto& [b0, b1] : batch_ranges(negatives.size(), batch_size)) {
    std::vector<Image> chunk(negatives.begin() + b0, negatives.begin() + b1);
    const Tensor k = encoder_forward(state.key, make_batch(detail::normalized(std::move(chunk), state.stats)));
    neg.insert(neg.end(), k.data.begin(), k.data.end());
  }
  ContrastiveEval out;
  for (const auto& [b0, b1] : batch_ranges(images.size(), batch_size)) {
    std::vector<Image> v1, v2;
    for (std::size_t j = b0; j < b1; ++j) {
      auto [a, b] = sample_view_pair(images[j], policy, derive_seed(seed, j));
      v1.push_back(normalize(std::move(a), state.stats));
      v2.push_back(normalize(std::move(b), state.stats));
    }
    const Tensor q = encoder_forward(state.query, make_batch(v1));
    const Tensor k = encoder_forward(state.key, make_batch(v2));
    const auto r = infonce_batch(q, k, neg, state.temperature);
    out.loss += r.loss * double(v1.size());
    out.pos_cos += r.pos_cos * double(v1.size());
  }
  out.loss /= double(images.size());
  out.pos_cos /= double(images.size());
  return out;
}

// ---- checkpoints ----

inline constexpr std::string_view kCheckpointMagic = "IMUSPEC\x01";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kKindEncoder = 1;
inline constexpr std::uint32_t kKindMoCo = 2;

namespace detail {

inline void write_stats(BinaryWriter& w, const ChannelStats& s) {
  for (int c = 0; c < 3; ++c) w.f64(s.mean[c]);
  for (int c = 0; c < 3; ++c) w.f64(s.std[c]);
}

inline ChannelStats read_stats(BinaryReader& r) {
  ChannelStats s;
  for (int c = 0; c < 3; ++c) s.mean[c] = r.f64();
  for (int c = 0; c < 3; ++c) s.std[c] = r.f64();
  return s;
}

inline std::uint32_t read_header(BinaryReader& r) {
  if (r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) throw DataError("checkpoint: bad magic bytes");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  return r.u32();
}

}  // namespace detail

/// Layout (all integers and reals little-endian):
///   magic[8] version:u32 kind:u32 config_hash:text stats:6*f64
///   temperature:f64 momentum:f64 step:u64 epoch:u64
///   query: arch text + weights, key: arch text + weights
///   queue: capacity dim size head + capacity*dim f64
///   adam: step count, then per tensor (len, m[len], v[len])
inline std::string serialize_checkpoint(const MoCoState& s) {
  BinaryWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(kKindMoCo);
  w.text(s.config_hash);
  detail::write_stats(w, s.stats);
  w.f64(s.temperature);
  w.f64(s.momentum);
  w.u64(s.step);
  w.u64(s.epoch);
  write_params(w, s.query);
  write_params(w, s.key);
  w.u64(s.queue.capacity());
  w.u64(s.queue.dim());
  w.u64(s.queue.size());
  w.u64(s.queue.head());
  w.f64s(s.queue.raw());
  w.u64(s.adam.step);
  w.u64(s.adam.m.size());
  for (std::size_t i = 0; i < s.adam.m.size(); ++i) {
    w.u64(s.adam.m[i].size());
    w.f64s(s.adam.m[i]);
    w.f64s(s.adam.v[i]);
  }
  return w.str();
}

inline MoCoState deserialize_checkpoint(std::string bytes, const EncoderArch* expected = nullptr) {
  BinaryReader r(std::move(bytes));
  if (detail::read_header(r) != kKindMoCo) throw DataError("checkpoint: not a pre-training checkpoint");
  MoCoState s;
  s.config_hash = r.text();
  s.stats = detail::read_stats(r);
  s.temperature = r.f64();
  s.momentum = r.f64();
  s.step = r.u64();
  s.epoch = r.u64();
  s.query = read_params(r, expected);
  s.key = read_params(r, &s.query.arch);
  const auto cap = r.u64(), dim = r.u64(), size = r.u64(), head = r.u64();
  if (dim != static_cast<std::uint64_t>(s.query.arch.feature_dim)) throw DataError("checkpoint: queue dimension mismatch");
  std::vector<double> qdata(cap * dim);
  r.f64s(qdata);
  s.queue = NegativeQueue::restore(cap, dim, size, head, std::move(qdata));
  s.adam.step = r.u64();
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = r.u64();
    s.adam.m.emplace_back(len);
    s.adam.v.emplace_back(len);
    r.f64s(s.adam.m.back());
    r.f64s(s.adam.v.back());
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return s;
}

/// Frozen encoder as consumed by the probe: weights plus the normalization
/// statistics of its pre-training corpus.
struct EncoderCheckpoint {
  EncoderParams params;
  ChannelStats stats;
  std::string config_hash;
};

inline std::string serialize_encoder(const EncoderCheckpoint& e) {
  BinaryWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(kKindEncoder);
  w.text(e.config_hash);
  detail::write_stats(w, e.stats);
  write_params(w, e.params);
  return w.str();
}

/// Accepts either checkpoint kind; a pre-training checkpoint yields its
/// query encoder.
inline EncoderCheckpoint deserialize_encoder(std::string bytes, const EncoderArch* expected = nullptr) {
  BinaryReader r(bytes);
  const auto kind = detail::read_header(r);
  if (kind == kKindMoCo) {
    auto s = deserialize_checkpoint(std::move(bytes), expected);
    return {std::move(s.query), s.stats, s.config_hash};
  }
  if (kind != kKindEncoder) throw DataError("checkpoint: unknown kind " + std::to_string(kind));
  EncoderCheckpoint e;
  e.config_hash = r.text();
  e.stats = detail::read_stats(r);
  e.params = read_params(r, expected);
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return e;
}

inline std::string checkpoint_metadata(const MoCoState& s) {
  auto join = [](const std::array<double, 3>& a) {
    return format_double(a[0]) + "," + format_double(a[1]) + "," + format_double(a[2]);
  };
  Fnv1a h;
  const auto bytes = serialize_checkpoint(s);
  h.update(bytes);
  return "format=imuspec-checkpoint\nversion=" + std::to_string(kCheckpointVersion) +
         "\nfeature_dim=" + std::to_string(s.query.arch.feature_dim) + "\nqueue_size=" + std::to_string(s.queue.capacity()) +
         "\nepoch=" + std::to_string(s.epoch) + "\nstep=" + std::to_string(s.step) + "\ncorpus_mean=" + join(s.stats.mean) +
         "\ncorpus_std=" + join(s.stats.std) + "\nconfig_hash=" + s.config_hash + "\nchecksum=" + to_hex(h.digest()) + "\n";
}

inline void save_checkpoint(const std::string& path, const MoCoState& s) {
  write_file(path, serialize_checkpoint(s));
  write_file(path + ".meta", checkpoint_metadata(s));
}

inline MoCoState load_checkpoint(const std::string& path, const EncoderArch* expected = nullptr) {
  return deserialize_checkpoint(read_file(path), expected);
}

inline EncoderCheckpoint load_encoder(const std::string& path, const EncoderArch* expected = nullptr) {
  return deserialize_encoder(read_file(path), expected);
}

}  // namespace imuspec
