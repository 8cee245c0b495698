#include <gtest/gtest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "imuspec/moco.hpp"
#include "test_util.hpp"

using namespace imuspec;

namespace {

std::vector<double> unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

std::vector<double> units(Rng& rng, std::size_t k, std::size_t d) {
  std::vector<double> out;
  for (std::size_t i = 0; i < k; ++i) {
    const auto u = unit(rng, d);
    out.insert(out.end(), u.begin(), u.end());
  }
  return out;
}

MoCoConfig tiny_config() {
  MoCoConfig c;
  c.arch.channels = {4, 8};
  c.arch.feature_dim = 8;
  c.queue_size = 12;
  c.batch_size = 4;
  c.epochs = 3;
  c.schedule = LrSchedule::constant(1e-3, 3);
  c.seed = 5;
  return c;
}

ImageCorpus tiny_corpus() { return synth_image_corpus(16, 12, 16, 3); }

MoCoState tiny_state(const MoCoConfig& c, const ImageCorpus& corpus) {
  auto s = MoCoState::init(c, corpus.stats, c.seed);
  init_projection_bias(s, corpus, c.policy, c.seed);
  s.config_hash = "test";
  return s;
}

}  // namespace

TEST(InfoNce, UniformLogitsGiveLogKPlusOne) {
  for (std::size_t K = 1; K <= 64; ++K) {
    // q orthogonal to every key: all logits are zero
    const std::vector<double> q{1.0, 0.0};
    const std::vector<double> kp{0.0, 1.0};
    std::vector<double> neg;
    for (std::size_t j = 0; j < K; ++j) neg.insert(neg.end(), {0.0, j % 2 ? 1.0 : -1.0});
    EXPECT_NEAR(infonce_loss(q, kp, neg, 0.07).loss, std::log(double(K + 1)), 1e-12) << K;
  }
}

TEST(InfoNce, WorkedExample) {
  const std::vector<double> q{1.0, 0.0, 0.0};
  const std::vector<double> kp{1.0, 0.0, 0.0};
  const std::vector<double> neg{0.0, 1.0, 0.0, 0.0, 0.0, 1.0};
  const double l = infonce_loss(q, kp, neg, 1.0).loss;
  EXPECT_NEAR(l, 0.5514, 1e-4);
  EXPECT_NEAR(l, std::log(1.0 + 2.0 / std::exp(1.0)), 1e-15);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (std::size_t K : {1, 7, 64}) {
    auto q = unit(rng, 16);
    const auto kp = unit(rng, 16);
    const auto neg = units(rng, K, 16);
    for (double tau : {0.07, 0.5, 1.0}) {
      const auto g = infonce_loss(q, kp, neg, tau).grad_q;
      testutil::GradReport r;
      testutil::fd_check(q, g, [&] { return infonce_loss(q, kp, neg, tau).loss; }, r);
      EXPECT_LT(r.max_rel, 1e-6) << "K=" << K << " tau=" << tau;
    }
  }
}

TEST(InfoNce, TemperatureScalesLogits) {
  Rng rng(2);
  const auto q = unit(rng, 8), kp = unit(rng, 8);
  const auto neg = units(rng, 10, 8);
  std::vector<double> q2 = q;
  for (auto& v : q2) v /= 0.2;
  EXPECT_NEAR(infonce_loss(q, kp, neg, 0.2).loss, infonce_loss(q2, kp, neg, 1.0).loss, 1e-12);
}

TEST(InfoNce, StableAtTinyTemperatureAndRejectsBadInput) {
  Rng rng(3);
  const auto q = unit(rng, 8), kp = unit(rng, 8);
  const auto neg = units(rng, 5, 8);
  const auto r = infonce_loss(q, kp, neg, 1e-4);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GE(r.loss, 0.0);
  EXPECT_THROW(infonce_loss(q, kp, neg, 0.0), std::invalid_argument);
  EXPECT_THROW(infonce_loss(q, kp, std::vector<double>{}, 0.1), ShapeError);
  EXPECT_THROW(infonce_loss(q, kp, std::vector<double>(7, 0.0), 0.1), ShapeError);
}

TEST(InfoNce, BatchAveragesRows) {
  Rng rng(4);
  Tensor q({3, 8}), k({3, 8});
  q.data = units(rng, 3, 8);
  k.data = units(rng, 3, 8);
  const auto neg = units(rng, 6, 8);
  const auto b = infonce_batch(q, k, neg, 0.1);
  double loss = 0.0, cos = 0.0;
  for (int i = 0; i < 3; ++i) {
    std::span<const double> qi(q.data.data() + i * 8, 8), ki(k.data.data() + i * 8, 8);
    const auto one = infonce_loss(qi, ki, neg, 0.1);
    loss += one.loss / 3;
    for (int d = 0; d < 8; ++d) {
      cos += qi[d] * ki[d] / 3;
      EXPECT_NEAR(b.grad_q.data[i * 8 + d], one.grad_q[d] / 3, 1e-15);
    }
  }
  EXPECT_NEAR(b.loss, loss, 1e-12);
  EXPECT_NEAR(b.pos_cos, cos, 1e-12);
}

TEST(Momentum, DistanceShrinksGeometrically) {
  const auto query = EncoderParams::init(tiny_config().arch, 1);
  const auto start = EncoderParams::init(tiny_config().arch, 2);
  auto dist = [&](const EncoderParams& a) {
    double s = 0.0;
    const auto at = a.tensors(), qt = query.tensors();
    for (std::size_t i = 0; i < at.size(); ++i)
      for (std::size_t j = 0; j < at[i]->size(); ++j) s += std::pow(at[i]->data[j] - qt[i]->data[j], 2);
    return std::sqrt(s);
  };
  const double d0 = dist(start);
  for (double m : {0.0, 0.5, 0.9, 0.999}) {
    auto key = start;
    for (int u = 1; u <= 100; ++u) {
      momentum_update(key, query, m);
      EXPECT_NEAR(dist(key), std::pow(m, u) * d0, 1e-9) << "m=" << m << " u=" << u;
    }
  }
}

TEST(Momentum, ScalarClosedForm) {
  EncoderArch a;
  a.channels = {1};
  a.feature_dim = 1;
  a.in_channels = 1;
  a.conv.kernel = 1;
  auto key = EncoderParams::init(a, 1), query = key;
  for (auto* t : key.tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
  for (auto* t : query.tensors()) std::fill(t->data.begin(), t->data.end(), 1.0);
  for (int u = 1; u <= 30; ++u) {
    momentum_update(key, query, 0.9);
    EXPECT_NEAR(key.proj_w.data[0], 1.0 - std::pow(0.9, u), 1e-12);
  }
  EXPECT_THROW(momentum_update(key, query, 1.5), std::invalid_argument);
}

TEST(Momentum, OneFreezesZeroCopies) {
  const auto q = EncoderParams::init(tiny_config().arch, 1);
  auto k = EncoderParams::init(tiny_config().arch, 2);
  const auto before = k.checksum();
  momentum_update(k, q, 1.0);
  EXPECT_EQ(k.checksum(), before);
  momentum_update(k, q, 0.0);
  EXPECT_EQ(k.checksum(), q.checksum());
}

TEST(Queue, FifoOrder) {
  NegativeQueue q(5, 2);
  q.push(std::vector<double>{1, 1, 2, 2});
  EXPECT_EQ(q.size(), 2u);
  EXPECT_EQ(q.entries(), (std::vector<double>{1, 1, 2, 2}));
  q.push(std::vector<double>{3, 3, 4, 4, 5, 5});
  EXPECT_TRUE(q.full());
  q.push(std::vector<double>{6, 6, 7, 7});
  EXPECT_EQ(q.size(), 5u);
  EXPECT_EQ(q.entries(), (std::vector<double>{3, 3, 4, 4, 5, 5, 6, 6, 7, 7}));
}

TEST(Queue, FullQueueHoldsLastKKeys) {
  Rng rng(5);
  NegativeQueue q(7, 3);
  std::vector<double> all;
  for (int i = 0; i < 9; ++i) {
    std::vector<double> batch(3 * (1 + i % 3));
    for (auto& v : batch) v = rng.uniform();
    all.insert(all.end(), batch.begin(), batch.end());
    q.push(batch);
  }
  EXPECT_EQ(q.entries(), std::vector<double>(all.end() - 21, all.end()));
}

TEST(Queue, PushingCopiesKeys) {
  NegativeQueue q(2, 1);
  std::vector<double> keys{1.0};
  q.push(keys);
  keys[0] = 9.0;
  EXPECT_EQ(q.entries()[0], 1.0);
}

TEST(Queue, Errors) {
  NegativeQueue q(3, 2);
  EXPECT_THROW(q.push(std::vector<double>(8, 0.0)), std::invalid_argument);
  EXPECT_THROW(q.push(std::vector<double>(3, 0.0)), ShapeError);
  EXPECT_THROW(NegativeQueue(0, 2), ConfigError);
}

TEST(MoCo, KeyStartsAsQueryCopy) {
  const auto c = tiny_config();
  const auto s = MoCoState::init(c, ChannelStats{}, 9);
  EXPECT_EQ(s.key.checksum(), s.query.checksum());
  EXPECT_EQ(s.queue.size(), 0u);
}

TEST(MoCo, ProjectionBiasCentersMeanFeature) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto s = MoCoState::init(c, corpus.stats, 1);
  init_projection_bias(s, corpus, c.policy, c.seed);
  EXPECT_EQ(s.key.checksum(), s.query.checksum());
  Tensor pooled({3, 8});
  Rng rng(2);
  for (auto& v : pooled.data) v = rng.uniform(0, 2);
  center_projection_bias(s.query, pooled);
  const auto proj = linear_forward(pooled, s.query.proj_w, s.query.proj_b);
  for (int f = 0; f < 8; ++f) EXPECT_NEAR(proj.data[f] + proj.data[8 + f] + proj.data[16 + f], 0.0, 1e-12);
}

TEST(MoCo, EpochFillsQueueAndUpdatesBothEncoders) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto s = tiny_state(c, corpus);
  const auto q0 = s.query.checksum(), k0 = s.key.checksum();
  const auto st = pretrain_epoch(s, corpus, c);
  EXPECT_TRUE(s.queue.full());
  EXPECT_EQ(s.step, 4u);
  EXPECT_EQ(s.epoch, 1u);
  EXPECT_NE(s.query.checksum(), q0);
  EXPECT_NE(s.key.checksum(), k0);
  EXPECT_NE(s.key.checksum(), s.query.checksum());
  EXPECT_TRUE(std::isfinite(st.loss));
  EXPECT_GT(st.loss, 0.0);
  EXPECT_LE(std::abs(st.pos_cos), 1.0 + 1e-12);
  EXPECT_EQ(st.lr, 1e-3);
}

TEST(MoCo, BatchLargerThanCorpusRejected) {
  auto c = tiny_config();
  c.batch_size = 17;
  const auto corpus = tiny_corpus();
  auto s = tiny_state(c, corpus);
  EXPECT_THROW(pretrain_epoch(s, corpus, c), DataError);
}

TEST(MoCo, DeterministicCheckpoints) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto a = tiny_state(c, corpus), b = tiny_state(c, corpus);
  for (int e = 0; e < 2; ++e) {
    pretrain_epoch(a, corpus, c);
    pretrain_epoch(b, corpus, c);
  }
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(MoCo, ResumeEqualsUninterrupted) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto full = tiny_state(c, corpus);
  for (int e = 0; e < 3; ++e) pretrain_epoch(full, corpus, c);

  auto part = tiny_state(c, corpus);
  pretrain_epoch(part, corpus, c);
  const auto path = (std::filesystem::temp_directory_path() / "imuspec_resume.ckpt").string();
  save_checkpoint(path, part);
  auto resumed = load_checkpoint(path);
  for (int e = 0; e < 2; ++e) pretrain_epoch(resumed, corpus, c);
  EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(full));
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta");
}

TEST(Checkpoint, RoundTripByteIdentical) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto s = tiny_state(c, corpus);
  pretrain_epoch(s, corpus, c);
  const auto bytes = serialize_checkpoint(s);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.queue, s.queue);
  EXPECT_EQ(back.stats, s.stats);

  const EncoderCheckpoint enc{s.query, s.stats, s.config_hash};
  const auto eb = serialize_encoder(enc);
  EXPECT_EQ(serialize_encoder(deserialize_encoder(eb)), eb);
  EXPECT_EQ(deserialize_encoder(bytes).params.checksum(), s.query.checksum());
}

TEST(Checkpoint, MetadataFields) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  const auto s = tiny_state(c, corpus);
  const auto meta = checkpoint_metadata(s);
  for (const char* key : {"format=imuspec-checkpoint", "feature_dim=8", "queue_size=12", "epoch=0", "corpus_mean=",
                          "config_hash=test", "checksum="})
    EXPECT_NE(meta.find(key), std::string::npos) << key;
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  const auto bytes = serialize_checkpoint(tiny_state(c, corpus));
  auto other = c.arch;
  other.feature_dim = 16;
  try {
    deserialize_checkpoint(bytes, &other);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("feature dim 8"), std::string::npos) << e.what();
  }
  EXPECT_THROW(deserialize_checkpoint("NOTACKPT" + bytes.substr(8)), DataError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "x"), DataError);
}

TEST(Evaluate, LeavesStateUntouchedAndIsDeterministic) {
  const auto c = tiny_config();
  const auto corpus = tiny_corpus();
  auto s = tiny_state(c, corpus);
  pretrain_epoch(s, corpus, c);
  const auto before = serialize_checkpoint(s);
  const auto held = synth_image_corpus(5, 12, 16, 77).images;
  const auto a = evaluate_contrastive(s, held, corpus.images, c.policy, 1, 2);
  const auto b = evaluate_contrastive(s, held, corpus.images, c.policy, 1, 4);
  EXPECT_EQ(serialize_checkpoint(s), before);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_NEAR(a.pos_cos, b.pos_cos, 1e-12);
  EXPECT_GT(a.loss, 0.0);
}
