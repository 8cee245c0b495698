#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <utility>
#include <string>
#include <vector>

#include "core.hpp"
#include "image.hpp"

namespace imuspec {

// ---- Tensor ----

/// Dense row-major array of doubles with an optional gradient slot of the
/// same shape.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  void zero_grad() { grad.assign(data.size(), 0.0); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

inline void check_finite(const Tensor& t, std::string_view where) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + std::string(where));
}

/// Stacks images into a B x 3 x H x W batch.
inline Tensor make_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("make_batch: empty batch");
  const int h = images.front().height, w = images.front().width;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw ShapeError("make_batch: images differ in size");
    std::copy(images[i].data.begin(), images[i].data.end(), t.data.begin() + i * images[i].data.size());
  }
  return t;
}

// ---- convolution ----

struct ConvGeometry {
  int kernel = 3, stride = 2, pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
  // Output positions whose tap k lands inside [0, in).
  std::pair<int, int> valid(int k, int in, int out) const {
    int lo = 0;
    while (lo < out && lo * stride - pad + k < 0) ++lo;
    int hi = out;
    while (hi > lo && (hi - 1) * stride - pad + k >= in) --hi;
    return {lo, hi};
  }
};

/// in: B x C x H x W, weight: O x C x k x k, bias: O.
inline Tensor conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, const ConvGeometry& g) {
  const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int O = weight.dim(0), k = g.kernel;
  const int Ho = g.out_size(H), Wo = g.out_size(W);
  Tensor out({B, O, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      double* op = out.data.data() + (std::size_t(b) * O + o) * Ho * Wo;
      std::fill(op, op + std::size_t(Ho) * Wo, bias.data[o]);
      for (int c = 0; c < C; ++c) {
        const double* ip = in.data.data() + (std::size_t(b) * C + c) * H * W;
        const double* wp = weight.data.data() + (std::size_t(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const auto [y0, y1] = g.valid(ky, H, Ho);
          for (int kx = 0; kx < k; ++kx) {
            const auto [x0, x1] = g.valid(kx, W, Wo);
            const double wv = wp[ky * k + kx];
            for (int oy = y0; oy < y1; ++oy) {
              const double* irow = ip + std::size_t(oy * g.stride - g.pad + ky) * W - g.pad + kx;
              double* orow = op + std::size_t(oy) * Wo;
              for (int ox = x0; ox < x1; ++ox) orow[ox] += wv * irow[ox * g.stride];
            }
          }
        }
      }
    }
  return out;
}

/// Accumulates into weight.grad / bias.grad; writes d(in) when grad_in is given.
inline void conv2d_backward(const Tensor& in, Tensor& weight, Tensor& bias, const Tensor& grad_out,
                            const ConvGeometry& g, Tensor* grad_in) {
  const int B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int O = weight.dim(0), k = g.kernel;
  const int Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  weight.ensure_grad();
  bias.ensure_grad();
  if (grad_in) *grad_in = Tensor(in.shape);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      const double* gp = grad_out.data.data() + (std::size_t(b) * O + o) * Ho * Wo;
      double bsum = 0.0;
      for (std::size_t i = 0; i < std::size_t(Ho) * Wo; ++i) bsum += gp[i];
      bias.grad[o] += bsum;
      for (int c = 0; c < C; ++c) {
        const double* ip = in.data.data() + (std::size_t(b) * C + c) * H * W;
        double* gip = grad_in ? grad_in->data.data() + (std::size_t(b) * C + c) * H * W : nullptr;
        const std::size_t wbase = (std::size_t(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          const auto [y0, y1] = g.valid(ky, H, Ho);
          for (int kx = 0; kx < k; ++kx) {
            const auto [x0, x1] = g.valid(kx, W, Wo);
            const double wv = weight.data[wbase + ky * k + kx];
            double wsum = 0.0;
            for (int oy = y0; oy < y1; ++oy) {
              const std::size_t ioff = std::size_t(oy * g.stride - g.pad + ky) * W - g.pad + kx;
              const double* irow = ip + ioff;
              const double* grow = gp + std::size_t(oy) * Wo;
              for (int ox = x0; ox < x1; ++ox) wsum += grow[ox] * irow[ox * g.stride];
              if (gip) {
                double* girow = gip + ioff;
                for (int ox = x0; ox < x1; ++ox) girow[ox * g.stride] += wv * grow[ox];
              }
            }
            weight.grad[wbase + ky * k + kx] += wsum;
          }
        }
      }
    }
}

inline void relu_inplace(Tensor& t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

// ---- dense ----

/// y = x W^T + b with x: B x In, weight: Out x In.
inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int B = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  if (weight.dim(1) != In) throw ShapeError("linear: input width " + std::to_string(In) + " but weight is " + weight.shape_str());
  Tensor y({B, Out});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < Out; ++o) {
      double s = bias.data[o];
      const double* wr = weight.data.data() + std::size_t(o) * In;
      const double* xr = x.data.data() + std::size_t(b) * In;
      for (int i = 0; i < In; ++i) s += wr[i] * xr[i];
      y.data[std::size_t(b) * Out + o] = s;
    }
  return y;
}

/// Accumulates parameter gradients and returns d(x).
inline Tensor linear_backward(const Tensor& x, Tensor& weight, Tensor& bias, const Tensor& grad_y) {
  const int B = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  weight.ensure_grad();
  bias.ensure_grad();
  Tensor gx({B, In});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < Out; ++o) {
      const double g = grad_y.data[std::size_t(b) * Out + o];
      bias.grad[o] += g;
      const double* xr = x.data.data() + std::size_t(b) * In;
      double* gwr = weight.grad.data() + std::size_t(o) * In;
      const double* wr = weight.data.data() + std::size_t(o) * In;
      double* gxr = gx.data.data() + std::size_t(b) * In;
      for (int i = 0; i < In; ++i) {
        gwr[i] += g * xr[i];
        gxr[i] += g * wr[i];
      }
    }
  return gx;
}

inline constexpr double kNormEpsilon = 1e-12;

/// Row-wise x / max(||x||, eps).
inline Tensor l2_normalize_rows(const Tensor& x) {
  const int B = x.dim(0), D = x.dim(1);
  Tensor y = x;
  y.grad.clear();
  for (int b = 0; b < B; ++b) {
    double* r = y.data.data() + std::size_t(b) * D;
    double n2 = 0.0;
    for (int i = 0; i < D; ++i) n2 += r[i] * r[i];
    const double n = std::max(std::sqrt(n2), kNormEpsilon);
    for (int i = 0; i < D; ++i) r[i] /= n;
  }
  return y;
}

inline Tensor l2_normalize_rows_backward(const Tensor& x, const Tensor& grad_y) {
  const int B = x.dim(0), D = x.dim(1);
  Tensor gx({B, D});
  for (int b = 0; b < B; ++b) {
    const double* xr = x.data.data() + std::size_t(b) * D;
    const double* gr = grad_y.data.data() + std::size_t(b) * D;
    double* out = gx.data.data() + std::size_t(b) * D;
    double n2 = 0.0;
    for (int i = 0; i < D; ++i) n2 += xr[i] * xr[i];
    const double n = std::sqrt(n2);
    if (n <= kNormEpsilon) {
      for (int i = 0; i < D; ++i) out[i] = gr[i] / kNormEpsilon;
      continue;
    }
    double dot = 0.0;
    for (int i = 0; i < D; ++i) dot += xr[i] * gr[i];
    for (int i = 0; i < D; ++i) out[i] = (gr[i] - xr[i] * dot / n2) / n;
  }
  return gx;
}

// ---- encoder ----

/// Conv -> ReLU stages, global average pool, linear projection, L2 norm.
struct EncoderArch {
  int in_channels = 3;
  std::vector<int> channels{8, 16, 32, 64};
  ConvGeometry conv;
  int feature_dim = 64;

  int backbone_dim() const { return channels.back(); }

  std::string describe() const {
    std::string ch;
    for (std::size_t i = 0; i < channels.size(); ++i) ch += (i ? "," : "") + std::to_string(channels[i]);
    return "arch=convnet\nin_channels=" + std::to_string(in_channels) + "\nchannels=" + ch +
           "\nkernel=" + std::to_string(conv.kernel) + "\nstride=" + std::to_string(conv.stride) +
           "\npad=" + std::to_string(conv.pad) + "\nfeature_dim=" + std::to_string(feature_dim) + "\n";
  }

  static EncoderArch parse(std::string_view text) {
    EncoderArch a;
    a.channels.clear();
    for (const auto& line : split(text, '\n')) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("architecture: malformed line '" + line + "'");
      const auto key = line.substr(0, eq), val = line.substr(eq + 1);
      long long v = 0;
      auto num = [&] {
        if (!parse_int(val, v)) throw DataError("architecture: bad integer for " + key);
        return static_cast<int>(v);
      };
      if (key == "arch") {
        if (val != "convnet") throw DataError("architecture: unknown arch '" + val + "'");
      } else if (key == "in_channels") a.in_channels = num();
      else if (key == "channels") {
        for (const auto& c : split(val, ',')) {
          if (!parse_int(c, v) || v < 1) throw DataError("architecture: bad channel count");
          a.channels.push_back(static_cast<int>(v));
        }
      } else if (key == "kernel") a.conv.kernel = num();
      else if (key == "stride") a.conv.stride = num();
      else if (key == "pad") a.conv.pad = num();
      else if (key == "feature_dim") a.feature_dim = num();
      else throw DataError("architecture: unknown key '" + key + "'");
    }
    a.validate();
    return a;
  }

  void validate() const {
    if (channels.empty()) throw ConfigError("architecture: at least one conv stage required");
    if (in_channels < 1 || feature_dim < 1 || conv.kernel < 1 || conv.stride < 1 || conv.pad < 0)
      throw ConfigError("architecture: invalid dimensions");
  }

  bool operator==(const EncoderArch& o) const { return describe() == o.describe(); }
};

struct EncoderParams {
  EncoderArch arch;
  std::vector<Tensor> conv_w, conv_b;
  Tensor proj_w, proj_b;

  /// He-uniform conv weights, zero biases, uniform(+-1/sqrt(fan_in)) projection.
  static EncoderParams init(const EncoderArch& arch, std::uint64_t seed) {
    arch.validate();
    EncoderParams p;
    p.arch = arch;
    Rng rng(seed);
    int in = arch.in_channels;
    const int k = arch.conv.kernel;
    for (int out : arch.channels) {
      Tensor w({out, in, k, k});
      const double bound = std::sqrt(6.0 / double(in * k * k));
      for (auto& v : w.data) v = rng.uniform(-bound, bound);
      p.conv_w.push_back(std::move(w));
      p.conv_b.emplace_back(std::vector<int>{out});
      in = out;
    }
    p.proj_w = Tensor({arch.feature_dim, in});
    const double bound = 1.0 / std::sqrt(double(in));
    for (auto& v : p.proj_w.data) v = rng.uniform(-bound, bound);
    p.proj_b = Tensor({arch.feature_dim});
    return p;
  }

  /// Parameter tensors in serialization order.
  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> t;
    for (std::size_t i = 0; i < conv_w.size(); ++i) {
      t.push_back(&conv_w[i]);
      t.push_back(&conv_b[i]);
    }
    t.push_back(&proj_w);
    t.push_back(&proj_b);
    return t;
  }
  std::vector<const Tensor*> tensors() const {
    std::vector<const Tensor*> t;
    for (auto* p : const_cast<EncoderParams*>(this)->tensors()) t.push_back(p);
    return t;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  void zero_grad() {
    for (auto* t : tensors()) t->zero_grad();
  }

  std::uint64_t checksum() const {
    Fnv1a h;
    h.update(arch.describe());
    for (const auto* t : tensors()) h.update(t->data);
    return h.digest();
  }
};

/// Activations kept for the backward pass. acts[0] is the input, acts[i + 1]
/// the post-ReLU output of conv stage i.
struct EncoderTrace {
  std::vector<Tensor> acts;
  Tensor pooled;
  Tensor projected;
  Tensor embedding;
};

inline Tensor global_avg_pool(const Tensor& a) {
  const int B = a.dim(0), C = a.dim(1);
  const std::size_t hw = std::size_t(a.dim(2)) * a.dim(3);
  Tensor p({B, C});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double* src = a.data.data() + (std::size_t(b) * C + c) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += src[i];
      p.data[std::size_t(b) * C + c] = s / double(hw);
    }
  return p;
}

inline Tensor global_avg_pool_backward(const Tensor& a, const Tensor& grad_p) {
  const int B = a.dim(0), C = a.dim(1);
  const std::size_t hw = std::size_t(a.dim(2)) * a.dim(3);
  Tensor g(a.shape);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const double v = grad_p.data[std::size_t(b) * C + c] / double(hw);
      std::fill_n(g.data.begin() + (std::size_t(b) * C + c) * hw, hw, v);
    }
  return g;
}

/// Runs the conv stack and pooling (the backbone). Fills trace.acts/pooled.
inline void encoder_backbone(const EncoderParams& p, const Tensor& batch, EncoderTrace& trace) {
  if (batch.shape.size() != 4 || batch.dim(1) != p.arch.in_channels)
    throw ShapeError("encoder: expected B x " + std::to_string(p.arch.in_channels) + " x H x W input, got " + batch.shape_str());
  trace.acts.clear();
  trace.acts.push_back(batch);
  for (std::size_t i = 0; i < p.conv_w.size(); ++i) {
    const auto& in = trace.acts.back();
    if (in.dim(1) != p.conv_w[i].dim(1))
      throw ShapeError("encoder: conv stage " + std::to_string(i) + " expects " + std::to_string(p.conv_w[i].dim(1)) +
                       " channels, got " + std::to_string(in.dim(1)));
    if (p.arch.conv.out_size(in.dim(2)) < 1 || p.arch.conv.out_size(in.dim(3)) < 1)
      throw ShapeError("encoder: input too small at conv stage " + std::to_string(i));
    Tensor out = conv2d_forward(in, p.conv_w[i], p.conv_b[i], p.arch.conv);
    relu_inplace(out);
    trace.acts.push_back(std::move(out));
  }
  trace.pooled = global_avg_pool(trace.acts.back());
}

/// [begin, end) chunks of at most `batch` rows.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, int batch) {
  const std::size_t b = std::max(batch, 1);
  std::vector<std::pair<std::size_t, std::size_t>> r;
  for (std::size_t i = 0; i < n; i += b) r.emplace_back(i, std::min(n, i + b));
  return r;
}

inline Tensor encoder_forward(const EncoderParams& p, const Tensor& batch, EncoderTrace& trace) {
  encoder_backbone(p, batch, trace);
  trace.projected = linear_forward(trace.pooled, p.proj_w, p.proj_b);
  trace.embedding = l2_normalize_rows(trace.projected);
  check_finite(trace.embedding, "encoder output");
  return trace.embedding;
}

inline Tensor encoder_forward(const EncoderParams& p, const Tensor& batch) {
  EncoderTrace trace;
  return encoder_forward(p, batch, trace);
}

/// Pooled backbone features (the representation a linear probe sees).
inline Tensor encoder_features(const EncoderParams& p, const Tensor& batch) {
  EncoderTrace trace;
  encoder_backbone(p, batch, trace);
  return trace.pooled;
}

/// Sets the projection bias so that the mean of `pooled` (rows of backbone
/// features) projects to zero. Pooled ReLU features share a large positive
/// component; left in place it points every embedding the same way.
inline void center_projection_bias(EncoderParams& p, const Tensor& pooled) {
  const int B = pooled.dim(0), C = pooled.dim(1);
  if (B < 1 || C != p.proj_w.dim(1)) throw ShapeError("center_projection_bias: expected B x " + std::to_string(p.proj_w.dim(1)));
  std::vector<double> mean(C, 0.0);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) mean[c] += pooled.data[std::size_t(b) * C + c] / B;
  for (int f = 0; f < p.proj_w.dim(0); ++f) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += p.proj_w.data[std::size_t(f) * C + c] * mean[c];
    p.proj_b.data[f] = -s;
  }
}

/// Backpropagates a gradient on acts.back() down the conv stack to
/// acts[stop]. Parameter gradients are accumulated when requested. Returns
/// the gradient with respect to acts[stop] (empty when stop == 0).
inline Tensor backward_conv_stack(EncoderParams& p, const EncoderTrace& trace, Tensor grad, std::size_t stop,
                                  bool param_grads) {
  for (std::size_t i = p.conv_w.size(); i-- > stop;) {
    const auto& out = trace.acts[i + 1];
    for (std::size_t j = 0; j < grad.size(); ++j)
      if (!(out.data[j] > 0.0)) grad.data[j] = 0.0;
    const bool need_input = i > 0;
    Tensor gin;
    if (param_grads) {
      conv2d_backward(trace.acts[i], p.conv_w[i], p.conv_b[i], grad, p.arch.conv, need_input ? &gin : nullptr);
    } else {
      Tensor w = p.conv_w[i], b = p.conv_b[i];
      conv2d_backward(trace.acts[i], w, b, grad, p.arch.conv, need_input ? &gin : nullptr);
    }
    grad = std::move(gin);
  }
  return grad;
}

/// Accumulates d(loss)/d(params) given d(loss)/d(embedding).
inline void encoder_backward(EncoderParams& p, const EncoderTrace& trace, const Tensor& grad_embedding) {
  const Tensor gproj = l2_normalize_rows_backward(trace.projected, grad_embedding);
  const Tensor gpool = linear_backward(trace.pooled, p.proj_w, p.proj_b, gproj);
  backward_conv_stack(p, trace, global_avg_pool_backward(trace.acts.back(), gpool), 0, true);
}

// ---- classification head ----

struct LinearHead {
  Tensor weight;  // classes x features
  Tensor bias;    // classes

  static LinearHead init(int classes, int features, std::uint64_t seed) {
    LinearHead h{Tensor({classes, features}), Tensor({classes})};
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(double(features));
    for (auto& v : h.weight.data) v = rng.uniform(-bound, bound);
    return h;
  }

  int classes() const { return weight.dim(0); }
  std::vector<Tensor*> tensors() { return {&weight, &bias}; }
};

inline Tensor linear_head_forward(const LinearHead& h, const Tensor& features) {
  if (features.shape.size() != 2 || features.dim(1) != h.weight.dim(1))
    throw ShapeError("linear head: expected B x " + std::to_string(h.weight.dim(1)) + " features, got " + features.shape_str());
  return linear_forward(features, h.weight, h.bias);
}

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / B.
inline LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const int B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != B) throw ShapeError("cross_entropy: label count differs from batch");
  LossResult r{0.0, Tensor(logits.shape)};
  for (int b = 0; b < B; ++b) {
    if (labels[b] < 0 || labels[b] >= C)
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(C) + ")");
    const double* row = logits.data.data() + std::size_t(b) * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    r.loss += log_z - row[labels[b]];
    double* g = r.grad.data.data() + std::size_t(b) * C;
    for (int c = 0; c < C; ++c) g[c] = (std::exp(row[c] - log_z) - (c == labels[b] ? 1.0 : 0.0)) / B;
  }
  r.loss /= B;
  if (!std::isfinite(r.loss)) throw NumericError("cross_entropy: non-finite loss");
  return r;
}

// ---- optimization ----

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update using each tensor's grad slot.
inline void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, const AdamOptions& opt = {}) {
  if (state.m.empty()) {
    for (auto* t : params) {
      state.m.emplace_back(t->size(), 0.0);
      state.v.emplace_back(t->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = *params[k];
    if (state.m[k].size() != t.size()) throw ShapeError("adam: moment shape mismatch");
    t.ensure_grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      t.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
    }
    check_finite(t, "parameters after Adam step");
  }
}

/// Linear warmup from lr_start to lr_peak, then cosine annealing to lr_end
/// at total_epochs. Epoch may be fractional.
struct LrSchedule {
  int warmup_epochs = 10;
  double lr_start = 1e-8;
  double lr_peak = 1e-5;
  double lr_end = 1e-6;
  int total_epochs = 50;

  static LrSchedule constant(double lr, int epochs) { return {0, lr, lr, lr, epochs}; }

  void validate() const {
    if (!(lr_start > 0 && lr_peak > 0 && lr_end > 0)) throw ConfigError("schedule: learning rates must be positive");
    if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs > total_epochs)
      throw ConfigError("schedule: need 0 <= warmup_epochs <= total_epochs");
  }
};

inline double lr_at(const LrSchedule& s, double epoch) {
  epoch = std::clamp(epoch, 0.0, double(s.total_epochs));
  if (epoch < s.warmup_epochs) return std::lerp(s.lr_start, s.lr_peak, epoch / s.warmup_epochs);
  const int span = s.total_epochs - s.warmup_epochs;
  if (span == 0) return s.lr_peak;
  const double x = (epoch - s.warmup_epochs) / span;
  const double w = 0.5 * (1.0 + std::cos(M_PI * x));
  return std::lerp(s.lr_end, s.lr_peak, w);
}

// ---- binary IO ----

class BinaryWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  void text(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  void f64s(std::span<const double> v) {
    for (double d : v) f64(d);
  }
  const std::string& str() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string buf) : buf_(std::move(buf)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string text() { return bytes(u64()); }
  void f64s(std::span<double> out) {
    for (auto& d : out) d = f64();
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw DataError("checkpoint: unexpected end of file");
  }
  std::uint64_t get(int n) {
    need(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path);
}

inline void write_params(BinaryWriter& w, const EncoderParams& p) {
  w.text(p.arch.describe());
  for (const auto* t : p.tensors()) w.f64s(t->data);
}

/// Reads an architecture block and its weights. When `expected` is given the
/// stored architecture must match it.
inline EncoderParams read_params(BinaryReader& r, const EncoderArch* expected = nullptr) {
  const auto arch = EncoderArch::parse(r.text());
  if (expected && !(arch == *expected)) {
    if (arch.feature_dim != expected->feature_dim)
      throw DataError("checkpoint: feature dim " + std::to_string(arch.feature_dim) + " does not match expected " +
                      std::to_string(expected->feature_dim));
    throw DataError("checkpoint: architecture does not match expected");
  }
  auto p = EncoderParams::init(arch, 0);
  for (auto* t : p.tensors()) r.f64s(t->data);
  return p;
}

}  // namespace imuspec
