// Copyright 2026 The mixtag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mixtag/labels.hpp"
#include "mixtag/nn/layers.hpp"
#include "mixtag/nn/tensor.hpp"
#include "mixtag/rng.hpp"

namespace mixtag::nn {

struct DepthPlan {
  std::size_t block_count = 1;
  std::vector<std::size_t> channels;
};

/// Filters per block: 8, 16, 32, then 64 for every further block.
inline std::vector<std::size_t> channel_plan(std::size_t block_count) {
  std::vector<std::size_t> plan;
  for (std::size_t i = 0; i < block_count; ++i) plan.push_back(i < 3 ? std::size_t{8} << i : 64);
  return plan;
}

/// One block per ceil-halving of the frequency axis down to a single bin,
/// and at least one block.
inline DepthPlan derive_depth(std::size_t freq_bins) {
  std::size_t blocks = 0;
  for (std::size_t f = std::max<std::size_t>(freq_bins, 1); f > 1; f = (f + 1) / 2) ++blocks;
  blocks = std::max<std::size_t>(blocks, 1);
  return {blocks, channel_plan(blocks)};
}

struct ModelConfig {
  std::size_t freq_bins = 128;
  std::size_t blocks = 0;  // 0 derives the depth from freq_bins
  std::size_t classes = kNumClasses;
  double dropout = 0.1;
  bool batch_norm = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t block_count() const {
    return blocks ? blocks : derive_depth(freq_bins).block_count;
  }
  std::vector<std::size_t> channels() const { return channel_plan(block_count()); }

  /// Frequency width left after the conv stack; 1 at the derived depth.
  /// Shallower stacks fold it into the per-frame feature vector.
  std::size_t output_freq() const {
    std::size_t f = freq_bins;
    for (std::size_t i = 0; i < block_count(); ++i) f = (f + 1) / 2;
    return f;
  }
};

template <typename T>
struct ConvBlockParams {
  Tensor<T> kernel;  // (out, in, 3, 3)
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlockParams<T>> blocks;
  Tensor<T> attention_w;   // (D) frame score weights, D = C * output_freq
  Tensor<T> attention_b;   // (1)
  Tensor<T> classifier_w;  // (D, classes)
  Tensor<T> classifier_b;  // (classes)

  /// Trainable tensors in declaration order.
  template <typename F>
  void for_each_trainable(F&& f) {
    for_each_impl(*this, f, false);
  }
  template <typename F>
  void for_each_trainable(F&& f) const {
    for_each_impl(*this, f, false);
  }
  /// Trainable tensors plus batch-norm running statistics.
  template <typename F>
  void for_each_tensor(F&& f) {
    for_each_impl(*this, f, true);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for_each_impl(*this, f, true);
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for_each_trainable([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void for_each_impl(Self& self, F& f, bool with_state) {
    for (std::size_t b = 0; b < self.blocks.size(); ++b) {
      auto& blk = self.blocks[b];
      const std::string p = "block" + std::to_string(b) + ".";
      f(p + "kernel", blk.kernel);
      f(p + "bias", blk.bias);
      f(p + "gamma", blk.gamma);
      f(p + "beta", blk.beta);
      if (with_state) {
        f(p + "running_mean", blk.running_mean);
        f(p + "running_var", blk.running_var);
      }
    }
    f(std::string("attention.w"), self.attention_w);
    f(std::string("attention.b"), self.attention_b);
    f(std::string("classifier.w"), self.classifier_w);
    f(std::string("classifier.b"), self.classifier_b);
  }
};

/// Zero tensors with the shapes of `params` (used for gradients and Adam
/// moments).
template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& params) {
  ModelParams<T> z = params;
  z.for_each_tensor([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
  return z;
}

/// He-normal conv kernels, unit gamma, small Gaussian dense weights.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng) {
  ModelParams<T> p;
  p.config = config;
  const auto channels = config.channels();
  std::size_t in = 1;
  for (std::size_t out : channels) {
    ConvBlockParams<T> b;
    b.kernel = Tensor<T>({out, in, 3, 3});
    const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
    for (auto& w : b.kernel.data) w = static_cast<T>(scale * rng.normal());
    b.bias = Tensor<T>({out});
    b.gamma = Tensor<T>({out}, T(1));
    b.beta = Tensor<T>({out});
    b.running_mean = Tensor<T>({out});
    b.running_var = Tensor<T>({out}, T(1));
    p.blocks.push_back(std::move(b));
    in = out;
  }
  in *= config.output_freq();
  const double dense_scale = 1.0 / std::sqrt(static_cast<double>(in));
  p.attention_w = Tensor<T>({in});
  for (auto& w : p.attention_w.data) w = static_cast<T>(dense_scale * rng.normal());
  p.attention_b = Tensor<T>({1});
  p.classifier_w = Tensor<T>({in, config.classes});
  for (auto& w : p.classifier_w.data) w = static_cast<T>(dense_scale * rng.normal());
  p.classifier_b = Tensor<T>({config.classes});
  return p;
}

template <typename T>
struct BlockCache {
  Tensor<T> input;
  BatchNormCache<T> bn;
  Tensor<T> pooled;  // pooled ELU output, before dropout
  std::vector<std::uint8_t> argmax;
  std::vector<std::uint8_t> mask;
  bool dropped = false;
};

/// conv 3x3 -> batch norm -> ELU -> 1x2 max pool -> dropout (training only).
/// rng supplies the dropout mask and may be null when dropout is inactive.
template <typename T>
Tensor<T> conv_block_forward(Tensor<T> x, const ConvBlockParams<T>& p,
                             const ModelConfig& config, bool training, Rng* rng,
                             BlockCache<T>* cache = nullptr) {
  const Tensor<T> h = conv3x3_forward(x, p.kernel, p.bias);
  BatchNormCache<T> bn;
  if (config.batch_norm)
    batch_norm_stats(h, p.gamma, p.beta, p.running_mean, p.running_var, training, config.bn_eps,
                     bn);
  std::vector<std::uint8_t> argmax;
  Tensor<T> y = bn_elu_pool_forward(h, p.gamma, p.beta, config.batch_norm ? &bn : nullptr,
                                    cache != nullptr, argmax);
  const bool drop = training && config.dropout > 0.0;
  std::vector<std::uint8_t> mask;
  if (cache) cache->pooled = y;
  if (drop) {
    if (!rng) throw Error(ErrorKind::ConfigError, "training-mode dropout needs an rng");
    mask = dropout_mask(y.size(), config.dropout, *rng);
    apply_dropout(y, mask, config.dropout);
  }
  if (cache) {
    cache->input = std::move(x);
    cache->bn = std::move(bn);
    cache->argmax = std::move(argmax);
    cache->mask = std::move(mask);
    cache->dropped = drop;
  }
  return y;
}

/// Accumulates parameter gradients into `grad`; returns the input gradient
/// when need_dx.
template <typename T>
Tensor<T> conv_block_backward(const Tensor<T>& dy, const ConvBlockParams<T>& p,
                              const ModelConfig& config, const BlockCache<T>& cache,
                              ConvBlockParams<T>& grad, bool need_dx) {
  const Tensor<T> dh = bn_elu_pool_backward(
      dy, cache.argmax, cache.pooled, cache.dropped ? cache.mask.data() : nullptr,
      config.dropout, cache.input.dim(3), p.gamma, config.batch_norm ? &cache.bn : nullptr,
      grad.gamma, grad.beta);
  return conv3x3_backward(cache.input, p.kernel, dh, grad.kernel, grad.bias, need_dx);
}

// Attention pooling over time.

template <typename T>
struct AttentionCache {
  Tensor<T> weights;      // (N, T) softmax over time
  Tensor<T> frame_probs;  // (N, T, K) per-frame sigmoids
};

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// out[n][c] = sum_t softmax_t(score[n][t]) * sigmoid(logit[n][t][c]).
/// scores: (N, T, 1); logits: (N, T, K).
template <typename T>
Tensor<T> attention_pool(const Tensor<T>& scores, const Tensor<T>& logits,
                         AttentionCache<T>* cache = nullptr) {
  if (logits.rank() != 3 || scores.rank() != 3 || scores.dim(2) != 1 ||
      scores.dim(0) != logits.dim(0) || scores.dim(1) != logits.dim(1))
    throw Error(ErrorKind::ShapeError, "attention_pool: scores " + shape_string(scores.shape) +
                                           " vs logits " + shape_string(logits.shape));
  const std::size_t n = logits.dim(0), time = logits.dim(1), k = logits.dim(2);
  if (time == 0) throw Error(ErrorKind::EmptyInput, "attention over zero frames");
  Tensor<T> weights({n, time});
  Tensor<T> frame_probs({n, time, k});
  Tensor<T> out({n, k});
  for (std::size_t s = 0; s < n; ++s) {
    const T* sc = scores.ptr() + s * time;
    const T mx = *std::max_element(sc, sc + time);
    double z = 0.0;
    for (std::size_t t = 0; t < time; ++t) z += std::exp(static_cast<double>(sc[t] - mx));
    for (std::size_t t = 0; t < time; ++t) {
      const T a = static_cast<T>(std::exp(static_cast<double>(sc[t] - mx)) / z);
      weights[s * time + t] = a;
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t i = (s * time + t) * k + c;
        frame_probs[i] = sigmoid(logits[i]);
        out[s * k + c] += a * frame_probs[i];
      }
    }
  }
  if (cache) {
    cache->weights = std::move(weights);
    cache->frame_probs = std::move(frame_probs);
  }
  return out;
}

/// Returns (dscores, dlogits) given dL/dout.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_pool_backward(const Tensor<T>& dout,
                                                        const Tensor<T>& out,
                                                        const AttentionCache<T>& cache) {
  const std::size_t n = cache.frame_probs.dim(0), time = cache.frame_probs.dim(1),
                    k = cache.frame_probs.dim(2);
  Tensor<T> dscores({n, time, 1});
  Tensor<T> dlogits({n, time, k});
  for (std::size_t s = 0; s < n; ++s) {
    T base = 0;
    for (std::size_t c = 0; c < k; ++c) base += dout[s * k + c] * out[s * k + c];
    for (std::size_t t = 0; t < time; ++t) {
      const T a = cache.weights[s * time + t];
      T dot = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t i = (s * time + t) * k + c;
        const T sg = cache.frame_probs[i];
        dot += dout[s * k + c] * sg;
        dlogits[i] = a * dout[s * k + c] * sg * (T(1) - sg);
      }
      dscores[s * time + t] = a * (dot - base);
    }
  }
  return {std::move(dscores), std::move(dlogits)};
}

// Per-frame dense projection: (rows, C) x (C, K) + b.

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t in = w.dim(0), out = w.size() / in;
  if (x.size() % in != 0 || b.size() != out)
    throw Error(ErrorKind::ShapeError, "dense: input " + shape_string(x.shape) +
                                           " incompatible with weights " + shape_string(w.shape));
  const std::size_t rows = x.size() / in;
  Tensor<T> y({rows, out});
  ConstMatMap<T> xm(x.ptr(), rows, in);
  ConstMatMap<T> wm(w.ptr(), in, out);
  MatMap<T> ym(y.ptr(), rows, out);
  ym.noalias() = xm * wm;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < out; ++c) ym(r, c) += b[c];
  return y;
}

/// Accumulates dw, db; returns dx with the shape of x.
template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                         Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t in = w.dim(0), out = w.size() / in, rows = x.size() / in;
  ConstMatMap<T> xm(x.ptr(), rows, in);
  ConstMatMap<T> wm(w.ptr(), in, out);
  ConstMatMap<T> gm(dy.ptr(), rows, out);
  MatMap<T> dwm(dw.ptr(), in, out);
  dwm.noalias() += xm.transpose() * gm;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < out; ++c) db[c] += gm(r, c);
  Tensor<T> dx(x.shape);
  MatMap<T> dxm(dx.ptr(), rows, in);
  dxm.noalias() = gm * wm.transpose();
  return dx;
}

template <typename T>
struct ForwardCache {
  std::vector<BlockCache<T>> blocks;
  std::vector<std::size_t> stack_shape;  // last block output (N, C, T, F)
  Tensor<T> frames;                      // (N, T, C*F), feature index c*F + f
  Tensor<T> scores;                      // (N, T, 1)
  Tensor<T> logits;                      // (N, T, K)
  AttentionCache<T> attention;
  Tensor<T> probs;                       // (N, K)
};

/// x: (N, 1, T, F) with F == config.freq_bins. Returns (N, K) tag
/// probabilities. Pass a cache to enable model_backward.
template <typename T>
Tensor<T> model_forward(const ModelParams<T>& params, const Tensor<T>& x, bool training,
                        Rng* rng, ForwardCache<T>* cache = nullptr) {
  const auto& cfg = params.config;
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(3) != cfg.freq_bins || x.dim(0) == 0)
    throw Error(ErrorKind::ShapeError, "model input must be (N, 1, T, " +
                                           std::to_string(cfg.freq_bins) + "), got " +
                                           shape_string(x.shape));
  if (cache) cache->blocks.assign(params.blocks.size(), {});
  Tensor<T> h = x;
  for (std::size_t b = 0; b < params.blocks.size(); ++b)
    h = conv_block_forward(std::move(h), params.blocks[b], cfg, training, rng,
                           cache ? &cache->blocks[b] : nullptr);

  const std::size_t n = h.dim(0), ch = h.dim(1), time = h.dim(2), freq = h.dim(3);
  const std::size_t width = ch * freq;
  Tensor<T> frames({n, time, width});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < time; ++t)
        std::copy_n(h.ptr() + ((s * ch + c) * time + t) * freq, freq,
                    frames.ptr() + (s * time + t) * width + c * freq);

  Tensor<T> scores = dense_forward(frames, params.attention_w, params.attention_b);
  scores.shape = {n, time, 1};
  Tensor<T> logits = dense_forward(frames, params.classifier_w, params.classifier_b);
  logits.shape = {n, time, cfg.classes};
  AttentionCache<T> att;
  Tensor<T> probs = attention_pool(scores, logits, cache ? &att : nullptr);
  if (!probs.all_finite())
    throw Error(ErrorKind::NonFiniteLoss, "non-finite model output");
  if (cache) {
    cache->stack_shape = h.shape;
    cache->frames = std::move(frames);
    cache->scores = std::move(scores);
    cache->logits = std::move(logits);
    cache->attention = std::move(att);
    cache->probs = probs;
  }
  return probs;
}

/// Gradients of a scalar loss for every trainable tensor, given dL/dprobs.
template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const ForwardCache<T>& cache,
                              const Tensor<T>& dprobs) {
  require_shape(dprobs.shape, cache.probs.shape, "model_backward dprobs");
  ModelParams<T> grad = zeros_like(params);
  auto [dscores, dlogits] = attention_pool_backward(dprobs, cache.probs, cache.attention);

  Tensor<T> dframes = dense_backward(cache.frames, params.classifier_w, dlogits,
                                     grad.classifier_w, grad.classifier_b);
  Tensor<T> dframes_att = dense_backward(cache.frames, params.attention_w, dscores,
                                         grad.attention_w, grad.attention_b);
  for (std::size_t i = 0; i < dframes.size(); ++i) dframes[i] += dframes_att[i];

  const auto& sh = cache.stack_shape;
  const std::size_t n = sh[0], ch = sh[1], time = sh[2], freq = sh[3];
  const std::size_t width = ch * freq;
  Tensor<T> dh(sh);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t t = 0; t < time; ++t)
        std::copy_n(dframes.ptr() + (s * time + t) * width + c * freq, freq,
                    dh.ptr() + ((s * ch + c) * time + t) * freq);
  for (std::size_t b = params.blocks.size(); b-- > 0;)
    dh = conv_block_backward(std::move(dh), params.blocks[b], params.config, cache.blocks[b],
                             grad.blocks[b], b > 0);
  return grad;
}

/// Exponential moving update of batch-norm running statistics from a
/// training-mode forward pass (unbiased batch variance).
template <typename T>
void update_running_stats(ModelParams<T>& params, const ForwardCache<T>& cache) {
  if (!params.config.batch_norm) return;
  const double mom = params.config.bn_momentum;
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const auto& bn = cache.blocks[b].bn;
    if (!bn.training) continue;
    const auto& in = cache.blocks[b].input.shape;
    const double m = static_cast<double>(in[0] * in[2] * in[3]);
    auto& blk = params.blocks[b];
    for (std::size_t c = 0; c < blk.running_mean.size(); ++c) {
      const double unbiased = m > 1 ? bn.batch_var[c] * m / (m - 1) : bn.batch_var[c];
      blk.running_mean[c] =
          static_cast<T>((1 - mom) * blk.running_mean[c] + mom * bn.batch_mean[c]);
      blk.running_var[c] = static_cast<T>((1 - mom) * blk.running_var[c] + mom * unbiased);
    }
  }
}

template <typename U, typename T>
ModelParams<U> cast_params(const ModelParams<T>& p) {
  ModelParams<U> out;
  out.config = p.config;
  for (const auto& b : p.blocks)
    out.blocks.push_back({b.kernel.template cast<U>(), b.bias.template cast<U>(),
                          b.gamma.template cast<U>(), b.beta.template cast<U>(),
                          b.running_mean.template cast<U>(), b.running_var.template cast<U>()});
  out.attention_w = p.attention_w.template cast<U>();
  out.attention_b = p.attention_b.template cast<U>();
  out.classifier_w = p.classifier_w.template cast<U>();
  out.classifier_b = p.classifier_b.template cast<U>();
  return out;
}

}  // namespace mixtag::nn
