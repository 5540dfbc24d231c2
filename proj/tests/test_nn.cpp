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

#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "mixtag/nn/checkpoint.hpp"
#include "mixtag/nn/grad_check.hpp"
#include "mixtag/nn/loss.hpp"
#include "test_util.hpp"

using namespace mixtag;
using namespace mixtag::nn;
using Catch::Approx;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(scale * rng.normal());
  return t;
}

/// Direct 3x3 "same" convolution, zero padded.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& k,
                          const Tensor<double>& b) {
  const std::size_t n = x.dim(0), cin = x.dim(1), time = x.dim(2), freq = x.dim(3);
  const std::size_t cout = k.dim(0);
  Tensor<double> y({n, cout, time, freq});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < time; ++t)
        for (std::size_t f = 0; f < freq; ++f) {
          double acc = b[o];
          for (std::size_t c = 0; c < cin; ++c)
            for (int dt = -1; dt <= 1; ++dt)
              for (int df = -1; df <= 1; ++df) {
                const long tt = static_cast<long>(t) + dt, ff = static_cast<long>(f) + df;
                if (tt < 0 || ff < 0 || tt >= static_cast<long>(time) ||
                    ff >= static_cast<long>(freq))
                  continue;
                acc += k[((o * cin + c) * 3 + static_cast<std::size_t>(dt + 1)) * 3 +
                         static_cast<std::size_t>(df + 1)] *
                       x.at(s, c, static_cast<std::size_t>(tt), static_cast<std::size_t>(ff));
              }
          y.at(s, o, t, f) = acc;
        }
  return y;
}

ModelConfig small_config(std::size_t freq, std::size_t blocks, double dropout = 0.0) {
  ModelConfig cfg;
  cfg.freq_bins = freq;
  cfg.blocks = blocks;
  cfg.dropout = dropout;
  return cfg;
}

}  // namespace

TEST_CASE("derive_depth halving rule", "[nn][depth]") {
  const auto d128 = derive_depth(128);
  CHECK(d128.block_count == 7);
  CHECK(d128.channels == std::vector<std::size_t>{8, 16, 32, 64, 64, 64, 64});
  const auto d64 = derive_depth(64);
  CHECK(d64.block_count == 6);
  CHECK(d64.channels == std::vector<std::size_t>{8, 16, 32, 64, 64, 64});
  const auto d1 = derive_depth(1);
  CHECK(d1.block_count == 1);
  CHECK(d1.channels == std::vector<std::size_t>{8});
  CHECK(derive_depth(129).block_count == 8);
  CHECK(derive_depth(3).block_count == 2);
  CHECK(derive_depth(300).channels.back() == 64);
}

TEST_CASE("conv stack keeps time and halves frequency", "[nn][shape]") {
  Rng rng(1);
  ModelConfig cfg;  // 128 bins, depth derived
  const auto params = init_params<float>(cfg, rng);
  REQUIRE(params.blocks.size() == 7);
  Tensor<float> h = random_tensor<float>({2, 1, 124, 128}, rng);
  std::size_t freq = 128;
  for (std::size_t b = 0; b < 7; ++b) {
    h = conv_block_forward(h, params.blocks[b], cfg, true, &rng);
    freq = (freq + 1) / 2;
    REQUIRE(h.dim(2) == 124);
    REQUIRE(h.dim(3) == freq);
    REQUIRE(h.all_finite());
  }
  CHECK(h.shape == std::vector<std::size_t>{2, 64, 124, 1});

  Tensor<float> wrong = random_tensor<float>({2, 3, 10, 8}, rng);
  CHECK_THROWS_AS(conv_block_forward(wrong, params.blocks[0], cfg, false, &rng), Error);
}

TEST_CASE("elu definition", "[nn][elu]") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(2.5) == 2.5);
  CHECK(elu(-1e3) == Approx(-1.0).margin(1e-15));
  CHECK(elu(-std::numeric_limits<double>::infinity()) == -1.0);
  CHECK(elu(-1.0) == Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
}

TEST_CASE("convolution matches a direct oracle", "[nn][conv]") {
  Rng rng(2);
  const auto x = random_tensor<double>({2, 3, 5, 7}, rng);
  const auto k = random_tensor<double>({4, 3, 3, 3}, rng);
  const auto b = random_tensor<double>({4}, rng);
  const auto y = conv3x3_forward(x, k, b);
  const auto oracle = naive_conv(x, k, b);
  REQUIRE(y.shape == oracle.shape);
  for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == Approx(oracle[i]).margin(1e-12));

  // Wide inputs are unfolded in several bands of time rows.
  const auto wide = random_tensor<double>({2, 2, 9, 300}, rng);
  const auto wk = random_tensor<double>({3, 2, 3, 3}, rng);
  const Tensor<double> wb({3});
  REQUIRE(conv_band_rows(300) < 9);
  const auto wy = conv3x3_forward(wide, wk, wb);
  const auto wo = naive_conv(wide, wk, wb);
  for (std::size_t i = 0; i < wy.size(); ++i) REQUIRE(wy[i] == Approx(wo[i]).margin(1e-12));

  // Backward is the adjoint: <dy, conv(x)> = <dx, x> = <dk, k> without bias.
  const auto g = random_tensor<double>(wy.shape, rng);
  Tensor<double> dk(wk.shape), db({3});
  const auto dx = conv3x3_backward(wide, wk, g, dk, db);
  double lhs = 0, via_x = 0, via_k = 0, bias_sum = 0;
  for (std::size_t i = 0; i < wy.size(); ++i) lhs += g[i] * wy[i];
  for (std::size_t i = 0; i < wide.size(); ++i) via_x += dx[i] * wide[i];
  for (std::size_t i = 0; i < wk.size(); ++i) via_k += dk[i] * wk[i];
  for (std::size_t i = 0; i < g.size(); ++i) bias_sum += g[i];
  CHECK(via_x == Approx(lhs).epsilon(1e-12));
  CHECK(via_k == Approx(lhs).epsilon(1e-12));
  CHECK(db[0] + db[1] + db[2] == Approx(bias_sum).epsilon(1e-12));

  // A centered identity kernel reproduces the input.
  Tensor<double> kernel({1, 1, 3, 3});
  kernel[4] = 1.0;
  const Tensor<double> bias({1});
  const auto single = random_tensor<double>({1, 1, 4, 6}, rng);
  CHECK(conv3x3_forward(single, kernel, bias) == single);
}

TEST_CASE("max pool over frequency in ceil mode", "[nn][pool]") {
  Tensor<double> x({1, 1, 2, 5});
  const double vals[] = {1, 3, -2, -5, 7, 0, 0, 4, 2, -1};
  for (std::size_t i = 0; i < 10; ++i) x[i] = vals[i];
  std::vector<std::uint8_t> argmax;
  const auto y = max_pool_freq_forward(x, argmax);
  REQUIRE(y.shape == std::vector<std::size_t>{1, 1, 2, 3});
  const double expect[] = {3, -2, 7, 0, 4, -1};
  for (std::size_t i = 0; i < 6; ++i) CHECK(y[i] == expect[i]);

  Tensor<double> dy(y.shape, 1.0);
  const auto dx = max_pool_freq_backward(dy, argmax, 5);
  const double dexpect[] = {0, 1, 1, 0, 1, 1, 0, 1, 0, 1};
  for (std::size_t i = 0; i < 10; ++i) CHECK(dx[i] == dexpect[i]);
}

TEST_CASE("conv block matches the composition of its layers", "[nn][block]") {
  Rng rng(31);
  for (std::size_t freq : {6u, 7u}) {
    for (const bool use_bn : {true, false}) {
      for (const bool training : {true, false}) {
        ModelConfig cfg = small_config(freq, 1, training ? 0.3 : 0.0);
        cfg.batch_norm = use_bn;
        ConvBlockParams<double> p;
        p.kernel = random_tensor<double>({2, 1, 3, 3}, rng);
        p.bias = random_tensor<double>({2}, rng);
        p.gamma = random_tensor<double>({2}, rng);
        p.beta = random_tensor<double>({2}, rng);
        p.running_mean = random_tensor<double>({2}, rng);
        p.running_var = Tensor<double>({2}, 0.7);
        const auto x = random_tensor<double>({3, 1, 4, freq}, rng);
        Rng drop_a(5), drop_b(5);

        // Reference: the separate layer functions in order.
        Tensor<double> h = conv3x3_forward(x, p.kernel, p.bias);
        BatchNormCache<double> bn;
        if (use_bn)
          h = batch_norm_forward(h, p.gamma, p.beta, p.running_mean, p.running_var, training,
                                 cfg.bn_eps, bn);
        elu_inplace(h);
        std::vector<std::uint8_t> argmax;
        Tensor<double> expect = max_pool_freq_forward(h, argmax);
        std::vector<std::uint8_t> mask;
        if (training) {
          mask = dropout_mask(expect.size(), cfg.dropout, drop_a);
          apply_dropout(expect, mask, cfg.dropout);
        }

        BlockCache<double> cache;
        const auto y = conv_block_forward(x, p, cfg, training, &drop_b, &cache);
        REQUIRE(y.shape == expect.shape);
        for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == Approx(expect[i]).margin(1e-12));

        const auto dy = random_tensor<double>(y.shape, rng);
        Tensor<double> g = dy;
        if (training) apply_dropout(g, mask, cfg.dropout);
        Tensor<double> dh = max_pool_freq_backward(g, argmax, freq);
        elu_backward_inplace(dh, h);
        Tensor<double> ref_dgamma({2}), ref_dbeta({2}), ref_dk(p.kernel.shape), ref_db({2});
        if (use_bn) dh = batch_norm_backward(dh, p.gamma, bn, ref_dgamma, ref_dbeta);
        const auto ref_dx = conv3x3_backward(x, p.kernel, dh, ref_dk, ref_db);

        ConvBlockParams<double> grad;
        grad.kernel = Tensor<double>(p.kernel.shape);
        grad.bias = Tensor<double>({2});
        grad.gamma = Tensor<double>({2});
        grad.beta = Tensor<double>({2});
        const auto dx = conv_block_backward(dy, p, cfg, cache, grad, true);
        const auto close = [](const Tensor<double>& a, const Tensor<double>& b) {
          REQUIRE(a.shape == b.shape);
          for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == Approx(b[i]).margin(1e-12));
        };
        close(dx, ref_dx);
        close(grad.kernel, ref_dk);
        close(grad.bias, ref_db);
        close(grad.gamma, ref_dgamma);
        close(grad.beta, ref_dbeta);
      }
    }
  }
}

TEST_CASE("batch norm training statistics", "[nn][batchnorm]") {
  Rng rng(3);
  Tensor<double> x = random_tensor<double>({4, 3, 6, 5}, rng, 3.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 7.0;
  const Tensor<double> gamma({3}, 1.0), beta({3}), rm({3}), rv({3}, 1.0);
  BatchNormCache<double> cache;
  const auto y = batch_norm_forward(x, gamma, beta, rm, rv, true, 1e-5, cache);
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, m = 0;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t f = 0; f < 5; ++f) {
          sum += y.at(s, c, t, f);
          sq += y.at(s, c, t, f) * y.at(s, c, t, f);
          ++m;
        }
    const double mean = sum / m;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(sq / m - mean * mean - 1.0) < 1e-4);
  }

  // Inference mode uses the running statistics.
  const Tensor<double> rm2({3}, 7.0), rv2({3}, 4.0);
  const auto z = batch_norm_forward(x, gamma, beta, rm2, rv2, false, 1e-5, cache);
  for (std::size_t i = 0; i < 10; ++i)
    CHECK(z[i] == Approx((x[i] - 7.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));

  // Running statistics use momentum 0.1 and the unbiased batch variance.
  auto params = init_params<double>(small_config(8, 1), rng);
  const auto input = random_tensor<double>({3, 1, 4, 8}, rng, 2.0);
  ForwardCache<double> fc;
  model_forward(params, input, true, &rng, &fc);
  const auto before = params.blocks[0].running_var;
  update_running_stats(params, fc);
  const auto& bn = fc.blocks[0].bn;
  const double m = 3.0 * 4.0 * 8.0;
  for (std::size_t c = 0; c < before.size(); ++c) {
    CHECK(params.blocks[0].running_mean[c] == Approx(0.1 * bn.batch_mean[c]).margin(1e-14));
    CHECK(params.blocks[0].running_var[c] ==
          Approx(0.9 * before[c] + 0.1 * bn.batch_var[c] * m / (m - 1)).epsilon(1e-12));
    CHECK(params.blocks[0].running_var[c] >= 0.0);
  }
}

TEST_CASE("dropout scaling", "[nn][dropout]") {
  Rng rng(4);
  const Tensor<double> x = random_tensor<double>({1, 1, 1, 64}, rng);
  Tensor<double> acc(x.shape);
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) {
    Tensor<double> d = x;
    apply_dropout(d, dropout_mask(d.size(), 0.1, rng), 0.1);
    for (std::size_t k = 0; k < d.size(); ++k) acc[k] += d[k];
  }
  for (std::size_t k = 0; k < x.size(); ++k)
    CHECK(acc[k] / trials == Approx(x[k]).margin(0.02 * std::max(std::abs(x[k]), 0.5)));

  // Inference mode forward passes are deterministic and ignore the rng.
  auto params = init_params<double>(small_config(8, 2, 0.5), rng);
  const auto input = random_tensor<double>({2, 1, 4, 8}, rng);
  Rng r1(1), r2(999);
  CHECK(model_forward(params, input, false, &r1) == model_forward(params, input, false, &r2));
}

TEST_CASE("attention pooling", "[nn][attention]") {
  Rng rng(5);
  const std::size_t n = 3, time = 6, k = 7;
  const auto logits = random_tensor<double>({n, time, k}, rng, 2.0);

  Tensor<double> flat({n, time, 1}, 0.4);
  const auto avg = attention_pool(flat, logits);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < k; ++c) {
      double mean = 0;
      for (std::size_t t = 0; t < time; ++t) mean += 1.0 / (1.0 + std::exp(-logits[(s * time + t) * k + c]));
      REQUIRE(avg[s * k + c] == Approx(mean / time).margin(1e-12));
    }

  Tensor<double> spike({n, time, 1}, 1e-3);
  for (std::size_t s = 0; s < n; ++s) spike[s * time + 2] = 1e6;
  const auto peaked = attention_pool(spike, logits);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t c = 0; c < k; ++c)
      REQUIRE(peaked[s * k + c] ==
              Approx(1.0 / (1.0 + std::exp(-logits[(s * time + 2) * k + c]))).margin(1e-6));

  const auto scores = random_tensor<double>({n, time, 1}, rng, 3.0);
  AttentionCache<double> cache;
  const auto out = attention_pool(scores, logits, &cache);
  for (std::size_t s = 0; s < n; ++s) {
    double zmax = -1e300, z = 0, wsum = 0;
    for (std::size_t t = 0; t < time; ++t) zmax = std::max(zmax, scores[s * time + t]);
    for (std::size_t t = 0; t < time; ++t) z += std::exp(scores[s * time + t] - zmax);
    for (std::size_t t = 0; t < time; ++t) wsum += cache.weights[s * time + t];
    REQUIRE(wsum == Approx(1.0).margin(1e-6));
    for (std::size_t c = 0; c < k; ++c) {
      double oracle = 0;
      for (std::size_t t = 0; t < time; ++t)
        oracle += std::exp(scores[s * time + t] - zmax) / z /
                  (1.0 + std::exp(-logits[(s * time + t) * k + c]));
      REQUIRE(out[s * k + c] == Approx(oracle).margin(1e-6));
      REQUIRE(out[s * k + c] > 0.0);
      REQUIRE(out[s * k + c] < 1.0);
    }
  }

  try {
    attention_pool(Tensor<double>({1, 0, 1}), Tensor<double>({1, 0, 7}));
    FAIL("expected EmptyInput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyInput);
  }
}

TEST_CASE("binary cross-entropy", "[nn][loss]") {
  Tensor<double> half({1, 1}, 0.5);
  const double one[1] = {1.0};
  CHECK(bce_loss(half, one).loss == Approx(std::log(2.0)).epsilon(1e-12));

  Tensor<double> exact({1, 2});
  exact[0] = 1.0;
  exact[1] = 0.0;
  const double hard[2] = {1.0, 0.0};
  const auto edge = bce_loss(exact, hard);
  CHECK(edge.loss <= 1e-6);
  CHECK(edge.grad[0] == 0.0);
  CHECK(edge.grad[1] == 0.0);

  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> p({3, 7});
    std::vector<double> y(21);
    for (auto& v : p.data) v = rng.uniform(0.05, 0.95);
    for (auto& v : y) v = rng.uniform();  // soft targets
    const auto r = bce_loss(p, y);
    REQUIRE(r.loss >= 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-6;
      Tensor<double> up = p, down = p;
      up[i] += h;
      down[i] -= h;
      const double numeric = (bce_loss(up, y).loss - bce_loss(down, y).loss) / (2 * h);
      REQUIRE(std::abs(numeric - r.grad[i]) / std::max(std::abs(numeric), 1e-12) < 1e-6);
    }
  }

  Tensor<double> mismatch({2, 7}, 0.5);
  const std::vector<double> short_target(7, 0.0);
  CHECK_THROWS_AS(bce_loss(mismatch, short_target), Error);
}

TEST_CASE("adam updates", "[nn][adam]") {
  Rng rng(7);
  auto params = init_params<double>(small_config(8, 1), rng);
  auto grads = zeros_like(params);
  grads.for_each_trainable([&](const std::string&, Tensor<double>& g) {
    for (auto& v : g.data) v = rng.normal();
  });
  const auto before = params;
  auto state = make_adam_state(params);
  adam_step(params, grads, state);
  CHECK(state.step == 1);
  std::vector<const Tensor<double>*> p_after, p_before, g_list;
  params.for_each_trainable([&](const std::string&, const Tensor<double>& t) { p_after.push_back(&t); });
  before.for_each_trainable([&](const std::string&, const Tensor<double>& t) { p_before.push_back(&t); });
  grads.for_each_trainable([&](const std::string&, const Tensor<double>& t) { g_list.push_back(&t); });
  for (std::size_t k = 0; k < p_after.size(); ++k)
    for (std::size_t i = 0; i < p_after[k]->size(); ++i) {
      const double delta = (*p_after[k])[i] - (*p_before[k])[i];
      const double g = (*g_list[k])[i];
      REQUIRE(std::abs(delta + 1e-3 * (g > 0 ? 1.0 : -1.0)) < 1e-6);
    }

  // Zero gradients leave parameters unchanged.
  auto frozen = params;
  auto fresh = make_adam_state(frozen);
  adam_step(frozen, zeros_like(frozen), fresh);
  CHECK(frozen.blocks[0].kernel == params.blocks[0].kernel);
  CHECK(frozen.classifier_w == params.classifier_w);

  // Non-finite gradients are rejected before anything changes.
  auto bad = grads;
  bad.classifier_b[0] = std::numeric_limits<double>::quiet_NaN();
  const auto snapshot = params;
  const auto step = state.step;
  try {
    adam_step(params, bad, state);
    FAIL("expected NonFiniteGradient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteGradient);
  }
  CHECK(state.step == step);
  CHECK(params.classifier_w == snapshot.classifier_w);
}

namespace {

TrainState<float> run_steps(std::uint64_t seed, int steps, std::vector<double>* losses) {
  Rng rng(seed);
  ModelConfig cfg = small_config(16, 2, 0.1);
  TrainState<float> st{init_params<float>(cfg, rng), {}};
  st.adam = make_adam_state(st.params);
  const auto x = random_tensor<float>({8, 1, 10, 16}, rng);
  std::vector<double> y(8 * 7);
  for (auto& v : y) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Rng drop(derive_seed(seed, stream::kDropout));
  for (int s = 0; s < steps; ++s) {
    ForwardCache<float> cache;
    const auto probs = model_forward(st.params, x, true, &drop, &cache);
    const auto loss = bce_loss(probs, y);
    if (losses) losses->push_back(loss.loss);
    const auto grads = model_backward(st.params, cache, loss.grad);
    update_running_stats(st.params, cache);
    adam_step(st.params, grads, st.adam);
  }
  return st;
}

}  // namespace

TEST_CASE("training reduces loss and is deterministic", "[nn][train]") {
  std::vector<double> losses;
  const auto a = run_steps(42, 50, &losses);
  for (double l : losses) REQUIRE(std::isfinite(l));
  const double head = (losses[0] + losses[1] + losses[2]) / 3.0;
  const double tail = (losses[47] + losses[48] + losses[49]) / 3.0;
  CHECK(tail < head);
  CHECK(losses.back() < losses.front());

  const auto b = run_steps(42, 50, nullptr);
  CHECK(a.adam.step == b.adam.step);
  std::vector<const Tensor<float>*> ta, tb;
  a.params.for_each_tensor([&](const std::string&, const Tensor<float>& t) { ta.push_back(&t); });
  b.params.for_each_tensor([&](const std::string&, const Tensor<float>& t) { tb.push_back(&t); });
  for (std::size_t k = 0; k < ta.size(); ++k) {
    INFO("tensor " << k);
    CHECK(*ta[k] == *tb[k]);
  }
  a.adam.m.for_each_trainable([&](const std::string& name, const Tensor<float>& t) {
    b.adam.m.for_each_trainable([&](const std::string& other, const Tensor<float>& u) {
      if (name == other) {
        INFO(name);
        CHECK(t == u);
      }
    });
  });
}

TEST_CASE("model output shape and range", "[nn][model]") {
  Rng rng(8);
  ModelConfig cfg = small_config(128, 2);
  const auto params = init_params<float>(cfg, rng);
  const auto x = random_tensor<float>({44, 1, 124, 128}, rng);
  const auto probs = model_forward(params, x, false, nullptr);
  REQUIRE(probs.shape == std::vector<std::size_t>{44, 7});
  for (float p : probs.data) {
    REQUIRE(p > 0.0f);
    REQUIRE(p < 1.0f);
  }
  const auto wrong = random_tensor<float>({2, 1, 124, 64}, rng);
  CHECK_THROWS_AS(model_forward(params, wrong, false, nullptr), Error);
}

TEST_CASE("finite-difference gradient checks", "[nn][gradcheck]") {
  GradCheckConfig linear;
  linear.kind = GradCheckConfig::Kind::Linear;
  const auto lin = grad_check(linear, 1);
  INFO("linear " << lin.max_rel_error);
  CHECK(lin.passed(1e-8));

  for (std::uint64_t seed : {1u, 2u, 3u}) {
    GradCheckConfig full;
    const auto rep = grad_check(full, seed);
    INFO("full seed " << seed << " " << rep.max_rel_error);
    CHECK(rep.groups.size() == 2 * 4 + 4);
    CHECK(rep.passed(1e-4));
  }

  GradCheckConfig plain;
  plain.batch_norm = false;
  CHECK(grad_check(plain, 4).passed(1e-4));

  GradCheckConfig dropped;
  dropped.dropout = true;
  const auto rep = grad_check(dropped, 5);
  INFO("dropout " << rep.max_rel_error);
  CHECK(rep.passed(1e-4));

  GradCheckConfig odd;
  odd.freq = 5;
  odd.time = 3;
  odd.blocks = 3;
  CHECK(grad_check(odd, 6).passed(1e-4));

  CHECK(group_relative_error({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(group_relative_error({1.0, 2.0}, {1.0, 2.2}) == Approx(0.2 / 2.2));
}

TEST_CASE("gradient check differences away from pooling ties", "[nn][gradcheck]") {
  // loss = max(a, b) with a just above b: the slope in a is 1, but a central
  // step of 1e-5 in either entry crosses the tie.
  Tensor<double> v({2});
  v[0] = 1.0 + 2e-6;
  v[1] = 1.0;
  Tensor<double> g({2});
  g[0] = 1.0;
  auto probe = [&] {
    mixtag::nn::detail::Probe p;
    p.loss = std::max(v[0], v[1]) + 0.5 * v[0] * v[0];
    p.pattern = {static_cast<std::uint8_t>(v[0] >= v[1] ? 0 : 1)};
    return p;
  };
  g[0] += v[0];
  const auto rep = mixtag::nn::detail::compare_gradients({{"v", &v}}, {&g}, probe, 1e-5);
  CHECK(rep.one_sided == 2);
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("checkpoint round trip", "[nn][checkpoint]") {
  Rng rng(9);
  Checkpoint ck;
  ck.params = init_params<float>(small_config(16, 2), rng);
  ck.params.blocks[1].running_var[3] = 2.5f;
  auto adam = make_adam_state(ck.params);
  auto grads = zeros_like(ck.params);
  grads.for_each_trainable([&](const std::string&, Tensor<float>& g) {
    for (auto& v : g.data) v = static_cast<float>(rng.normal());
  });
  adam_step(ck.params, grads, adam);
  ck.adam = adam;
  FeatureStats stats;
  stats.mean.assign(16, 0.25);
  stats.std.assign(16, 1.5);
  ck.stats = stats;

  testing::TempDir dir("ckpt");
  save_checkpoint(dir.file("m.mtmd"), ck);
  const auto back = load_checkpoint(dir.file("m.mtmd"));
  CHECK(back.params.config.block_count() == 2);
  CHECK(back.params.config.freq_bins == 16);
  std::vector<const Tensor<float>*> a, b;
  ck.params.for_each_tensor([&](const std::string&, const Tensor<float>& t) { a.push_back(&t); });
  back.params.for_each_tensor([&](const std::string&, const Tensor<float>& t) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(*a[k] == *b[k]);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step == 1);
  CHECK(back.adam->v.classifier_w == adam.v.classifier_w);
  REQUIRE(back.stats.has_value());
  CHECK(back.stats->mean == stats.mean);
  CHECK(back.stats->std == stats.std);

  const auto bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "MTMD");
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(corrupt), Error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);

  Checkpoint bare;
  bare.params = ck.params;
  const auto plain = decode_checkpoint(encode_checkpoint(bare));
  CHECK(!plain.adam.has_value());
  CHECK(!plain.stats.has_value());
}
