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
#include <functional>
#include <string>
#include <vector>

#include "mixtag/nn/loss.hpp"
#include "mixtag/nn/model.hpp"

namespace mixtag::nn {

struct GradCheckConfig {
  enum class Kind { Full, Linear };
  Kind kind = Kind::Full;
  std::size_t batch = 3;
  std::size_t time = 8;
  std::size_t freq = 8;
  std::size_t blocks = 2;
  bool batch_norm = true;
  /// With dropout on, one mask is drawn and reused for every evaluation.
  bool dropout = false;
  double step = 1e-5;
};

struct GradCheckReport {
  struct Group {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
    std::size_t one_sided = 0;  // entries differenced away from a pooling tie
  };
  std::vector<Group> groups;
  double max_rel_error = 0.0;
  std::size_t one_sided = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Error of a gradient group: max |analytic - numeric| over the larger of the
/// two max-norms (floored at 1e-6 so all-zero groups compare absolutely).
inline double group_relative_error(const std::vector<double>& analytic,
                                   const std::vector<double>& numeric) {
  double diff = 0.0, scale = 1e-6;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

namespace detail {

/// Loss value plus the max-pool selection pattern that produced it.
struct Probe {
  double loss = 0.0;
  std::vector<std::uint8_t> pattern;
};

/// Central differences of `probe` against every entry of every tensor in
/// `tensors`, compared with `analytic`. Max pooling is not differentiable
/// where a pair ties: when a perturbation changes the pooling pattern, the
/// second-order one-sided difference from the unchanged side is used.
inline GradCheckReport compare_gradients(
    const std::vector<std::pair<std::string, Tensor<double>*>>& tensors,
    const std::vector<const Tensor<double>*>& analytic, const std::function<Probe()>& probe,
    double step) {
  GradCheckReport report;
  const Probe base = probe();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& [name, t] = tensors[k];
    std::vector<double> a(analytic[k]->data.begin(), analytic[k]->data.end());
    std::vector<double> num(t->size());
    std::size_t one_sided = 0;
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = (*t)[i];
      const auto at = [&](double offset) {
        (*t)[i] = saved + offset;
        Probe p = probe();
        (*t)[i] = saved;
        return p;
      };
      const Probe up = at(step), down = at(-step);
      const bool up_ok = up.pattern == base.pattern, down_ok = down.pattern == base.pattern;
      num[i] = (up.loss - down.loss) / (2.0 * step);
      if (up_ok == down_ok) continue;
      const double dir = up_ok ? 1.0 : -1.0;
      const Probe near = up_ok ? up : down, far = at(2.0 * dir * step);
      num[i] = far.pattern == base.pattern
                   ? dir * (-3.0 * base.loss + 4.0 * near.loss - far.loss) / (2.0 * step)
                   : dir * (near.loss - base.loss) / step;
      ++one_sided;
    }
    const double err = group_relative_error(a, num);
    report.groups.push_back({name, t->size(), err, one_sided});
    report.max_rel_error = std::max(report.max_rel_error, err);
    report.one_sided += one_sided;
  }
  return report;
}

inline void randomize(Tensor<double>& t, Rng& rng, double mean, double scale) {
  for (auto& v : t.data) v = mean + scale * rng.normal();
}

}  // namespace detail

/// Compares analytic and central-difference gradients on a small random
/// model and batch in double precision.
inline GradCheckReport grad_check(const GradCheckConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  if (cfg.kind == GradCheckConfig::Kind::Linear) {
    // Per-frame dense layer under a squared-error loss.
    const std::size_t rows = cfg.batch * cfg.time, in = 16, out = kNumClasses;
    Tensor<double> x({rows, in}), w({in, out}), b({out}), target({rows, out});
    detail::randomize(x, rng, 0.0, 1.0);
    detail::randomize(w, rng, 0.0, 0.5);
    detail::randomize(b, rng, 0.0, 0.5);
    detail::randomize(target, rng, 0.0, 1.0);
    auto loss = [&] {
      const auto y = dense_forward(x, w, b);
      detail::Probe p;
      for (std::size_t i = 0; i < y.size(); ++i)
        p.loss += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
      return p;
    };
    auto y = dense_forward(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= target[i];
    Tensor<double> dw(w.shape), db(b.shape);
    dense_backward(x, w, y, dw, db);
    return detail::compare_gradients({{"linear.w", &w}, {"linear.b", &b}}, {&dw, &db}, loss,
                                     cfg.step);
  }

  ModelConfig mc;
  mc.freq_bins = cfg.freq;
  mc.blocks = cfg.blocks;
  mc.batch_norm = cfg.batch_norm;
  mc.dropout = cfg.dropout ? 0.1 : 0.0;
  auto params = init_params<double>(mc, rng);
  params.for_each_trainable([&](const std::string& name, Tensor<double>& t) {
    if (name.ends_with("gamma"))
      detail::randomize(t, rng, 1.0, 0.2);
    else if (name.ends_with("beta") || name.ends_with(".b") || name.ends_with("bias"))
      detail::randomize(t, rng, 0.0, 0.2);
  });
  Tensor<double> x({cfg.batch, 1, cfg.time, cfg.freq});
  detail::randomize(x, rng, 0.0, 1.0);
  std::vector<double> target(cfg.batch * kNumClasses);
  for (auto& y : target) y = rng.bernoulli(0.4) ? 1.0 : 0.0;
  const Rng mask_rng(derive_seed(seed, stream::kDropout));

  auto loss = [&] {
    Rng r = mask_rng;
    ForwardCache<double> c;
    detail::Probe p;
    p.loss = bce_loss(model_forward(params, x, true, &r, &c), target).loss;
    for (const auto& b : c.blocks) p.pattern.insert(p.pattern.end(), b.argmax.begin(), b.argmax.end());
    return p;
  };
  Rng r = mask_rng;
  ForwardCache<double> cache;
  const auto probs = model_forward(params, x, true, &r, &cache);
  const auto grads = model_backward(params, cache, bce_loss(probs, target).grad);

  std::vector<std::pair<std::string, Tensor<double>*>> tensors;
  std::vector<const Tensor<double>*> analytic;
  params.for_each_trainable(
      [&](const std::string& n, Tensor<double>& t) { tensors.emplace_back(n, &t); });
  grads.for_each_trainable([&](const std::string&, const Tensor<double>& t) {
    analytic.push_back(&t);
  });
  return detail::compare_gradients(tensors, analytic, loss, cfg.step);
}

}  // namespace mixtag::nn
