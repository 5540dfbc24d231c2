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

#include <cmath>
#include <cstdint>

#include "mixtag/nn/model.hpp"

namespace mixtag::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ModelParams<T>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

/// Everything needed to resume training.
template <typename T>
struct TrainState {
  ModelParams<T> params;
  AdamState<T> adam;
};

/// Bias-corrected Adam update of every trainable tensor. Gradients are
/// validated before anything is modified.
template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg = {}) {
  grads.for_each_trainable([](const std::string& name, const Tensor<T>& g) {
    if (!g.all_finite())
      throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient in " + name);
  });
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::vector<Tensor<T>*> p_list, m_list, v_list;
  std::vector<const Tensor<T>*> g_list;
  params.for_each_trainable([&](const std::string&, Tensor<T>& t) { p_list.push_back(&t); });
  state.m.for_each_trainable([&](const std::string&, Tensor<T>& t) { m_list.push_back(&t); });
  state.v.for_each_trainable([&](const std::string&, Tensor<T>& t) { v_list.push_back(&t); });
  grads.for_each_trainable(
      [&](const std::string&, const Tensor<T>& t) { g_list.push_back(&t); });
  if (g_list.size() != p_list.size() || m_list.size() != p_list.size())
    throw Error(ErrorKind::ShapeError, "adam: gradient structure does not match parameters");
  for (std::size_t k = 0; k < p_list.size(); ++k) {
    auto& p = *p_list[k];
    auto& m = *m_list[k];
    auto& v = *v_list[k];
    const auto& g = *g_list[k];
    if (g.size() != p.size() || m.size() != p.size())
      throw Error(ErrorKind::ShapeError, "adam: tensor size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(p[i] - cfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps));
    }
  }
}

}  // namespace mixtag::nn
