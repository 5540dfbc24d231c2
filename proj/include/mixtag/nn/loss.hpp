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
#include <span>
#include <vector>

#include "mixtag/labels.hpp"
#include "mixtag/nn/tensor.hpp"

namespace mixtag::nn {

inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dpred, same shape as pred
};

/// Mean binary cross-entropy over every (example, class) entry. Predictions
/// are clamped to [1e-7, 1 - 1e-7]; clamped entries get zero gradient.
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.size() == 0)
    throw Error(ErrorKind::ShapeError, "bce: " + std::to_string(pred.size()) +
                                           " predictions vs " + std::to_string(target.size()) +
                                           " targets");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape);
  const double scale = 1.0 / static_cast<double>(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred[i];
    const double p = std::clamp(raw, kProbClamp, 1.0 - kProbClamp);
    const double y = target[i];
    total -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
    if (raw == p) r.grad[i] = static_cast<T>((p - y) / (p * (1.0 - p)) * scale);
  }
  r.loss = total * scale;
  return r;
}

/// Flattens label vectors to an (N * classes) row-major target buffer.
inline std::vector<double> flatten_labels(std::span<const LabelVector> labels,
                                          std::size_t classes = kNumClasses) {
  std::vector<double> out;
  out.reserve(labels.size() * classes);
  for (const auto& y : labels) out.insert(out.end(), y.begin(), y.begin() + classes);
  return out;
}

/// Fraction of (example, class) entries where (pred >= 0.5) matches
/// (target >= 0.5).
template <typename T>
double label_accuracy(const Tensor<T>& pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.size() == 0)
    throw Error(ErrorKind::ShapeError, "accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hits += (pred[i] >= T(0.5)) == (target[i] >= 0.5);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace mixtag::nn
