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
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "mixtag/dsp.hpp"
#include "mixtag/error.hpp"
#include "mixtag/labels.hpp"
#include "mixtag/rng.hpp"

namespace mixtag {

/// N feature matrices with their label vectors, aligned by index.
struct Batch {
  std::vector<FeatureMatrix> features;
  std::vector<LabelVector> labels;

  std::size_t size() const { return features.size(); }
  bool operator==(const Batch& other) const {
    if (size() != other.size() || labels != other.labels) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      const auto& a = features[i];
      const auto& b = other.features[i];
      if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
    }
    return true;
  }
};

struct MixLambda {
  double value = 0.0;
  double alpha = 0.0;
};

namespace policy {
struct None {};
struct Mixup {
  double alpha = 0.0;
};
struct SamplePairing {};
struct MixupLP {
  double alpha = 0.0;
};
struct Extrapolation {
  double alpha = 0.0;
};
}  // namespace policy

using MixPolicy = std::variant<policy::None, policy::Mixup, policy::SamplePairing,
                               policy::MixupLP, policy::Extrapolation>;

struct MixOptions {
  /// Draw one lambda per example instead of one per minibatch.
  bool per_example_lambda = false;
};

/// Gamma(shape, 1) by Marsaglia-Tsang; shapes below 1 use the
/// Gamma(shape + 1) * U^(1/shape) boost.
inline double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0)) throw Error(ErrorKind::BadAlpha, "gamma shape must be > 0");
  if (shape < 1.0) {
    const double u = 1.0 - rng.uniform();  // (0, 1]
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

/// lambda ~ Beta(alpha, alpha) as g1 / (g1 + g2) with g1, g2 ~ Gamma(alpha, 1).
inline MixLambda sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw Error(ErrorKind::BadAlpha, "Beta(alpha, alpha) needs alpha > 0, got " +
                                         std::to_string(alpha));
  while (true) {
    const double g1 = sample_gamma(alpha, rng);
    const double g2 = sample_gamma(alpha, rng);
    if (g1 + g2 > 0.0) return {g1 / (g1 + g2), alpha};
  }
}

/// Uniform random permutation of batch indices; fixed points are allowed.
inline std::vector<std::size_t> shuffled_partners(std::size_t n, Rng& rng) {
  std::vector<std::size_t> partners(n);
  std::iota(partners.begin(), partners.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(partners));
  return partners;
}

namespace detail {

enum class LabelRule { Mix, KeepFirst };

inline void check_pairing(const Batch& batch, std::span<const double> lambdas,
                          std::span<const std::size_t> partners) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  if (batch.labels.size() != batch.size())
    throw Error(ErrorKind::ShapeError, "features and labels are misaligned");
  if (partners.size() != batch.size() ||
      (lambdas.size() != 1 && lambdas.size() != batch.size()))
    throw Error(ErrorKind::ShapeError, "pairing does not match batch size");
  for (std::size_t j : partners)
    if (j >= batch.size()) throw Error(ErrorKind::ShapeError, "partner index out of range");
}

/// x_n = a * x_i + b * x_j with (a, b) given per example, computed in double.
inline Batch combine(const Batch& batch, std::span<const double> first_weight,
                     std::span<const double> second_weight,
                     std::span<const double> label_weight,
                     std::span<const std::size_t> partners, LabelRule rule) {
  Batch out;
  out.features.reserve(batch.size());
  out.labels.reserve(batch.size());
  auto pick = [](std::span<const double> w, std::size_t i) {
    return w.size() == 1 ? w[0] : w[i];
  };
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t j = partners[i];
    const auto& xi = batch.features[i];
    const auto& xj = batch.features[j];
    if (xi.rows() != xj.rows() || xi.cols() != xj.cols())
      throw Error(ErrorKind::ShapeError, "features in a batch must share a shape");
    const double a = pick(first_weight, i);
    const double b = pick(second_weight, i);
    FeatureMatrix xn(xi.rows(), xi.cols());
    for (Eigen::Index k = 0; k < xi.size(); ++k)
      xn.data()[k] = static_cast<float>(a * static_cast<double>(xi.data()[k]) +
                                        b * static_cast<double>(xj.data()[k]));
    out.features.push_back(std::move(xn));
    if (rule == LabelRule::KeepFirst) {
      out.labels.push_back(batch.labels[i]);
    } else {
      const double lam = pick(label_weight, i);
      LabelVector yn{};
      for (std::size_t c = 0; c < kNumClasses; ++c)
        yn[c] = lam * batch.labels[i][c] + (1.0 - lam) * batch.labels[j][c];
      out.labels.push_back(yn);
    }
  }
  return out;
}

inline std::vector<double> complement(std::span<const double> lambdas) {
  std::vector<double> out(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) out[i] = 1.0 - lambdas[i];
  return out;
}

inline std::vector<double> draw_lambdas(std::size_t n, double alpha, Rng& rng,
                                        const MixOptions& options) {
  std::vector<double> lambdas(options.per_example_lambda ? n : 1);
  for (auto& l : lambdas) l = sample_beta(alpha, rng).value;
  return lambdas;
}

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw Error(ErrorKind::BadAlpha, "alpha must be finite and >= 0");
}

}  // namespace detail

// Deterministic forms: explicit lambda(s) (one per batch or one per example)
// and partner indices.

/// x_n = l x_i + (1 - l) x_j, y_n = l y_i + (1 - l) y_j.
inline Batch mixup_with(const Batch& batch, std::span<const double> lambdas,
                        std::span<const std::size_t> partners) {
  detail::check_pairing(batch, lambdas, partners);
  const auto rest = detail::complement(lambdas);
  return detail::combine(batch, lambdas, rest, lambdas, partners, detail::LabelRule::Mix);
}

/// x_n = (x_i + x_j) / 2, y_n = y_i.
inline Batch sample_pairing_with(const Batch& batch, std::span<const std::size_t> partners) {
  const double half[1] = {0.5};
  detail::check_pairing(batch, half, partners);
  return detail::combine(batch, half, half, {}, partners, detail::LabelRule::KeepFirst);
}

/// Mixup features with lambda clamped to max(l, 1 - l), y_n = y_i.
inline Batch mixup_lp_with(const Batch& batch, std::span<const double> lambdas,
                           std::span<const std::size_t> partners) {
  detail::check_pairing(batch, lambdas, partners);
  std::vector<double> clamped(lambdas.begin(), lambdas.end());
  for (auto& l : clamped) l = std::max(l, 1.0 - l);
  const auto rest = detail::complement(clamped);
  return detail::combine(batch, clamped, rest, {}, partners, detail::LabelRule::KeepFirst);
}

/// x_n = (1 + l) x_i - l x_j, y_n = y_i. Features are not clipped.
inline Batch extrapolate_with(const Batch& batch, std::span<const double> lambdas,
                              std::span<const std::size_t> partners) {
  detail::check_pairing(batch, lambdas, partners);
  std::vector<double> first(lambdas.size()), second(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    first[i] = 1.0 + lambdas[i];
    second[i] = -lambdas[i];
  }
  return detail::combine(batch, first, second, {}, partners, detail::LabelRule::KeepFirst);
}

// Sampling forms. Each draws lambda(s) first, then the partner permutation.

inline Batch mixup_batch(const Batch& batch, double alpha, Rng& rng,
                         const MixOptions& options = {}) {
  detail::check_alpha(alpha);
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  if (alpha == 0.0) return batch;
  const auto lambdas = detail::draw_lambdas(batch.size(), alpha, rng, options);
  const auto partners = shuffled_partners(batch.size(), rng);
  return mixup_with(batch, lambdas, partners);
}

inline Batch sample_pairing_batch(const Batch& batch, Rng& rng) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  const auto partners = shuffled_partners(batch.size(), rng);
  return sample_pairing_with(batch, partners);
}

inline Batch mixup_lp_batch(const Batch& batch, double alpha, Rng& rng,
                            const MixOptions& options = {}) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  const auto lambdas = detail::draw_lambdas(batch.size(), alpha, rng, options);
  const auto partners = shuffled_partners(batch.size(), rng);
  return mixup_lp_with(batch, lambdas, partners);
}

inline Batch extrapolate_batch(const Batch& batch, double alpha, Rng& rng,
                               const MixOptions& options = {}) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  const auto lambdas = detail::draw_lambdas(batch.size(), alpha, rng, options);
  const auto partners = shuffled_partners(batch.size(), rng);
  return extrapolate_with(batch, lambdas, partners);
}

inline double policy_alpha(const MixPolicy& policy) {
  return std::visit(
      [](const auto& p) -> double {
        if constexpr (requires { p.alpha; })
          return p.alpha;
        else
          return 0.0;
      },
      policy);
}

/// None, and any alpha-parameterized policy at alpha == 0, leave batches
/// untouched.
inline bool is_identity(const MixPolicy& policy) {
  if (std::holds_alternative<policy::None>(policy)) return true;
  if (std::holds_alternative<policy::SamplePairing>(policy)) return false;
  return policy_alpha(policy) == 0.0;
}

inline Batch apply_policy(const Batch& batch, const MixPolicy& policy, Rng& rng,
                          const MixOptions& options = {}) {
  if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch is empty");
  if (is_identity(policy)) return batch;
  struct Visitor {
    const Batch& batch;
    Rng& rng;
    const MixOptions& options;
    Batch operator()(const policy::None&) const { return batch; }
    Batch operator()(const policy::Mixup& p) const {
      return mixup_batch(batch, p.alpha, rng, options);
    }
    Batch operator()(const policy::SamplePairing&) const {
      return sample_pairing_batch(batch, rng);
    }
    Batch operator()(const policy::MixupLP& p) const {
      return mixup_lp_batch(batch, p.alpha, rng, options);
    }
    Batch operator()(const policy::Extrapolation& p) const {
      return extrapolate_batch(batch, p.alpha, rng, options);
    }
  };
  return std::visit(Visitor{batch, rng, options}, policy);
}

inline std::string policy_name(const MixPolicy& policy) {
  constexpr const char* names[] = {"none", "mixup", "samplepairing", "mixup_lp",
                                   "extrapolation"};
  return names[policy.index()];
}

/// Builds a policy from its CLI name; alpha must be finite and >= 0.
inline MixPolicy make_policy(const std::string& name, double alpha) {
  detail::check_alpha(alpha);
  if (name == "none") return policy::None{};
  if (name == "mixup") return policy::Mixup{alpha};
  if (name == "samplepairing") return policy::SamplePairing{};
  if (name == "mixup_lp") return policy::MixupLP{alpha};
  if (name == "extrapolation") return policy::Extrapolation{alpha};
  throw Error(ErrorKind::ConfigError, "unknown policy '" + name + "'");
}

}  // namespace mixtag
