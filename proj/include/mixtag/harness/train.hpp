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
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mixtag/augment.hpp"
#include "mixtag/dataset.hpp"
#include "mixtag/dsp.hpp"
#include "mixtag/feature_io.hpp"
#include "mixtag/harness/config.hpp"
#include "mixtag/metrics.hpp"
#include "mixtag/nn/adam.hpp"
#include "mixtag/nn/loss.hpp"
#include "mixtag/nn/model.hpp"

namespace mixtag::harness {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

/// Stops once the validation loss has failed to improve (strictly) for
/// `patience` consecutive epochs.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records an epoch; returns true when training should stop.
  bool update(std::size_t epoch, double val_loss) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      stale_ = 0;
      improved_ = true;
    } else {
      ++stale_;
      improved_ = false;
    }
    return stale_ >= patience_;
  }

  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

/// Stacks (T x F) matrices into an (N, 1, T, F) tensor.
inline nn::Tensor<float> to_tensor(std::span<const FeatureMatrix* const> features) {
  const auto time = static_cast<std::size_t>(features.front()->rows());
  const auto freq = static_cast<std::size_t>(features.front()->cols());
  nn::Tensor<float> x({features.size(), 1, time, freq});
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = *features[i];
    if (static_cast<std::size_t>(f.rows()) != time || static_cast<std::size_t>(f.cols()) != freq)
      throw Error(ErrorKind::ShapeError, "features in a batch must share a shape");
    std::copy(f.data(), f.data() + f.size(), x.ptr() + i * time * freq);
  }
  return x;
}

inline nn::Tensor<float> to_tensor(const std::vector<FeatureMatrix>& features) {
  std::vector<const FeatureMatrix*> ptrs;
  for (const auto& f : features) ptrs.push_back(&f);
  return to_tensor(ptrs);
}

/// Inference-mode tag probabilities, N x 7 row-major.
inline std::vector<double> predict(const nn::ModelParams<float>& params,
                                   const std::vector<FeatureMatrix>& features,
                                   std::size_t chunk = 64) {
  std::vector<double> out;
  out.reserve(features.size() * params.config.classes);
  for (std::size_t start = 0; start < features.size(); start += chunk) {
    const std::size_t end = std::min(features.size(), start + chunk);
    std::vector<const FeatureMatrix*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&features[i]);
    const auto probs = nn::model_forward(params, to_tensor(ptrs), false, nullptr);
    out.insert(out.end(), probs.data.begin(), probs.data.end());
  }
  return out;
}

struct FoldResult {
  int fold = 0;
  nn::ModelParams<float> params;  // from the best validation epoch
  nn::AdamState<float> adam;      // at the end of training
  FeatureStats stats;             // from the training portion only
  TrainingHistory history;
  std::size_t best_epoch = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<double> val_scores;  // N_val x 7 from the best parameters
  std::vector<double> val_labels;
};

using EpochCallback = std::function<void(int fold, const EpochRecord&)>;

inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return derive_seed(seed, 1000 + static_cast<std::uint64_t>(fold));
}

/// Trains on every fold except `fold` and early-stops on the loss over
/// `fold`, which is never augmented.
inline FoldResult train_fold(const TrainConfig& config, int fold, const FeatureSet& data,
                             const FoldSplit& split, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (fold < 0 || fold >= split.fold_count)
    throw Error(ErrorKind::ConfigError, "fold " + std::to_string(fold) + " out of range");
  if (data.size() == 0) throw Error(ErrorKind::EmptyInput, "no features");

  FoldResult result;
  result.fold = fold;
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < data.size(); ++i)
    (split.fold_of(data.ids[i]) == fold ? val_idx : train_idx).push_back(i);
  if (train_idx.empty() || val_idx.empty())
    throw Error(ErrorKind::TooFewItems, "fold " + std::to_string(fold) +
                                            " leaves an empty training or validation set");

  std::vector<FeatureMatrix> raw_train;
  for (auto i : train_idx) raw_train.push_back(data.features[i]);
  result.stats = compute_stats(raw_train);
  raw_train.clear();

  std::vector<FeatureMatrix> train_x, val_x;
  std::vector<LabelVector> train_y, val_y;
  for (auto i : train_idx) {
    train_x.push_back(normalize(data.features[i], result.stats));
    train_y.push_back(data.labels[i]);
    result.train_ids.push_back(data.ids[i]);
  }
  for (auto i : val_idx) {
    val_x.push_back(normalize(data.features[i], result.stats));
    val_y.push_back(data.labels[i]);
    result.val_ids.push_back(data.ids[i]);
  }
  result.val_labels = nn::flatten_labels(val_y);

  const std::uint64_t seed = fold_seed(config.seed, fold);
  nn::ModelConfig mc;
  mc.freq_bins = static_cast<std::size_t>(data.features.front().cols());
  mc.blocks = config.blocks;
  mc.dropout = config.dropout;
  Rng init_rng(derive_seed(seed, stream::kInit));
  auto params = nn::init_params<float>(mc, init_rng);
  auto adam = nn::make_adam_state(params);
  const nn::AdamConfig adam_cfg{config.learning_rate};
  Rng shuffle_rng(derive_seed(seed, stream::kShuffle));
  Rng dropout_rng(derive_seed(seed, stream::kDropout));
  Rng mix_rng(derive_seed(seed, stream::kMix));
  const MixPolicy policy = config.mix_policy();
  const MixOptions mix_options{config.per_example_lambda};

  EarlyStopping stopper(config.patience);
  result.params = params;
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0, acc_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Batch batch;
      for (std::size_t k = start; k < end; ++k) {
        batch.features.push_back(train_x[order[k]]);
        batch.labels.push_back(train_y[order[k]]);
      }
      const Batch mixed = apply_policy(batch, policy, mix_rng, mix_options);
      nn::ForwardCache<float> cache;
      const auto probs =
          nn::model_forward(params, to_tensor(mixed.features), true, &dropout_rng, &cache);
      const auto targets = nn::flatten_labels(mixed.labels);
      const auto loss = nn::bce_loss(probs, targets);
      if (!std::isfinite(loss.loss))
        throw Error(ErrorKind::NonFiniteLoss, "fold " + std::to_string(fold) + ", epoch " +
                                                  std::to_string(epoch));
      const auto grads = nn::model_backward(params, cache, loss.grad);
      nn::update_running_stats(params, cache);
      try {
        nn::adam_step(params, grads, adam, adam_cfg);
      } catch (const Error& e) {
        throw Error(e.kind(), std::string(e.what()) + " (fold " + std::to_string(fold) +
                                  ", epoch " + std::to_string(epoch) + ")");
      }
      const double n = static_cast<double>(end - start);
      loss_sum += loss.loss * n;
      acc_sum += nn::label_accuracy(probs, nn::flatten_labels(batch.labels)) * n;
    }

    const auto val_scores = predict(params, val_x, config.eval_batch_size);
    nn::Tensor<float> val_probs({val_x.size(), kNumClasses});
    std::copy(val_scores.begin(), val_scores.end(), val_probs.data.begin());
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = acc_sum / static_cast<double>(order.size());
    rec.val_loss = nn::bce_loss(val_probs, result.val_labels).loss;
    rec.val_acc = nn::label_accuracy(val_probs, result.val_labels);
    if (!std::isfinite(rec.val_loss))
      throw Error(ErrorKind::NonFiniteLoss, "validation loss at fold " + std::to_string(fold) +
                                                ", epoch " + std::to_string(epoch));
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(fold, rec);

    const bool stop = stopper.update(epoch, rec.val_loss);
    if (stopper.improved()) {
      result.params = params;
      result.val_scores = val_scores;
    }
    if (stop) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.adam = std::move(adam);
  return result;
}

/// `epoch,train_loss,train_acc,val_loss,val_acc`, one row per epoch.
inline std::string history_csv(const TrainingHistory& h) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char buf[160];
  for (const auto& r : h.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.train_loss,
                  r.train_acc, r.val_loss, r.val_acc);
    out += buf;
  }
  return out;
}

inline TrainingHistory parse_history_csv(std::string_view text) {
  const auto rows = csv::lines(text);
  if (rows.empty() || rows[0] != "epoch,train_loss,train_acc,val_loss,val_acc")
    throw Error(ErrorKind::ParseError, "expected history header");
  TrainingHistory h;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    const auto f = csv::split_line(rows[i]);
    if (f.size() != 5) throw Error(ErrorKind::ParseError, "bad history row " + std::to_string(i + 1));
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(parse_real(f[0]));
    r.train_loss = parse_real(f[1]);
    r.train_acc = parse_real(f[2]);
    r.val_loss = parse_real(f[3]);
    r.val_acc = parse_real(f[4]);
    h.epochs.push_back(r);
  }
  return h;
}

inline void export_history(const TrainingHistory& h, const std::string& path) {
  if (h.epochs.empty()) throw Error(ErrorKind::EmptyInput, "history is empty");
  csv::write_text(path, history_csv(h));
}

}  // namespace mixtag::harness
