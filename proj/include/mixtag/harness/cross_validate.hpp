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

#include <chrono>
#include <string>
#include <vector>

#include "mixtag/harness/train.hpp"

namespace mixtag::harness {

struct ExperimentReport {
  std::string policy;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::vector<EerReport> fold_reports;
  EerReport averaged;  // entry-wise mean of the fold reports
  EerReport pooled;    // EER over all folds' held-out scores at once
  std::vector<TrainingHistory> histories;
  double wall_clock_seconds = 0.0;
};

/// Folds from the config's fold file when given, otherwise shuffled
/// round-robin folds derived from the master seed.
inline FoldSplit resolve_folds(const TrainConfig& config, const FeatureSet& data) {
  DatasetManifest manifest;
  for (std::size_t i = 0; i < data.size(); ++i)
    manifest.entries.push_back({data.ids[i], "", data.labels[i]});
  FoldSplit split = config.folds.empty()
                        ? make_folds(manifest, config.fold_count, config.seed)
                        : parse_folds(csv::read_text(config.folds));
  validate_folds(manifest, split);
  return split;
}

using FoldCallback = std::function<void(const FoldResult&)>;

/// Trains one model per fold and scores its held-out fold. Classes without
/// both positives and negatives in a fold are skipped there with a warning.
inline ExperimentReport cross_validate(const TrainConfig& config, const FeatureSet& data,
                                       const FoldSplit& split, const EpochCallback& on_epoch = {},
                                       const FoldCallback& on_fold = {}) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.policy = config.policy;
  report.alpha = config.alpha;
  report.seed = config.seed;
  std::vector<double> pooled_scores, pooled_labels;
  for (int f = 0; f < split.fold_count; ++f) {
    FoldResult fr = train_fold(config, f, data, split, on_epoch);
    EerReport r = per_class_report(fr.val_scores, fr.val_labels, DegeneratePolicy::Skip);
    for (auto& w : r.warnings) w = "fold " + std::to_string(f) + ": " + w;
    report.fold_reports.push_back(std::move(r));
    report.histories.push_back(fr.history);
    pooled_scores.insert(pooled_scores.end(), fr.val_scores.begin(), fr.val_scores.end());
    pooled_labels.insert(pooled_labels.end(), fr.val_labels.begin(), fr.val_labels.end());
    if (on_fold) on_fold(fr);
  }
  report.averaged = average_reports(report.fold_reports);
  report.pooled = per_class_report(pooled_scores, pooled_labels, DegeneratePolicy::Skip);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// One cross-validation run per alpha with the configured policy and seed.
inline std::vector<ExperimentReport> alpha_sweep(const TrainConfig& config,
                                                 const std::vector<double>& alphas,
                                                 const FeatureSet& data, const FoldSplit& split,
                                                 const EpochCallback& on_epoch = {}) {
  if (alphas.empty()) throw Error(ErrorKind::ConfigError, "alpha list is empty");
  std::vector<ExperimentReport> reports;
  for (double a : alphas) {
    TrainConfig c = config;
    c.alpha = a;
    reports.push_back(cross_validate(c, data, split, on_epoch));
  }
  return reports;
}

inline constexpr const char* kSweepHeader =
    "policy,alpha,seed,c,m,f,v,p,b,o,avg,var,pooled_avg,pooled_var,wall_clock_s";

/// One Table-1 style row per report. wall_clock_s is the only
/// non-deterministic column and always comes last.
inline std::string sweep_csv(const std::vector<ExperimentReport>& reports) {
  std::string out = std::string(kSweepHeader) + "\n";
  char alpha[32];
  for (const auto& r : reports) {
    std::snprintf(alpha, sizeof alpha, "%g", r.alpha);
    out += r.policy + "," + alpha + "," + std::to_string(r.seed);
    for (double v : r.averaged.per_class) out += "," + format_real(v);
    out += "," + format_real(r.averaged.average) + "," + format_real(r.averaged.variance);
    out += "," + format_real(r.pooled.average) + "," + format_real(r.pooled.variance);
    char wall[32];
    std::snprintf(wall, sizeof wall, "%.3f", r.wall_clock_seconds);
    out += std::string(",") + wall + "\n";
  }
  return out;
}

/// Inverse of sweep_csv (fold-level detail and histories are not stored).
inline std::vector<ExperimentReport> parse_sweep_csv(std::string_view text) {
  const auto rows = csv::lines(text);
  if (rows.empty() || rows[0] != kSweepHeader)
    throw Error(ErrorKind::ParseError, "expected sweep header");
  std::vector<ExperimentReport> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    const auto f = csv::split_line(rows[i]);
    if (f.size() != 15) throw Error(ErrorKind::ParseError, "bad sweep row " + std::to_string(i + 1));
    ExperimentReport r;
    r.policy = f[0];
    r.alpha = parse_real(f[1]);
    r.seed = std::stoull(f[2]);
    for (std::size_t c = 0; c < kNumClasses; ++c) r.averaged.per_class[c] = parse_real(f[3 + c]);
    r.averaged.average = parse_real(f[10]);
    r.averaged.variance = parse_real(f[11]);
    r.pooled.average = parse_real(f[12]);
    r.pooled.variance = parse_real(f[13]);
    r.wall_clock_seconds = parse_real(f[14]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mixtag::harness
