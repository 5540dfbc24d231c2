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

// mixtag: command-line front end for the audio-tagging pipeline.

#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixtag/mixtag.hpp"

namespace fs = std::filesystem;
using namespace mixtag;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::BadAlpha:
      return kExitConfig;
    case ErrorKind::NonFiniteGradient:
    case ErrorKind::NonFiniteLoss:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

struct TrainOverrides {
  std::vector<std::string> settings;  // key=value
  std::string policy, features, output, folds;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_epochs;
};

void add_overrides(CLI::App* cmd, TrainOverrides& o) {
  cmd->add_option("--set", o.settings, "Override a config entry (key=value), repeatable");
  cmd->add_option("--policy", o.policy, "Augmentation policy");
  cmd->add_option("--alpha", o.alpha, "Beta(alpha, alpha) parameter");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--features", o.features, "MTFT feature container");
  cmd->add_option("--folds", o.folds, "chunk_id,fold CSV");
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_option("--max-epochs", o.max_epochs, "Epoch cap");
}

harness::TrainConfig resolve_config(const std::string& path, const TrainOverrides& o) {
  harness::TrainConfig c = harness::load_config(path);
  for (const auto& kv : o.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::ConfigError, "--set expects key=value, got '" + kv + "'");
    harness::set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.policy.empty()) c.policy = o.policy;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.seed) c.seed = *o.seed;
  if (!o.features.empty()) c.features = o.features;
  if (!o.folds.empty()) c.folds = o.folds;
  if (!o.output.empty()) c.output = o.output;
  if (o.max_epochs) c.max_epochs = *o.max_epochs;
  if (c.features.empty()) throw Error(ErrorKind::ConfigError, "config does not name 'features'");
  c.validate();
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create '" + dir + "': " + ec.message());
}

std::string path_in(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void print_epoch(int fold, const harness::EpochRecord& r) {
  std::fprintf(stderr,
               "fold %d epoch %3zu  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n",
               fold, r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
}

void save_fold(const std::string& dir, const harness::FoldResult& fr) {
  const std::string suffix = "_fold" + std::to_string(fr.fold);
  nn::Checkpoint ck{fr.params, fr.adam, fr.stats};
  nn::save_checkpoint(path_in(dir, "model" + suffix + ".mtmd"), ck);
  harness::export_history(fr.history, path_in(dir, "history" + suffix + ".csv"));
}

int cmd_synth(const std::string& out, std::size_t clips, std::uint64_t seed,
              std::size_t classes) {
  SynthSpec spec;
  spec.clip_count = clips;
  spec.class_count = classes;
  const auto manifest = synth_dataset(spec, seed, out);
  std::printf("wrote %zu clips to %s\n", manifest.entries.size(),
              path_in(out, "manifest.csv").c_str());
  return 0;
}

int cmd_extract(const std::string& manifest_path, const std::string& out) {
  const auto manifest = load_manifest(manifest_path);
  save_features(out, extract_features(manifest));
  std::printf("wrote %zu features to %s\n", manifest.entries.size(), out.c_str());
  return 0;
}

int cmd_augment(const std::string& in, const std::string& policy_name, double alpha,
                std::uint64_t seed, const std::string& out, const std::string& before,
                std::size_t batch_size) {
  if (batch_size < 1) throw Error(ErrorKind::ConfigError, "batch size must be >= 1");
  const MixPolicy policy = make_policy(policy_name, alpha);
  const FeatureSet set = load_features(in);
  FeatureSet mixed;
  for (std::size_t start = 0, ordinal = 0; start < set.size(); start += batch_size, ++ordinal) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    Batch batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.features.push_back(set.features[i]);
      batch.labels.push_back(set.labels[i]);
    }
    Rng rng(derive_seed(seed, ordinal));
    const Batch result = apply_policy(batch, policy, rng);
    for (std::size_t i = 0; i < result.size(); ++i) {
      mixed.ids.push_back(set.ids[start + i]);
      mixed.features.push_back(result.features[i]);
      mixed.labels.push_back(result.labels[i]);
    }
  }
  save_features(out, mixed);
  if (!before.empty()) save_features(before, set);
  std::printf("augmented %zu records with %s(alpha=%g) -> %s\n", mixed.size(),
              policy_name.c_str(), alpha, out.c_str());
  return 0;
}

int cmd_train(const harness::TrainConfig& config, std::optional<int> fold) {
  ensure_dir(config.output);
  const FeatureSet data = load_features(config.features);
  const FoldSplit split = harness::resolve_folds(config, data);
  csv::write_text(path_in(config.output, "folds.csv"), serialize_folds(split));
  if (fold) {
    const auto fr = harness::train_fold(config, *fold, data, split, print_epoch);
    save_fold(config.output, fr);
    const auto report = per_class_report(fr.val_scores, fr.val_labels, DegeneratePolicy::Skip);
    for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    csv::write_text(path_in(config.output, "report_fold" + std::to_string(*fold) + ".csv"),
                    report_csv(report));
    std::printf("best epoch %zu\n%s\n", fr.best_epoch, summary_line(report).c_str());
    return 0;
  }
  const auto report = harness::cross_validate(
      config, data, split, print_epoch,
      [&](const harness::FoldResult& fr) { save_fold(config.output, fr); });
  for (const auto& w : report.averaged.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (std::size_t f = 0; f < report.fold_reports.size(); ++f)
    csv::write_text(path_in(config.output, "report_fold" + std::to_string(f) + ".csv"),
                    report_csv(report.fold_reports[f]));
  csv::write_text(path_in(config.output, "report.csv"), report_csv(report.averaged));
  csv::write_text(path_in(config.output, "report_pooled.csv"), report_csv(report.pooled));
  std::printf("%s\npooled %s\n", summary_line(report.averaged).c_str(),
              summary_line(report.pooled).c_str());
  return 0;
}

int cmd_eval(const std::string& features, const std::string& model, const std::string& out) {
  const nn::Checkpoint ck = nn::load_checkpoint(model);
  const FeatureSet set = load_features(features);
  std::vector<FeatureMatrix> xs;
  for (const auto& f : set.features) xs.push_back(ck.stats ? normalize(f, *ck.stats) : f);
  const auto scores = harness::predict(ck.params, xs);
  const auto report =
      per_class_report(scores, nn::flatten_labels(set.labels), DegeneratePolicy::Skip);
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  if (out.empty())
    std::fputs(report_csv(report).c_str(), stdout);
  else
    csv::write_text(out, report_csv(report));
  std::printf("%s\n", summary_line(report).c_str());
  return 0;
}

int cmd_sweep(harness::TrainConfig config, const std::string& alphas_text, const std::string& out) {
  const auto alphas = alphas_text.empty() ? config.alpha_grid : harness::parse_alpha_list(alphas_text);
  if (config.policy == "none") config.policy = "mixup";
  for (double a : alphas) {
    harness::TrainConfig c = config;
    c.alpha = a;
    c.validate();
  }
  ensure_dir(config.output);
  const FeatureSet data = load_features(config.features);
  const FoldSplit split = harness::resolve_folds(config, data);
  const auto reports = harness::alpha_sweep(config, alphas, data, split, print_epoch);
  const std::string path = out.empty() ? path_in(config.output, "sweep.csv") : out;
  csv::write_text(path, harness::sweep_csv(reports));
  for (const auto& r : reports)
    std::printf("alpha=%g %s\n", r.alpha, summary_line(r.averaged).c_str());
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates many short-lived activation buffers of the same few
  // sizes; keeping them in the heap avoids repeated page faults.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"mixtag: sample-mixed augmentation for multi-label audio tagging"};
  app.require_subcommand(1);

  std::string out, manifest, features, model, config_path, policy = "none", alphas, before;
  std::size_t clips = 100, classes = 4, batch_size = 44;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::optional<int> fold;
  TrainOverrides overrides;

  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic labeled WAV dataset");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--clips", clips, "Number of clips");
  synth->add_option("--seed", seed, "Seed");
  synth->add_option("--classes", classes, "Number of classes (1-7)");

  auto* extract = app.add_subcommand("extract", "Compute log-mel features for a manifest");
  extract->add_option("--manifest", manifest, "chunk_id,path,labels CSV")->required();
  extract->add_option("--out", out, "Output MTFT file")->required();

  auto* augment = app.add_subcommand("augment", "Apply an augmentation policy batch-wise");
  augment->add_option("--features", features, "Input MTFT file")->required();
  augment->add_option("--policy", policy, "none|mixup|samplepairing|mixup_lp|extrapolation");
  augment->add_option("--alpha", alpha, "Beta(alpha, alpha) parameter");
  augment->add_option("--seed", seed, "Seed");
  augment->add_option("--out", out, "Output MTFT file (after)")->required();
  augment->add_option("--before", before, "Also write the unmodified records here");
  augment->add_option("--batch-size", batch_size, "Minibatch size");

  auto* train = app.add_subcommand("train", "Cross-validate, or train a single fold");
  train->add_option("--config", config_path, "key = value config file")->required();
  train->add_option("--fold", fold, "Train only this held-out fold");
  add_overrides(train, overrides);

  auto* eval = app.add_subcommand("eval", "Score features with a checkpoint");
  eval->add_option("--features", features, "MTFT file")->required();
  eval->add_option("--model", model, "MTMD checkpoint")->required();
  eval->add_option("--out", out, "Report CSV (default: stdout)");

  auto* sweep = app.add_subcommand("sweep", "Cross-validate over a list of alphas");
  sweep->add_option("--config", config_path, "key = value config file")->required();
  sweep->add_option("--alphas", alphas, "Comma-separated alphas (default: alpha_grid)");
  sweep->add_option("--out", out, "Sweep CSV (default: <output>/sweep.csv)");
  add_overrides(sweep, overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(out, clips, seed, classes);
    if (*extract) return cmd_extract(manifest, out);
    if (*augment) return cmd_augment(features, policy, alpha, seed, out, before, batch_size);
    if (*train) return cmd_train(resolve_config(config_path, overrides), fold);
    if (*eval) return cmd_eval(features, model, out);
    if (*sweep) return cmd_sweep(resolve_config(config_path, overrides), alphas, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return 0;
}
