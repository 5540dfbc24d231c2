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

// Acceptance checks. Prints one PASS/FAIL line per criterion; extra detail
// lines are indented. Pass criterion numbers as arguments to run a subset.

#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixtag/mixtag.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mixtag;

namespace {

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> details;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() /
                     ("mixtag_acceptance_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1. Reference table arithmetic.
Outcome table_arithmetic() {
  struct Row {
    const char* name;
    std::array<double, 7> eers;
    double avg, var_milli;
  };
  const Row rows[] = {
      {"mixup 1.5", {0.10, 0.14, 0.11, 0.03, 0.10, 0.01, 0.20}, 0.10, 4.11},
      {"DAE-DNN", {0.21, 0.15, 0.21, 0.02, 0.18, 0.01, 0.26}, 0.15, 9.45},
      {"CGRNN", {0.17, 0.16, 0.18, 0.03, 0.15, 0.00, 0.24}, 0.13, 7.39},
      {"ATT-LOC", {0.09, 0.14, 0.17, 0.03, 0.12, 0.01, 0.24}, 0.11, 6.36},
      {"mixup 0.1", {0.10, 0.23, 0.15, 0.02, 0.15, 0.03, 0.23}, 0.13, 7.30},
      {"mixup 0.5", {0.09, 0.16, 0.11, 0.03, 0.14, 0.03, 0.24}, 0.11, 5.56},
      {"mixup 1.0", {0.09, 0.12, 0.11, 0.02, 0.12, 0.03, 0.26}, 0.11, 6.25},
      {"mixup 2.0", {0.10, 0.11, 0.11, 0.03, 0.11, 0.00, 0.25}, 0.10, 6.28},
      {"SamplePairing", {0.10, 0.20, 0.15, 0.01, 0.16, 0.03, 0.24}, 0.13, 7.26},
      {"mixup_lp 1.5", {0.12, 0.13, 0.12, 0.02, 0.12, 0.00, 0.25}, 0.11, 6.52},
      {"extrapolation 1.5", {0.10, 0.16, 0.13, 0.03, 0.14, 0.02, 0.23}, 0.12, 5.43},
  };
  Outcome o{true, "", {}};
  for (const auto& r : rows) {
    const auto rep = make_report(r.eers);
    const double rounded = std::round(rep.average * 100.0) / 100.0;
    const bool ok = std::abs(rounded - r.avg) < 1e-9 &&
                    std::abs(rep.variance * 1e3 - r.var_milli) <= 0.25;
    o.pass = o.pass && ok;
    o.details.push_back(fmt("%-18s avg %.4f (%.2f vs %.2f)  var %.3fe-3 vs %.2fe-3  %s", r.name,
                            rep.average, rounded, r.avg, rep.variance * 1e3, r.var_milli,
                            ok ? "ok" : "MISMATCH"));
  }
  o.summary = fmt("%zu reference rows, avg to 2 decimals, var within 0.25e-3", std::size(rows));
  return o;
}

// 2. EER against the brute-force oracle.
Outcome eer_oracle() {
  Rng rng(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_index(49);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const bool ties = trial % 4 == 0;
    for (auto& s : scores) s = ties ? static_cast<double>(rng.uniform_index(6)) / 5.0 : rng.uniform();
    for (auto& l : labels) l = rng.bernoulli(0.5) ? 1 : 0;
    // Both classes must be present.
    const std::size_t pos = rng.uniform_index(n);
    labels[pos] = 1;
    labels[(pos + 1 + rng.uniform_index(n - 1)) % n] = 0;
    ScoreSet set;
    set.scores = scores;
    set.labels.assign(labels.begin(), labels.end());
    worst = std::max(worst, std::abs(eer(set) - testing::brute_force_eer(scores, labels)));
  }
  return {worst <= 1e-9, fmt("200 random sets, max |eer - oracle| = %.3g (tol 1e-9)", worst), {}};
}

// 3. Feature shape and STFT oracle.
Outcome feature_shape() {
  FeatureExtractor extract;
  Rng rng(3);
  SynthSpec spec;
  spec.class_count = 7;
  std::size_t checked = 0, wrong = 0;
  for (int i = 0; i < 12; ++i) {
    AudioClip clip;
    if (i < 8) {
      clip.samples = synth_clip(spec, rng).samples;
    } else if (i < 11) {
      clip.samples.resize(kClipSamples);
      for (auto& s : clip.samples) s = static_cast<float>(0.3 * rng.normal());
    } else {
      clip.samples.assign(kClipSamples, 0.0f);
    }
    const auto f = extract(clip);
    ++checked;
    if (f.rows() != 124 || f.cols() != 128 || !f.allFinite()) ++wrong;
  }

  AudioClip tone;
  tone.samples.resize(kClipSamples);
  for (std::size_t n = 0; n < kClipSamples; ++n)
    tone.samples[n] = static_cast<float>(std::sin(2.0 * std::numbers::pi * 1000.0 * n / 16000.0));
  const auto spec_power = stft(tone);
  const auto window = hamming_window(kWindowSize);
  double max_diff = 0.0, max_ref = 0.0;
  bool peak_ok = true;
  for (std::size_t t = 0; t < kFrames; ++t) {
    std::vector<double> frame(kWindowSize);
    for (std::size_t k = 0; k < kWindowSize; ++k)
      frame[k] = window[k] * static_cast<double>(tone.samples[t * kHopSize + k]);
    const auto ref = testing::naive_power(frame);
    Eigen::Index peak = 0;
    spec_power.power.row(static_cast<Eigen::Index>(t)).maxCoeff(&peak);
    peak_ok = peak_ok && peak == 64;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      max_ref = std::max(max_ref, ref[k]);
      max_diff = std::max(
          max_diff,
          std::abs(spec_power.power(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) -
                   ref[k]));
    }
  }
  const double rel = max_diff / max_ref;
  return {wrong == 0 && rel <= 1e-6 && peak_ok,
          fmt("%zu clips all 124x128: %s; 1 kHz STFT vs naive DFT rel err %.3g (tol 1e-6), peak bin 64: %s",
              checked, wrong == 0 ? "yes" : "no", rel, peak_ok ? "yes" : "no"),
          {}};
}

// 4. Augmentation algebra.
Batch random_batch(Rng& rng) {
  const std::size_t n = 1 + rng.uniform_index(16);
  const long rows = 1 + static_cast<long>(rng.uniform_index(6));
  const long cols = 1 + static_cast<long>(rng.uniform_index(6));
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    FeatureMatrix f(rows, cols);
    for (long k = 0; k < f.size(); ++k) f.data()[k] = static_cast<float>(5.0 * rng.normal());
    LabelVector y{};
    for (auto& v : y) v = rng.bernoulli(0.35) ? 1.0 : 0.0;
    b.features.push_back(f);
    b.labels.push_back(y);
  }
  return b;
}

Outcome augmentation_algebra() {
  const std::vector<std::string> names = {"none", "mixup", "samplepairing", "mixup_lp",
                                          "extrapolation"};
  Outcome o{true, "", {}};
  Rng meta(44);
  for (const auto& name : names) {
    std::size_t failures = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const Batch batch = random_batch(meta);
      const std::size_t n = batch.size();
      const double alpha = meta.uniform(0.05, 5.0);
      const MixPolicy policy = make_policy(name, alpha);
      const std::uint64_t seed = meta.next_u64();
      Rng rng(seed), again(seed);
      const Batch out = apply_policy(batch, policy, rng);
      bool ok = out.size() == n && out == apply_policy(batch, policy, again);

      // Replay the draws: lambda first (alpha policies), then the partners.
      Rng replay(seed);
      double lam = 0.5;
      if (name == "mixup" || name == "mixup_lp" || name == "extrapolation")
        lam = sample_beta(alpha, replay).value;
      std::vector<std::size_t> partners(n);
      for (std::size_t i = 0; i < n; ++i) partners[i] = i;
      if (name != "none") partners = shuffled_partners(n, replay);
      if (name == "mixup_lp") lam = std::max(lam, 1.0 - lam);

      for (std::size_t i = 0; ok && i < n; ++i) {
        const auto& xi = batch.features[i];
        const auto& xj = batch.features[partners[i]];
        const auto& xn = out.features[i];
        ok = xn.rows() == xi.rows() && xn.cols() == xi.cols();
        for (long k = 0; ok && k < xn.size(); ++k) {
          const double a = xi.data()[k], b = xj.data()[k];
          double expect = a;
          if (name == "mixup" || name == "mixup_lp") expect = lam * a + (1.0 - lam) * b;
          if (name == "samplepairing") expect = 0.5 * a + 0.5 * b;
          if (name == "extrapolation") expect = (1.0 + lam) * a - lam * b;
          ok = std::abs(xn.data()[k] - expect) <= 1e-6 * std::max(1.0, std::abs(expect));
          if (name == "mixup")
            ok = ok && xn.data()[k] >= std::min(xi.data()[k], xj.data()[k]) &&
                 xn.data()[k] <= std::max(xi.data()[k], xj.data()[k]);
        }
        if (name == "mixup") {
          double sn = 0, si = 0, sj = 0;
          for (std::size_t c = 0; c < kNumClasses; ++c) {
            ok = ok && out.labels[i][c] >= 0.0 && out.labels[i][c] <= 1.0;
            sn += out.labels[i][c];
            si += batch.labels[i][c];
            sj += batch.labels[partners[i]][c];
          }
          ok = ok && std::abs(sn - (lam * si + (1.0 - lam) * sj)) <= 1e-12;
        } else {
          ok = ok && out.labels[i] == batch.labels[i];
        }
      }

      // Boundary identities on the deterministic forms.
      const double one[1] = {1.0}, zero[1] = {0.0};
      if (name == "mixup") ok = ok && mixup_with(batch, one, partners) == batch;
      if (name == "mixup_lp") ok = ok && mixup_lp_with(batch, one, partners).features == batch.features;
      if (name == "extrapolation") ok = ok && extrapolate_with(batch, zero, partners) == batch;
      if (name == "samplepairing") {
        std::vector<std::size_t> self(n);
        for (std::size_t i = 0; i < n; ++i) self[i] = i;
        ok = ok && sample_pairing_with(batch, self) == batch;
      }
      if (!ok) ++failures;
    }
    o.pass = o.pass && failures == 0;
    o.details.push_back(fmt("%-14s 1000 randomized checks, %zu failures", name.c_str(), failures));
  }
  o.summary = "5 policies x 1000 randomized property checks";
  return o;
}

// 5. Gradient correctness.
Outcome gradients() {
  nn::GradCheckConfig linear;
  linear.kind = nn::GradCheckConfig::Kind::Linear;
  const double lin = nn::grad_check(linear, 1).max_rel_error;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    worst = std::max(worst, nn::grad_check(nn::GradCheckConfig{}, seed).max_rel_error);
  return {lin < 1e-8 && worst < 1e-4,
          fmt("full model 20 seeds max rel err %.3g (tol 1e-4); linear %.3g (tol 1e-8)", worst, lin),
          {}};
}

// 6. Beta sampler.
Outcome beta_sampler() {
  Rng rng(66);
  std::vector<double> draws(100000);
  for (auto& d : draws) d = sample_beta(1.0, rng).value;
  const double ks = testing::ks_uniform(draws);
  Outcome o{ks < 0.02, "", {}};
  std::string vars;
  for (double alpha : {0.5, 1.5, 5.0}) {
    for (auto& d : draws) d = sample_beta(alpha, rng).value;
    const double var = testing::sample_variance(draws);
    const double expect = 1.0 / (4.0 * (2.0 * alpha + 1.0));
    const double rel = std::abs(var - expect) / expect;
    o.pass = o.pass && rel <= 0.15;
    vars += fmt(" a=%g var %.5f vs %.5f (%.1f%%);", alpha, var, expect, 100.0 * rel);
  }
  o.summary = fmt("KS(alpha=1) %.4f (tol 0.02);", ks) + vars + " tol 15%";
  return o;
}

// 7. Directional experiment on synthetic data.
Outcome directional() {
  const std::uint64_t seeds[] = {1, 2, 3};
  std::vector<double> eer_none, eer_mix, acc_none, acc_mix;
  Outcome o{true, "", {}};
  double slowest = 0.0;
  std::ostringstream table;
  table << "seed,policy,eer_avg,eer_var,pooled_eer,final_train_acc,final_val_loss,epochs,seconds\n";
  for (auto seed : seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = scratch_dir("directional_" + std::to_string(seed));
    SynthSpec spec;
    spec.clip_count = 600;
    spec.class_count = 4;
    synth_dataset(spec, seed, dir.string());
    const FeatureSet data = extract_features(load_manifest((dir / "manifest.csv").string()));
    harness::TrainConfig cfg;
    cfg.blocks = 2;
    cfg.max_epochs = 60;
    cfg.fold_count = 5;
    cfg.seed = seed;
    const FoldSplit split = harness::resolve_folds(cfg, data);
    for (const char* policy : {"none", "mixup"}) {
      harness::TrainConfig c = cfg;
      c.policy = policy;
      c.alpha = c.policy == "mixup" ? 1.5 : 0.0;
      const auto rep = harness::cross_validate(c, data, split);
      double acc = 0.0, val = 0.0;
      std::size_t epochs = 0;
      for (const auto& h : rep.histories) {
        acc += h.epochs.back().train_acc;
        val += h.epochs.back().val_loss;
        epochs += h.epochs.size();
      }
      acc /= static_cast<double>(rep.histories.size());
      val /= static_cast<double>(rep.histories.size());
      (c.policy == "mixup" ? eer_mix : eer_none).push_back(rep.averaged.average);
      (c.policy == "mixup" ? acc_mix : acc_none).push_back(acc);
      o.details.push_back(fmt("seed %llu %-5s EER avg %.4f var %.5f pooled %.4f  final train acc %.4f  val loss %.4f  epochs %zu  %.0fs",
                              static_cast<unsigned long long>(seed), policy, rep.averaged.average,
                              rep.averaged.variance, rep.pooled.average, acc, val, epochs,
                              rep.wall_clock_seconds));
      table << seed << "," << policy << "," << format_real(rep.averaged.average) << ","
            << format_real(rep.averaged.variance) << "," << format_real(rep.pooled.average) << ","
            << format_real(acc) << "," << format_real(val) << "," << epochs << ","
            << fmt("%.1f", rep.wall_clock_seconds) << "\n";
    }
    fs::remove_all(dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    slowest = std::max(slowest, secs);
    o.details.push_back(fmt("seed %llu total %.0fs", static_cast<unsigned long long>(seed), secs));
  }
  csv::write_text("acceptance_directional.csv", table.str());
  const double m_none = median(eer_none), m_mix = median(eer_mix);
  const double a_none = median(acc_none), a_mix = median(acc_mix);
  o.pass = m_mix <= m_none && a_mix < a_none && slowest < 1800.0;
  o.summary = fmt("median EER mixup %.4f <= none %.4f: %s; median final train acc mixup %.4f < none %.4f: %s; slowest seed %.0fs (< 1800s)",
                  m_mix, m_none, m_mix <= m_none ? "yes" : "no", a_mix, a_none,
                  a_mix < a_none ? "yes" : "no", slowest);
  return o;
}

// 8. Two identical sweeps through the CLI.
int run(const std::string& cmd) { return std::system(cmd.c_str()); }

std::string strip_last_column(const std::string& text) {
  std::istringstream in(text);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out += (comma == std::string::npos ? line : line.substr(0, comma)) + "\n";
  }
  return out;
}

Outcome reproducibility() {
  const std::string cli = MIXTAG_CLI_PATH;
  const fs::path dir = scratch_dir("sweep");
  const std::string log = " >> \"" + (dir / "log.txt").string() + "\" 2>&1";
  const auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
  Outcome o{false, "", {}};
  if (run(q(cli) + " synth-data --out " + q(dir / "data") + " --clips 120 --seed 8 --classes 4" + log) != 0 ||
      run(q(cli) + " extract --manifest " + q(dir / "data" / "manifest.csv") + " --out " +
          q(dir / "features.mtft") + log) != 0) {
    o.summary = "dataset preparation failed";
    return o;
  }
  csv::write_text((dir / "sweep.cfg").string(),
                  "features = " + (dir / "features.mtft").string() + "\n" +
                      "output = " + (dir / "out").string() + "\n"
                      "policy = mixup\nblocks = 2\nmax_epochs = 3\nfold_count = 3\nseed = 11\n");
  std::vector<std::string> texts;
  for (const char* name : {"first.csv", "second.csv"}) {
    const int rc = run(q(cli) + " sweep --config " + q(dir / "sweep.cfg") +
                       " --alphas 0,1.5 --out " + q(dir / name) + log);
    if (rc != 0) {
      o.summary = fmt("sweep exited with status %d", rc);
      return o;
    }
    texts.push_back(csv::read_text((dir / name).string()));
  }
  const auto a = strip_last_column(texts[0]), b = strip_last_column(texts[1]);
  const auto rows = harness::parse_sweep_csv(texts[0]).size();
  o.pass = a == b && rows == 2 && texts[0] != "";
  o.summary = fmt("2 sweep runs, %zu rows each, identical without wall_clock_s: %s", rows,
                  a == b ? "yes" : "no");
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"table arithmetic", table_arithmetic},
      {"EER oracle equivalence", eer_oracle},
      {"feature shape and STFT oracle", feature_shape},
      {"augmentation algebra", augmentation_algebra},
      {"gradient correctness", gradients},
      {"Beta sampler distribution", beta_sampler},
      {"directional mixup experiment", directional},
      {"end-to-end reproducibility", reproducibility},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), {}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s -- %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL",
                criteria[i].first, o.summary.c_str(), secs);
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
