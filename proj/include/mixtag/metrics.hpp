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
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixtag/dataset.hpp"
#include "mixtag/error.hpp"
#include "mixtag/labels.hpp"

namespace mixtag {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 positive, 0 negative
};

/// Operating point for the rule "predict positive when score >= threshold".
struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
};

/// One point per distinct score plus the -inf and +inf sentinels, in
/// ascending threshold order (FPR non-increasing, FNR non-decreasing).
inline std::vector<RocPoint> roc_points(const ScoreSet& s) {
  if (s.scores.size() != s.labels.size())
    throw Error(ErrorKind::ShapeError, "scores and labels differ in length");
  const auto positives = static_cast<std::size_t>(
      std::count_if(s.labels.begin(), s.labels.end(), [](int y) { return y != 0; }));
  const std::size_t negatives = s.labels.size() - positives;
  if (positives == 0 || negatives == 0)
    throw Error(ErrorKind::DegenerateClass, "EER needs at least one positive and one negative");
  for (double v : s.scores)
    if (std::isnan(v)) throw Error(ErrorKind::BadRange, "NaN score");

  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  const double inf = std::numeric_limits<double>::infinity();
  const double np = static_cast<double>(positives), nn = static_cast<double>(negatives);
  std::vector<RocPoint> points{{-inf, 1.0, 0.0}};
  // Counts of examples strictly below the current threshold.
  std::size_t pos_below = 0, neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = s.scores[order[i]];
    points.push_back({thr, (nn - neg_below) / nn, pos_below / np});
    for (; i < order.size() && s.scores[order[i]] == thr; ++i)
      (s.labels[order[i]] ? pos_below : neg_below)++;
  }
  points.push_back({inf, 0.0, 1.0});
  return points;
}

/// Equal error rate: where the ROC polyline crosses FPR == FNR, linearly
/// interpolated between the two bracketing points.
inline double eer(const ScoreSet& s) {
  const auto pts = roc_points(s);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double d0 = pts[k].fpr - pts[k].fnr;
    const double d1 = pts[k + 1].fpr - pts[k + 1].fnr;
    if (d0 == 0.0) return pts[k].fpr;
    if (d0 > 0.0 && d1 <= 0.0) {
      if (d1 == 0.0) return pts[k + 1].fpr;
      const double t = d0 / (d0 - d1);
      return pts[k].fpr + t * (pts[k + 1].fpr - pts[k].fpr);
    }
  }
  return pts.back().fpr;  // unreachable: the sentinels bracket a crossing
}

/// Per-class EERs with their mean and cross-class sample variance. Classes
/// skipped as degenerate hold NaN and are left out of both statistics.
struct EerReport {
  std::array<double, kNumClasses> per_class{};
  double average = 0.0;
  double variance = 0.0;
  std::vector<std::string> warnings;

  bool has(std::size_t c) const { return !std::isnan(per_class[c]); }
};

/// Aggregates per-class EERs; NaN entries are ignored. Variance divides by
/// (valid classes - 1), and is 0 with fewer than two valid classes.
inline EerReport make_report(std::span<const double> per_class) {
  if (per_class.size() != kNumClasses)
    throw Error(ErrorKind::ShapeError, "expected 7 per-class values");
  EerReport r;
  std::vector<double> valid;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    r.per_class[c] = per_class[c];
    if (!std::isnan(per_class[c])) valid.push_back(per_class[c]);
  }
  if (valid.empty()) {
    r.average = std::numeric_limits<double>::quiet_NaN();
    r.variance = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.average = std::accumulate(valid.begin(), valid.end(), 0.0) / static_cast<double>(valid.size());
  double ss = 0.0;
  for (double v : valid) ss += (v - r.average) * (v - r.average);
  r.variance = valid.size() > 1 ? ss / static_cast<double>(valid.size() - 1) : 0.0;
  return r;
}

enum class DegeneratePolicy { Throw, Skip };

/// scores, labels: N x 7 row-major. With DegeneratePolicy::Throw a class
/// lacking positives or negatives raises DegenerateClass naming the class;
/// with Skip it becomes NaN plus a warning.
inline EerReport per_class_report(std::span<const double> scores, std::span<const double> labels,
                                  DegeneratePolicy policy = DegeneratePolicy::Throw) {
  if (scores.size() != labels.size() || scores.size() % kNumClasses != 0)
    throw Error(ErrorKind::ShapeError, "scores and labels must both be N x 7");
  const std::size_t n = scores.size() / kNumClasses;
  std::array<double, kNumClasses> values{};
  std::vector<std::string> warnings;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    ScoreSet set;
    for (std::size_t i = 0; i < n; ++i) {
      set.scores.push_back(scores[i * kNumClasses + c]);
      set.labels.push_back(labels[i * kNumClasses + c] >= 0.5 ? 1 : 0);
    }
    try {
      values[c] = eer(set);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateClass || policy == DegeneratePolicy::Throw)
        throw Error(e.kind(), std::string("class '") + kClassTags[c] + "': " + e.what());
      values[c] = std::numeric_limits<double>::quiet_NaN();
      warnings.push_back(std::string("class '") + kClassTags[c] +
                         "' skipped: needs both positives and negatives");
    }
  }
  EerReport r = make_report(values);
  r.warnings = std::move(warnings);
  return r;
}

/// Entry-wise mean of several reports; a class is averaged over the reports
/// where it is valid.
inline EerReport average_reports(std::span<const EerReport> reports) {
  if (reports.empty()) throw Error(ErrorKind::EmptyInput, "no reports to average");
  EerReport out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : reports)
      if (r.has(c)) {
        sum += r.per_class[c];
        ++n;
      }
    out.per_class[c] = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  }
  double avg = 0.0, var = 0.0;
  for (const auto& r : reports) {
    avg += r.average;
    var += r.variance;
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  out.average = avg / static_cast<double>(reports.size());
  out.variance = var / static_cast<double>(reports.size());
  return out;
}

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8f", v);
  return buf;
}

inline double parse_real(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::ParseError, "bad number '" + s + "'");
}

/// `class,eer` rows for each class, then `avg` and `var` footer rows.
inline std::string report_csv(const EerReport& r) {
  std::string out = "class,eer\n";
  for (std::size_t c = 0; c < kNumClasses; ++c)
    out += std::string(1, kClassTags[c]) + "," + format_real(r.per_class[c]) + "\n";
  out += "avg," + format_real(r.average) + "\n";
  out += "var," + format_real(r.variance) + "\n";
  return out;
}

inline EerReport parse_report_csv(std::string_view text) {
  const auto rows = csv::lines(text);
  if (rows.empty() || rows[0] != "class,eer")
    throw Error(ErrorKind::ParseError, "expected header 'class,eer'");
  EerReport r;
  r.per_class.fill(std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    const auto f = csv::split_line(rows[i]);
    if (f.size() != 2) throw Error(ErrorKind::ParseError, "bad report row '" + rows[i] + "'");
    if (f[0] == "avg")
      r.average = parse_real(f[1]);
    else if (f[0] == "var")
      r.variance = parse_real(f[1]);
    else if (f[0].size() == 1 && class_index(f[0][0]) >= 0)
      r.per_class[class_index(f[0][0])] = parse_real(f[1]);
    else
      throw Error(ErrorKind::ParseError, "unknown report key '" + f[0] + "'");
  }
  return r;
}

inline std::string summary_line(const EerReport& r) {
  return "EER_AVG=" + format_real(r.average) + " EER_VAR=" + format_real(r.variance);
}

}  // namespace mixtag
