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

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mixtag/augment.hpp"
#include "mixtag/dataset.hpp"
#include "mixtag/error.hpp"

namespace mixtag::harness {

struct TrainConfig {
  std::string features;  // MTFT container of raw log-mel features
  std::string folds;     // optional `chunk_id,fold` CSV; empty = auto folds
  std::string output = "out";
  int fold_count = 5;
  std::string policy = "none";
  double alpha = 0.0;
  std::vector<double> alpha_grid = {0.0, 0.1, 0.5, 1.0, 1.5, 2.0, 5.0};
  bool per_example_lambda = false;
  std::uint64_t seed = 0;
  std::size_t batch_size = 44;
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  double learning_rate = 1e-3;
  std::size_t blocks = 0;  // 0 derives the depth from the feature width
  double dropout = 0.1;
  std::size_t eval_batch_size = 64;

  MixPolicy mix_policy() const { return make_policy(policy, alpha); }

  void validate() const {
    if (batch_size < 2) throw Error(ErrorKind::ConfigError, "batch_size must be >= 2");
    if (patience < 1) throw Error(ErrorKind::ConfigError, "patience must be >= 1");
    if (max_epochs < 1) throw Error(ErrorKind::ConfigError, "max_epochs must be >= 1");
    if (fold_count < 2) throw Error(ErrorKind::ConfigError, "fold_count must be >= 2");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::ConfigError, "learning_rate must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw Error(ErrorKind::ConfigError, "dropout must be in [0, 1)");
    if (eval_batch_size < 1) throw Error(ErrorKind::ConfigError, "eval_batch_size must be >= 1");
    try {
      (void)mix_policy();
    } catch (const Error& e) {
      throw Error(ErrorKind::ConfigError, e.what());
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof())
    throw Error(ErrorKind::ConfigError, "bad value '" + value + "' for '" + key + "'");
  if constexpr (std::is_unsigned_v<T>)
    if (!value.empty() && value[0] == '-')
      throw Error(ErrorKind::ConfigError, "'" + key + "' must be non-negative");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error(ErrorKind::ConfigError, "bad boolean '" + value + "' for '" + key + "'");
}

}  // namespace detail

inline std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& field : csv::split_line(text)) {
    const auto v = detail::trim(field);
    if (v.empty()) continue;
    out.push_back(detail::parse_number<double>("alphas", v));
  }
  if (out.empty()) throw Error(ErrorKind::ConfigError, "alpha list is empty");
  return out;
}

/// Applies one `key = value` setting; unknown keys are errors.
inline void set_option(TrainConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "features") c.features = value;
  else if (key == "folds") c.folds = value;
  else if (key == "output") c.output = value;
  else if (key == "fold_count") c.fold_count = parse_number<int>(key, value);
  else if (key == "policy") c.policy = value;
  else if (key == "alpha") c.alpha = parse_number<double>(key, value);
  else if (key == "alpha_grid") c.alpha_grid = parse_alpha_list(value);
  else if (key == "per_example_lambda") c.per_example_lambda = detail::parse_bool(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
  else if (key == "patience") c.patience = parse_number<std::size_t>(key, value);
  else if (key == "max_epochs") c.max_epochs = parse_number<std::size_t>(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
  else if (key == "blocks") c.blocks = parse_number<std::size_t>(key, value);
  else if (key == "dropout") c.dropout = parse_number<double>(key, value);
  else if (key == "eval_batch_size") c.eval_batch_size = parse_number<std::size_t>(key, value);
  else throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");
}

/// Flat `key = value` text; `#` starts a comment.
inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::size_t line_no = 0;
  for (const auto& raw : csv::lines(text)) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    set_option(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = csv::read_text(path);
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  return parse_config(text);
}

inline std::string serialize_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "features = " << c.features << "\n"
      << "folds = " << c.folds << "\n"
      << "output = " << c.output << "\n"
      << "fold_count = " << c.fold_count << "\n"
      << "policy = " << c.policy << "\n"
      << "alpha = " << c.alpha << "\n"
      << "alpha_grid = ";
  for (std::size_t i = 0; i < c.alpha_grid.size(); ++i)
    out << (i ? "," : "") << c.alpha_grid[i];
  out << "\n"
      << "per_example_lambda = " << (c.per_example_lambda ? "true" : "false") << "\n"
      << "seed = " << c.seed << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "patience = " << c.patience << "\n"
      << "max_epochs = " << c.max_epochs << "\n"
      << "learning_rate = " << c.learning_rate << "\n"
      << "blocks = " << c.blocks << "\n"
      << "dropout = " << c.dropout << "\n"
      << "eval_batch_size = " << c.eval_batch_size << "\n";
  return out.str();
}

}  // namespace mixtag::harness
