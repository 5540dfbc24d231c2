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
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mixtag/error.hpp"
#include "mixtag/labels.hpp"
#include "mixtag/rng.hpp"
#include "mixtag/wav.hpp"

namespace mixtag {

struct ManifestEntry {
  std::string chunk_id;
  std::string audio_path;
  LabelVector labels{};

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> class_names = {"c", "m", "f", "v", "p", "b", "o"};

  bool operator==(const DatasetManifest&) const = default;
};

struct FoldSplit {
  int fold_count = 5;
  std::map<std::string, int> assignments;

  bool operator==(const FoldSplit&) const = default;

  int fold_of(const std::string& chunk_id) const {
    auto it = assignments.find(chunk_id);
    if (it == assignments.end())
      throw Error(ErrorKind::ParseError, "chunk '" + chunk_id + "' has no fold");
    return it->second;
  }
};

namespace csv {

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

/// Splits text into lines, dropping '\r' and a trailing empty line.
inline std::vector<std::string> lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    start = end + 1;
  }
  return out;
}

inline std::string read_text(const std::string& path) {
  return detail::read_file_bytes(path);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

}  // namespace csv

/// Parses `chunk_id,path,labels` CSV text. Line numbers in errors are 1-based
/// and count the header.
inline DatasetManifest parse_manifest(std::string_view csv_text) {
  const auto rows = csv::lines(csv_text);
  if (rows.empty() || rows[0] != "chunk_id,path,labels")
    throw Error(ErrorKind::ParseError, "line 1: expected header 'chunk_id,path,labels'");

  DatasetManifest manifest;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (rows[i].empty()) continue;
    const auto fields = csv::split_line(rows[i]);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) +
                                             ": expected 'chunk_id,path,labels'");
    ManifestEntry entry{fields[0], fields[1], {}};
    for (char ch : fields[2]) {
      if (class_index(ch) < 0)
        throw Error(ErrorKind::BadLabel, "row " + std::to_string(line_no) +
                                             ": unknown label character '" + ch + "'");
    }
    entry.labels = encode_labels(fields[2]);
    if (!seen.insert(entry.chunk_id).second)
      throw Error(ErrorKind::DuplicateId, "line " + std::to_string(line_no) +
                                              ": duplicate chunk_id '" +
                                              entry.chunk_id + "'");
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

inline std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out = "chunk_id,path,labels\n";
  for (const auto& e : manifest.entries)
    out += e.chunk_id + "," + e.audio_path + "," + decode_labels(e.labels) + "\n";
  return out;
}

/// Loads a manifest file; relative audio paths are resolved against the
/// manifest's directory and checked for existence.
inline DatasetManifest load_manifest(const std::string& path) {
  DatasetManifest manifest = parse_manifest(csv::read_text(path));
  const auto base = std::filesystem::path(path).parent_path();
  for (auto& e : manifest.entries) {
    std::filesystem::path p(e.audio_path);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p))
      throw Error(ErrorKind::IoError, "audio file '" + p.string() + "' for chunk '" +
                                          e.chunk_id + "' does not exist");
    e.audio_path = p.string();
  }
  return manifest;
}

/// Shuffled round-robin fold assignment; fold sizes differ by at most one.
inline FoldSplit make_folds(const DatasetManifest& manifest, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::BadSize, "fold count must be >= 2");
  if (manifest.entries.empty())
    throw Error(ErrorKind::EmptyInput, "cannot split an empty manifest");
  if (static_cast<std::size_t>(k) > manifest.entries.size())
    throw Error(ErrorKind::TooFewItems,
                std::to_string(manifest.entries.size()) + " entries cannot fill " +
                    std::to_string(k) + " folds");
  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, stream::kFolds));
  rng.shuffle(std::span<std::size_t>(order));

  FoldSplit split;
  split.fold_count = k;
  for (std::size_t i = 0; i < order.size(); ++i)
    split.assignments[manifest.entries[order[i]].chunk_id] = static_cast<int>(i % k);
  return split;
}

/// Parses a `chunk_id,fold` CSV verbatim. The fold count is one more than the
/// largest fold index present.
inline FoldSplit parse_folds(std::string_view csv_text) {
  const auto rows = csv::lines(csv_text);
  if (rows.empty() || rows[0] != "chunk_id,fold")
    throw Error(ErrorKind::ParseError, "line 1: expected header 'chunk_id,fold'");
  FoldSplit split;
  int max_fold = -1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    const auto fields = csv::split_line(rows[i]);
    const std::string where = "line " + std::to_string(i + 1);
    if (fields.size() != 2 || fields[0].empty())
      throw Error(ErrorKind::ParseError, where + ": expected 'chunk_id,fold'");
    int fold = 0;
    try {
      std::size_t used = 0;
      fold = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::ParseError, where + ": bad fold index '" + fields[1] + "'");
    }
    if (fold < 0) throw Error(ErrorKind::ParseError, where + ": negative fold index");
    if (!split.assignments.emplace(fields[0], fold).second)
      throw Error(ErrorKind::DuplicateId, where + ": duplicate chunk_id '" + fields[0] + "'");
    max_fold = std::max(max_fold, fold);
  }
  split.fold_count = max_fold + 1;
  return split;
}

inline std::string serialize_folds(const FoldSplit& split) {
  std::string out = "chunk_id,fold\n";
  for (const auto& [id, fold] : split.assignments)
    out += id + "," + std::to_string(fold) + "\n";
  return out;
}

/// Throws unless every manifest entry has exactly one fold in range and the
/// split names no unknown chunks.
inline void validate_folds(const DatasetManifest& manifest, const FoldSplit& split) {
  if (split.fold_count < 2) throw Error(ErrorKind::BadSize, "fold count must be >= 2");
  std::set<std::string> ids;
  for (const auto& e : manifest.entries) {
    ids.insert(e.chunk_id);
    const int f = split.fold_of(e.chunk_id);
    if (f < 0 || f >= split.fold_count)
      throw Error(ErrorKind::ParseError, "chunk '" + e.chunk_id + "' has fold out of range");
  }
  for (const auto& [id, fold] : split.assignments)
    if (!ids.contains(id))
      throw Error(ErrorKind::ParseError, "fold file names unknown chunk '" + id + "'");
}

}  // namespace mixtag
