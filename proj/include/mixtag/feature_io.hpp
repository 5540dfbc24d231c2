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

#include <string>
#include <vector>

#include "mixtag/binary_io.hpp"
#include "mixtag/dataset.hpp"
#include "mixtag/dsp.hpp"
#include "mixtag/labels.hpp"

namespace mixtag {

inline constexpr char kFeatureMagic[4] = {'M', 'T', 'F', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Labeled features aligned by index, as stored in an MTFT container.
struct FeatureSet {
  std::vector<std::string> ids;
  std::vector<LabelVector> labels;
  std::vector<FeatureMatrix> features;

  std::size_t size() const { return ids.size(); }
};

/// Layout: "MTFT", version, count, frames, bins (u32 LE), then per record a
/// u32-length-prefixed UTF-8 id, 7 f32 labels and frames*bins f32 values in
/// time-major order.
inline std::string encode_features(const FeatureSet& set) {
  if (set.labels.size() != set.size() || set.features.size() != set.size())
    throw Error(ErrorKind::ShapeError, "feature set columns are misaligned");
  const std::uint32_t frames = set.features.empty() ? kFrames : set.features[0].rows();
  const std::uint32_t bins = set.features.empty() ? kMelBins : set.features[0].cols();
  binary::Writer w;
  w.bytes(std::string_view(kFeatureMagic, 4));
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(frames);
  w.u32(bins);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& f = set.features[i];
    if (f.rows() != frames || f.cols() != bins)
      throw Error(ErrorKind::ShapeError, "record '" + set.ids[i] + "' has a different shape");
    w.str(set.ids[i]);
    for (double v : set.labels[i]) w.f32(static_cast<float>(v));
    for (Eigen::Index k = 0; k < f.size(); ++k) w.f32(f.data()[k]);
  }
  return w.take();
}

inline FeatureSet decode_features(std::string_view bytes) {
  binary::Reader r(bytes);
  if (r.bytes(4) != std::string_view(kFeatureMagic, 4))
    throw Error(ErrorKind::FormatMismatch, "not an MTFT feature container");
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion)
    throw Error(ErrorKind::FormatMismatch, "unsupported MTFT version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t frames = r.u32();
  const std::uint32_t bins = r.u32();
  FeatureSet set;
  for (std::uint32_t i = 0; i < count; ++i) {
    set.ids.push_back(r.str());
    LabelVector y{};
    for (auto& v : y) v = r.f32();
    set.labels.push_back(y);
    FeatureMatrix f(frames, bins);
    for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = r.f32();
    set.features.push_back(std::move(f));
  }
  if (!r.at_end()) throw Error(ErrorKind::FormatMismatch, "trailing bytes after MTFT records");
  return set;
}

inline void save_features(const std::string& path, const FeatureSet& set) {
  csv::write_text(path, encode_features(set));
}

inline FeatureSet load_features(const std::string& path) {
  return decode_features(csv::read_text(path));
}

/// Reads every manifest clip and converts it to a raw (unnormalized) log-mel
/// feature. Per-clip output does not depend on processing order.
inline FeatureSet extract_features(const DatasetManifest& manifest) {
  FeatureExtractor extract;
  FeatureSet set;
  for (const auto& e : manifest.entries) {
    set.ids.push_back(e.chunk_id);
    set.labels.push_back(e.labels);
    set.features.push_back(extract(read_wav(e.audio_path)));
  }
  return set;
}

}  // namespace mixtag
