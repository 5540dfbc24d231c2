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

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixtag/binary_io.hpp"
#include "mixtag/dataset.hpp"
#include "mixtag/dsp.hpp"
#include "mixtag/nn/adam.hpp"
#include "mixtag/nn/model.hpp"

namespace mixtag::nn {

inline constexpr char kModelMagic[4] = {'M', 'T', 'M', 'D'};
inline constexpr std::uint32_t kModelVersion = 1;

/// A trained model plus optional Adam state (for resuming) and the feature
/// normalization statistics it was trained with.
struct Checkpoint {
  ModelParams<float> params;
  std::optional<AdamState<float>> adam;
  std::optional<FeatureStats> stats;
};

namespace detail {

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

inline std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ck) {
  std::vector<NamedTensor> out;
  ck.params.for_each_tensor(
      [&](const std::string& n, const Tensor<float>& t) { out.push_back({"param/" + n, t}); });
  if (ck.adam) {
    ck.adam->m.for_each_trainable(
        [&](const std::string& n, const Tensor<float>& t) { out.push_back({"adam.m/" + n, t}); });
    ck.adam->v.for_each_trainable(
        [&](const std::string& n, const Tensor<float>& t) { out.push_back({"adam.v/" + n, t}); });
  }
  if (ck.stats) {
    const auto to_tensor = [](const std::vector<double>& v) {
      Tensor<float> t({v.size()});
      for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
      return t;
    };
    out.push_back({"stats/mean", to_tensor(ck.stats->mean)});
    out.push_back({"stats/std", to_tensor(ck.stats->std)});
  }
  return out;
}

}  // namespace detail

/// Layout: "MTMD", version, model config, Adam step, shape table (count,
/// then name/rank/dims per tensor), then every tensor's f32 values in table
/// order. All integers and reals little-endian.
inline std::string encode_checkpoint(const Checkpoint& ck) {
  binary::Writer w;
  w.bytes(std::string_view(kModelMagic, 4));
  w.u32(kModelVersion);
  const auto& cfg = ck.params.config;
  w.u32(static_cast<std::uint32_t>(cfg.freq_bins));
  w.u32(static_cast<std::uint32_t>(cfg.block_count()));
  w.u32(static_cast<std::uint32_t>(cfg.classes));
  w.u32(cfg.batch_norm ? 1 : 0);
  w.f32(static_cast<float>(cfg.dropout));
  w.f32(static_cast<float>(cfg.bn_eps));
  w.f32(static_cast<float>(cfg.bn_momentum));
  w.u64(ck.adam ? ck.adam->step : 0);

  const auto tensors = detail::checkpoint_tensors(ck);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    w.str(nt.name);
    w.u32(static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape) w.u32(static_cast<std::uint32_t>(d));
  }
  for (const auto& nt : tensors)
    for (float v : nt.tensor.data) w.f32(v);
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  binary::Reader r(bytes);
  if (r.bytes(4) != std::string_view(kModelMagic, 4))
    throw Error(ErrorKind::FormatMismatch, "not an MTMD checkpoint");
  if (const auto v = r.u32(); v != kModelVersion)
    throw Error(ErrorKind::FormatMismatch, "unsupported MTMD version " + std::to_string(v));
  ModelConfig cfg;
  cfg.freq_bins = r.u32();
  cfg.blocks = r.u32();
  cfg.classes = r.u32();
  cfg.batch_norm = r.u32() != 0;
  cfg.dropout = r.f32();
  cfg.bn_eps = r.f32();
  cfg.bn_momentum = r.f32();
  const std::uint64_t step = r.u64();

  std::vector<std::pair<std::string, std::vector<std::size_t>>> table(r.u32());
  for (auto& [name, shape] : table) {
    name = r.str();
    shape.resize(r.u32());
    for (auto& d : shape) d = r.u32();
  }
  std::map<std::string, Tensor<float>> found;
  for (const auto& [name, shape] : table) {
    Tensor<float> t(shape);
    for (auto& v : t.data) v = r.f32();
    found[name] = std::move(t);
  }
  if (!r.at_end()) throw Error(ErrorKind::FormatMismatch, "trailing bytes in checkpoint");

  auto take = [&](const std::string& name, Tensor<float>& dst) {
    auto it = found.find(name);
    if (it == found.end())
      throw Error(ErrorKind::FormatMismatch, "checkpoint lacks tensor '" + name + "'");
    require_shape(it->second.shape, dst.shape, "checkpoint tensor " + name);
    dst = std::move(it->second);
  };

  Rng unused(0);
  Checkpoint ck;
  ck.params = zeros_like(init_params<float>(cfg, unused));
  ck.params.for_each_tensor([&](const std::string& n, Tensor<float>& t) { take("param/" + n, t); });
  if (found.contains("adam.m/attention.w")) {
    AdamState<float> adam = make_adam_state(ck.params);
    adam.step = step;
    adam.m.for_each_trainable([&](const std::string& n, Tensor<float>& t) { take("adam.m/" + n, t); });
    adam.v.for_each_trainable([&](const std::string& n, Tensor<float>& t) { take("adam.v/" + n, t); });
    ck.adam = std::move(adam);
  }
  if (found.contains("stats/mean")) {
    FeatureStats s;
    for (float v : found["stats/mean"].data) s.mean.push_back(v);
    for (float v : found["stats/std"].data) s.std.push_back(v);
    ck.stats = std::move(s);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  csv::write_text(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(csv::read_text(path));
}

}  // namespace mixtag::nn
