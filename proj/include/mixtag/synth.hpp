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
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "mixtag/dataset.hpp"
#include "mixtag/rng.hpp"
#include "mixtag/wav.hpp"

namespace mixtag {

enum class EventKind { Tone, NoiseBand, Chirp };

/// One class's sound event: a sinusoid burst with frequency drawn from the
/// band, band-limited noise, or a linear chirp sweeping f_lo -> f_hi.
struct EventGenerator {
  EventKind kind = EventKind::Tone;
  double f_lo = 0.0;
  double f_hi = 0.0;
};

/// Class events live in disjoint frequency bands so a small model can learn
/// them quickly.
inline std::vector<EventGenerator> default_generators() {
  return {
      {EventKind::Tone, 300.0, 600.0},
      {EventKind::NoiseBand, 900.0, 1500.0},
      {EventKind::Chirp, 1800.0, 3000.0},
      {EventKind::Tone, 3400.0, 4400.0},
      {EventKind::NoiseBand, 5000.0, 6200.0},
      {EventKind::Chirp, 6600.0, 7600.0},
      {EventKind::Tone, 120.0, 220.0},
  };
}

struct SynthSpec {
  std::size_t clip_count = 100;
  std::size_t class_count = 4;
  std::vector<EventGenerator> generators = default_generators();
  // Every clip has one event; each further event (up to max_events, distinct
  // classes) is added with extra_event_probability.
  int max_events = 3;
  double extra_event_probability = 0.35;
  double min_event_seconds = 0.3;
  double max_event_seconds = 1.5;
  double min_amplitude = 0.02;
  double max_amplitude = 0.25;
  double noise_level = 0.02;
};

struct SynthClip {
  std::vector<float> samples;
  LabelVector labels{};
};

namespace detail {

inline void add_event(std::vector<double>& mix, const EventGenerator& gen, Rng& rng,
                      const SynthSpec& spec) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double fs = kSampleRate;
  const double seconds = rng.uniform(spec.min_event_seconds, spec.max_event_seconds);
  const auto length = static_cast<std::size_t>(seconds * fs);
  const auto onset = rng.uniform_index(kClipSamples - length + 1);
  const double amplitude = rng.uniform(spec.min_amplitude, spec.max_amplitude);
  const auto ramp = static_cast<std::size_t>(0.02 * fs);

  constexpr int kNoiseComponents = 24;
  std::vector<double> freqs, phases;
  double tone_freq = rng.uniform(gen.f_lo, gen.f_hi);
  double tone_phase = rng.uniform(0.0, two_pi);
  if (gen.kind == EventKind::NoiseBand) {
    for (int i = 0; i < kNoiseComponents; ++i) {
      freqs.push_back(rng.uniform(gen.f_lo, gen.f_hi));
      phases.push_back(rng.uniform(0.0, two_pi));
    }
  }
  const double sweep_rate = (gen.f_hi - gen.f_lo) / seconds;

  for (std::size_t n = 0; n < length; ++n) {
    const double t = static_cast<double>(n) / fs;
    double env = 1.0;
    if (n < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * n / ramp);
    if (length - n <= ramp)
      env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (length - n) / ramp));
    double v = 0.0;
    switch (gen.kind) {
      case EventKind::Tone:
        v = std::sin(two_pi * tone_freq * t + tone_phase);
        break;
      case EventKind::NoiseBand:
        for (int i = 0; i < kNoiseComponents; ++i)
          v += std::sin(two_pi * freqs[i] * t + phases[i]);
        v /= std::sqrt(kNoiseComponents / 2.0);
        break;
      case EventKind::Chirp:
        v = std::sin(two_pi * (gen.f_lo * t + 0.5 * sweep_rate * t * t) + tone_phase);
        break;
    }
    mix[onset + n] += amplitude * env * v;
  }
}

}  // namespace detail

/// Generates one clip from its own seeded stream.
inline SynthClip synth_clip(const SynthSpec& spec, Rng& rng) {
  std::vector<double> mix(kClipSamples);
  for (auto& x : mix) x = spec.noise_level * rng.normal();

  std::vector<std::size_t> classes(spec.class_count);
  for (std::size_t c = 0; c < classes.size(); ++c) classes[c] = c;
  rng.shuffle(std::span<std::size_t>(classes));
  const int cap = std::min<int>(spec.max_events, static_cast<int>(spec.class_count));
  int n_events = 1;
  while (n_events < cap && rng.bernoulli(spec.extra_event_probability)) ++n_events;

  SynthClip clip;
  for (int e = 0; e < n_events; ++e) {
    const std::size_t c = classes[e];
    detail::add_event(mix, spec.generators[c], rng, spec);
    clip.labels[c] = 1.0;
  }
  clip.samples.resize(kClipSamples);
  for (std::size_t n = 0; n < kClipSamples; ++n)
    clip.samples[n] = static_cast<float>(std::clamp(mix[n], -1.0, 32767.0 / 32768.0));
  return clip;
}

/// Writes `clips/synth_NNNNN.wav` files and `manifest.csv` under out_dir and
/// returns the manifest (paths relative to out_dir).
inline DatasetManifest synth_dataset(const SynthSpec& spec, std::uint64_t seed,
                                     const std::string& out_dir) {
  if (spec.class_count == 0 || spec.class_count > kNumClasses ||
      spec.generators.size() < spec.class_count)
    throw Error(ErrorKind::BadSize, "class count must be in [1, 7] with a generator each");
  if (spec.max_events < 1) throw Error(ErrorKind::BadSize, "max_events must be >= 1");
  if (spec.max_event_seconds * kSampleRate > kClipSamples ||
      spec.min_event_seconds <= 0.0 || spec.min_event_seconds > spec.max_event_seconds)
    throw Error(ErrorKind::BadRange, "event duration range does not fit a 4 s clip");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "clips", ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create '" + out_dir + "': " + ec.message());

  DatasetManifest manifest;
  for (std::size_t i = 0; i < spec.clip_count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    Rng rng(derive_seed(derive_seed(seed, stream::kSynth), i));
    const SynthClip clip = synth_clip(spec, rng);
    const std::string rel = std::string("clips/") + id + ".wav";
    write_wav((fs::path(out_dir) / rel).string(), clip.samples);
    manifest.entries.push_back({id, rel, clip.labels});
  }
  csv::write_text((fs::path(out_dir) / "manifest.csv").string(), serialize_manifest(manifest));
  return manifest;
}

}  // namespace mixtag
