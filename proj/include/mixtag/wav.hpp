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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mixtag/error.hpp"

namespace mixtag {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kClipSamples = 64000;  // 4 s at 16 kHz

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::IoError, "read failed for '" + path + "'");
  return bytes;
}

}  // namespace detail

/// Decodes PCM16 mono 16 kHz samples from an in-memory RIFF/WAVE image,
/// without any length normalization.
inline std::vector<float> decode_wav_pcm16(const std::string& bytes,
                                           const std::string& name = "<memory>") {
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 ||
      std::memcmp(data + 8, "WAVE", 4) != 0)
    throw Error(ErrorKind::FormatMismatch, name + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const std::uint32_t chunk_size = detail::read_u32le(data + pos + 4);
    const unsigned char* body = data + pos + 8;
    const std::size_t available = size - pos - 8;
    if (std::memcmp(data + pos, "fmt ", 4) == 0) {
      if (chunk_size < 16 || available < 16)
        throw Error(ErrorKind::FormatMismatch, name + ": truncated fmt chunk");
      const std::uint16_t format = detail::read_u16le(body);
      const std::uint16_t channels = detail::read_u16le(body + 2);
      const std::uint32_t rate = detail::read_u32le(body + 4);
      const std::uint16_t bits = detail::read_u16le(body + 14);
      bool pcm = format == 1;
      // WAVE_FORMAT_EXTENSIBLE: the subformat GUID starts with the format tag.
      if (format == 0xFFFE && chunk_size >= 40 && available >= 40)
        pcm = detail::read_u16le(body + 24) == 1;
      if (!pcm || bits != 16)
        throw Error(ErrorKind::FormatMismatch, name + ": encoding is not PCM16");
      if (channels != 1)
        throw Error(ErrorKind::FormatMismatch,
                    name + ": expected 1 channel, got " + std::to_string(channels));
      if (rate != static_cast<std::uint32_t>(kSampleRate))
        throw Error(ErrorKind::FormatMismatch,
                    name + ": expected 16000 Hz, got " + std::to_string(rate));
      have_fmt = true;
    } else if (std::memcmp(data + pos, "data", 4) == 0) {
      if (!have_fmt)
        throw Error(ErrorKind::FormatMismatch, name + ": data chunk before fmt");
      const std::size_t n_bytes = std::min<std::size_t>(chunk_size, available);
      std::vector<float> samples(n_bytes / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto s = static_cast<std::int16_t>(detail::read_u16le(body + 2 * i));
        samples[i] = static_cast<float>(s) / 32768.0f;
      }
      return samples;
    }
    pos += 8 + chunk_size + (chunk_size & 1);
  }
  throw Error(ErrorKind::FormatMismatch, name + ": no data chunk");
}

/// Reads a PCM16 mono 16 kHz WAV file as a fixed 64000-sample clip: shorter
/// input is zero-padded at the end, longer input keeps its head.
inline AudioClip read_wav(const std::string& path) {
  AudioClip clip;
  clip.samples = decode_wav_pcm16(detail::read_file_bytes(path), path);
  clip.samples.resize(kClipSamples, 0.0f);
  return clip;
}

inline std::string encode_wav_pcm16(std::span<const float> samples,
                                    int sample_rate = kSampleRate) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  detail::put_u32le(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);
  detail::put_u16le(out, 1);
  detail::put_u32le(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32le(out, static_cast<std::uint32_t>(sample_rate) * 2);
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out += "data";
  detail::put_u32le(out, data_bytes);
  for (float x : samples) {
    const long v = std::lround(static_cast<double>(x) * 32768.0);
    detail::put_u16le(out, static_cast<std::uint16_t>(
                               static_cast<std::int16_t>(std::clamp(v, -32768L, 32767L))));
  }
  return out;
}

inline void write_wav(const std::string& path, std::span<const float> samples,
                      int sample_rate = kSampleRate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  const std::string bytes = encode_wav_pcm16(samples, sample_rate);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for '" + path + "'");
}

}  // namespace mixtag
