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
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

#include <fftw3.h>
#include <Eigen/Core>

#include "mixtag/error.hpp"
#include "mixtag/wav.hpp"

namespace mixtag {

inline constexpr std::size_t kWindowSize = 1024;
inline constexpr std::size_t kHopSize = 512;
inline constexpr std::size_t kFftBins = kWindowSize / 2 + 1;  // 513
inline constexpr std::size_t kFrames = 124;
inline constexpr std::size_t kMelBins = 128;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdFloor = 1e-5;

using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Time-major (frames x mel bins) feature matrix; a LogMelFeature is one of
/// these with shape 124 x 128.
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LogMelFeature = FeatureMatrix;

struct Spectrogram {
  RowMatrixD power;  // frames x (window/2 + 1)
  std::size_t window_size = kWindowSize;
  std::size_t frame_hop = kHopSize;
};

struct MelFilterbank {
  RowMatrixD weights;  // n_mels x (n_fft/2 + 1)
  double mel_lo = 0.0;
  double mel_hi = 0.0;
  int sample_rate = kSampleRate;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Symmetric Hamming window, w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)).
inline std::vector<double> hamming_window(std::size_t n) {
  if (n < 2) throw Error(ErrorKind::BadSize, "window size must be >= 2");
  std::vector<double> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k)
    w[k] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / denom);
  // cos() is not exactly symmetric in floating point; mirror the first half.
  for (std::size_t k = 0; k < n / 2; ++k) w[n - 1 - k] = w[k];
  return w;
}

/// Real-input FFT of a fixed size backed by an FFTW plan. Plan creation is
/// serialized (FFTW's planner is not thread-safe); execution on separate
/// objects may run concurrently.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    out_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    if (!in_ || !out_) {
      release();
      throw std::bad_alloc();
    }
    std::lock_guard<std::mutex> lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() { release(); }

  std::size_t size() const { return n_; }

  /// |X[k]|^2 for k in [0, n/2].
  void power(std::span<const double> frame, std::span<double> out) {
    std::copy(frame.begin(), frame.end(), in_);
    fftw_execute(plan_);
    for (std::size_t k = 0; k <= n_ / 2; ++k)
      out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }

  void release() {
    if (plan_) {
      std::lock_guard<std::mutex> lock(planner_mutex());
      fftw_destroy_plan(plan_);
      plan_ = nullptr;
    }
    if (in_) fftw_free(in_);
    if (out_) fftw_free(out_);
    in_ = nullptr;
    out_ = nullptr;
  }

  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

/// Hamming-windowed one-sided power spectrogram without padding:
/// floor((64000 - 1024) / 512) + 1 = 124 frames of 513 bins.
inline Spectrogram stft(const AudioClip& clip, std::size_t window = kWindowSize,
                        std::size_t hop = kHopSize) {
  if (clip.samples.size() != kClipSamples)
    throw Error(ErrorKind::ShapeError, "clip must hold exactly 64000 samples, got " +
                                           std::to_string(clip.samples.size()));
  if (hop == 0 || window < 2 || window > clip.samples.size())
    throw Error(ErrorKind::BadSize, "invalid window/hop");
  const std::size_t frames = (clip.samples.size() - window) / hop + 1;
  const auto w = hamming_window(window);
  RealFft fft(window);

  Spectrogram spec;
  spec.window_size = window;
  spec.frame_hop = hop;
  spec.power.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(window / 2 + 1));
  std::vector<double> frame(window);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < window; ++k)
      frame[k] = w[k] * static_cast<double>(clip.samples[t * hop + k]);
    fft.power(frame, std::span<double>(spec.power.row(static_cast<Eigen::Index>(t)).data(),
                                       window / 2 + 1));
  }
  return spec;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular HTK-mel filterbank with unit peaks. Filter m spans mel points
/// (m-1, m, m+1) of n_mels + 2 equally spaced points; a filter that catches
/// no FFT bin gets weight 1 on the bin nearest its center.
inline MelFilterbank mel_filterbank(std::size_t n_mels = kMelBins,
                                    std::size_t n_fft = kWindowSize,
                                    int sample_rate = kSampleRate, double f_lo = 0.0,
                                    double f_hi = kSampleRate / 2.0) {
  if (n_mels < 1 || n_fft < 2) throw Error(ErrorKind::BadSize, "invalid filterbank size");
  if (!(f_lo >= 0.0) || !(f_hi > f_lo) || f_hi > sample_rate / 2.0)
    throw Error(ErrorKind::BadRange, "frequency range must satisfy 0 <= f_lo < f_hi <= sr/2");

  MelFilterbank fb;
  fb.sample_rate = sample_rate;
  fb.mel_lo = hz_to_mel(f_lo);
  fb.mel_hi = hz_to_mel(f_hi);
  const std::size_t n_bins = n_fft / 2 + 1;
  std::vector<double> hz(n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(fb.mel_lo + (fb.mel_hi - fb.mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);

  fb.weights = RowMatrixD::Zero(static_cast<Eigen::Index>(n_mels),
                                static_cast<Eigen::Index>(n_bins));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = hz[m], center = hz[m + 1], right = hz[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > left && f <= center)
        v = (f - left) / (center - left);
      else if (f > center && f < right)
        v = (right - f) / (right - center);
      if (v > 0.0) {
        fb.weights(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = v;
        any = true;
      }
    }
    if (!any) {
      const auto nearest = static_cast<Eigen::Index>(
          std::min<double>(std::round(center / bin_hz), static_cast<double>(n_bins - 1)));
      fb.weights(static_cast<Eigen::Index>(m), nearest) = 1.0;
    }
  }
  return fb;
}

/// Per-frame mel energies (power x weights^T), before the log.
inline RowMatrixD mel_energies(const Spectrogram& spec, const MelFilterbank& fb) {
  if (spec.power.cols() != fb.weights.cols())
    throw Error(ErrorKind::ShapeError, "spectrogram has " + std::to_string(spec.power.cols()) +
                                           " bins, filterbank expects " +
                                           std::to_string(fb.weights.cols()));
  return spec.power * fb.weights.transpose();
}

inline LogMelFeature log_mel(const Spectrogram& spec, const MelFilterbank& fb) {
  const RowMatrixD energy = mel_energies(spec, fb);
  return energy.array().max(kLogFloor).log().cast<float>().matrix();
}

/// Clip -> 124 x 128 log-mel matrix with a shared filterbank.
class FeatureExtractor {
 public:
  FeatureExtractor() : filterbank_(mel_filterbank()) {}

  LogMelFeature operator()(const AudioClip& clip) const {
    return log_mel(stft(clip), filterbank_);
  }

  const MelFilterbank& filterbank() const { return filterbank_; }

 private:
  MelFilterbank filterbank_;
};

/// Per-bin mean and (population) standard deviation over every frame of
/// every feature; deviations are floored at kStdFloor.
inline FeatureStats compute_stats(std::span<const FeatureMatrix> features) {
  if (features.empty()) throw Error(ErrorKind::EmptyInput, "no features for statistics");
  const auto bins = static_cast<std::size_t>(features.front().cols());
  FeatureStats s{std::vector<double>(bins, 0.0), std::vector<double>(bins, 0.0)};
  std::size_t rows = 0;
  for (const auto& f : features) {
    if (static_cast<std::size_t>(f.cols()) != bins)
      throw Error(ErrorKind::ShapeError, "features differ in bin count");
    for (Eigen::Index t = 0; t < f.rows(); ++t)
      for (std::size_t b = 0; b < bins; ++b) s.mean[b] += f(t, static_cast<Eigen::Index>(b));
    rows += static_cast<std::size_t>(f.rows());
  }
  if (rows == 0) throw Error(ErrorKind::EmptyInput, "features have no frames");
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  for (const auto& f : features)
    for (Eigen::Index t = 0; t < f.rows(); ++t)
      for (std::size_t b = 0; b < bins; ++b) {
        const double d = f(t, static_cast<Eigen::Index>(b)) - s.mean[b];
        s.std[b] += d * d;
      }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(rows)), kStdFloor);
  return s;
}

inline FeatureMatrix normalize(const FeatureMatrix& f, const FeatureStats& s) {
  if (static_cast<std::size_t>(f.cols()) != s.mean.size() || s.std.size() != s.mean.size())
    throw Error(ErrorKind::ShapeError, "feature/statistics bin count mismatch");
  FeatureMatrix out(f.rows(), f.cols());
  for (Eigen::Index t = 0; t < f.rows(); ++t)
    for (Eigen::Index b = 0; b < f.cols(); ++b) {
      const auto i = static_cast<std::size_t>(b);
      out(t, b) = static_cast<float>((f(t, b) - s.mean[i]) / std::max(s.std[i], kStdFloor));
    }
  return out;
}

}  // namespace mixtag
