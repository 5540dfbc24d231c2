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
#include <vector>

#include "mixtag/nn/tensor.hpp"
#include "mixtag/rng.hpp"

namespace mixtag::nn {

// 3x3 convolution, stride 1, zero padding 1 on both axes. Samples are
// unfolded a band of time rows at a time so the column buffer stays in cache.

/// Unfolds time rows [t0, t1) of one (C, T, F) sample into a (C*9) x
/// ((t1-t0)*F) column matrix; row index is c*9 + dt*3 + df.
template <typename T>
void im2col3x3(const T* x, std::size_t channels, std::size_t time, std::size_t freq,
               std::size_t t0, std::size_t t1, T* col) {
  const std::size_t plane = time * freq, len = (t1 - t0) * freq;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x + c * plane;
    for (int dt = 0; dt < 3; ++dt) {
      for (int df = 0; df < 3; ++df) {
        T* dst = col + ((c * 3 + dt) * 3 + df) * len;
        for (std::size_t t = t0; t < t1; ++t) {
          const long st = static_cast<long>(t) + dt - 1;
          T* row = dst + (t - t0) * freq;
          if (st < 0 || st >= static_cast<long>(time)) {
            std::fill(row, row + freq, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(st) * freq;
          if (df == 0) {
            row[0] = T(0);
            std::copy(srow, srow + freq - 1, row + 1);
          } else if (df == 1) {
            std::copy(srow, srow + freq, row);
          } else {
            std::copy(srow + 1, srow + freq, row);
            row[freq - 1] = T(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col3x3: accumulates the columns of rows [t0, t1) into a
/// (C, T, F) sample.
template <typename T>
void col2im3x3(const T* col, std::size_t channels, std::size_t time, std::size_t freq,
               std::size_t t0, std::size_t t1, T* x) {
  const std::size_t plane = time * freq, len = (t1 - t0) * freq;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = x + c * plane;
    for (int dt = 0; dt < 3; ++dt) {
      for (int df = 0; df < 3; ++df) {
        const T* src = col + ((c * 3 + dt) * 3 + df) * len;
        for (std::size_t t = t0; t < t1; ++t) {
          const long st = static_cast<long>(t) + dt - 1;
          if (st < 0 || st >= static_cast<long>(time)) continue;
          const T* row = src + (t - t0) * freq;
          T* drow = dst + static_cast<std::size_t>(st) * freq;
          if (df == 0) {
            for (std::size_t f = 1; f < freq; ++f) drow[f - 1] += row[f];
          } else if (df == 1) {
            for (std::size_t f = 0; f < freq; ++f) drow[f] += row[f];
          } else {
            for (std::size_t f = 0; f + 1 < freq; ++f) drow[f + 1] += row[f];
          }
        }
      }
    }
  }
}

/// Time rows per unfolded band: about 1024 columns.
inline std::size_t conv_band_rows(std::size_t freq) {
  return std::max<std::size_t>(1, 1024 / std::max<std::size_t>(freq, 1));
}

/// Row-major (rows x cols) view into a larger row-major buffer.
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// kernel: (out, in, 3, 3); bias: (out). Returns (N, out, T, F).
template <typename T>
Tensor<T> conv3x3_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 4 || kernel.rank() != 4 || kernel.dim(1) != x.dim(1) ||
      kernel.dim(2) != 3 || kernel.dim(3) != 3 || bias.size() != kernel.dim(0))
    throw Error(ErrorKind::ShapeError, "conv3x3: input " + shape_string(x.shape) +
                                           " incompatible with kernel " +
                                           shape_string(kernel.shape));
  const std::size_t n = x.dim(0), cin = x.dim(1), time = x.dim(2), freq = x.dim(3);
  const std::size_t cout = kernel.dim(0), k = cin * 9, plane = time * freq;
  const std::size_t band = conv_band_rows(freq);
  Tensor<T> y({n, cout, time, freq});
  AlignedVector<T> col(k * std::min(band, time) * freq);
  ConstMatMap<T> w(kernel.ptr(), cout, k);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(plane));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t t0 = 0; t0 < time; t0 += band) {
      const std::size_t t1 = std::min(time, t0 + band), len = (t1 - t0) * freq;
      im2col3x3(x.ptr() + s * cin * plane, cin, time, freq, t0, t1, col.data());
      StridedMap<T> out(y.ptr() + s * cout * plane + t0 * freq, cout, len, stride);
      out.noalias() = w * ConstMatMap<T>(col.data(), k, len);
    }
    MatMap<T> out(y.ptr() + s * cout * plane, cout, plane);
    for (std::size_t c = 0; c < cout; ++c) out.row(c).array() += bias[c];
  }
  return y;
}

/// Accumulates kernel/bias gradients; returns dx when need_dx.
template <typename T>
Tensor<T> conv3x3_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy,
                           Tensor<T>& dkernel, Tensor<T>& dbias, bool need_dx = true) {
  const std::size_t n = x.dim(0), cin = x.dim(1), time = x.dim(2), freq = x.dim(3);
  const std::size_t cout = kernel.dim(0), k = cin * 9, plane = time * freq;
  require_shape(dy.shape, {n, cout, time, freq}, "conv3x3 backward dy");
  const std::size_t band = conv_band_rows(freq);
  Tensor<T> dx;
  if (need_dx) dx = Tensor<T>(x.shape);
  AlignedVector<T> col(k * std::min(band, time) * freq);
  AlignedVector<T> dcol(need_dx ? col.size() : 0);
  ConstMatMap<T> w(kernel.ptr(), cout, k);
  MatMap<T> dw(dkernel.ptr(), cout, k);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(plane));
  for (std::size_t s = 0; s < n; ++s) {
    ConstMatMap<T> g_all(dy.ptr() + s * cout * plane, cout, plane);
    for (std::size_t c = 0; c < cout; ++c) dbias[c] += g_all.row(c).sum();
    for (std::size_t t0 = 0; t0 < time; t0 += band) {
      const std::size_t t1 = std::min(time, t0 + band), len = (t1 - t0) * freq;
      im2col3x3(x.ptr() + s * cin * plane, cin, time, freq, t0, t1, col.data());
      ConstStridedMap<T> g(dy.ptr() + s * cout * plane + t0 * freq, cout, len, stride);
      dw.noalias() += g * ConstMatMap<T>(col.data(), k, len).transpose();
      if (need_dx) {
        MatMap<T>(dcol.data(), k, len).noalias() = w.transpose() * g;
        col2im3x3(dcol.data(), cin, time, freq, t0, t1, dx.ptr() + s * cin * plane);
      }
    }
  }
  return dx;
}

/// Branch-free ELU over an Eigen array expression. exp(x) - 1 is used
/// instead of expm1 because only exp is vectorized; the absolute error is
/// one ulp of 1.
template <typename E>
auto elu_array(const E& a) {
  using S = typename E::Scalar;
  return a.max(S(0)) + (a.min(S(0)).exp() - S(1));
}

// Batch normalization over (N, T, F) per channel.

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
  bool training = true;
};

/// Fills the per-channel statistics of `cache` (everything but xhat).
template <typename T>
void batch_norm_stats(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      const Tensor<T>& running_mean, const Tensor<T>& running_var,
                      bool training, double eps, BatchNormCache<T>& cache) {
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.size() != ch || beta.size() != ch || running_mean.size() != ch ||
      running_var.size() != ch)
    throw Error(ErrorKind::ShapeError, "batch norm parameters do not match channel count");
  cache.training = training;
  cache.inv_std.assign(ch, T(0));
  cache.batch_mean.assign(ch, 0.0);
  cache.batch_var.assign(ch, 0.0);
  const double m = static_cast<double>(n * plane);
  // Per-plane partial sums run in T; they are combined in double.
  const auto slab = [&](std::size_t s, std::size_t c) {
    return ConstArrMap<T>(x.ptr() + (s * ch + c) * plane, static_cast<Eigen::Index>(plane));
  };
  for (std::size_t c = 0; c < ch; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) sum += static_cast<double>(slab(s, c).sum());
      mean = sum / m;
      double sq = 0.0;
      const T mu = static_cast<T>(mean);
      for (std::size_t s = 0; s < n; ++s) sq += static_cast<double>((slab(s, c) - mu).square().sum());
      var = sq / m;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    cache.batch_mean[c] = mean;
    cache.batch_var[c] = var;
    cache.inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
  }
}

/// Training mode normalizes with batch statistics, inference mode with the
/// running ones. Normalizes x in place.
template <typename T>
Tensor<T> batch_norm_forward(Tensor<T> x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             const Tensor<T>& running_mean, const Tensor<T>& running_var,
                             bool training, double eps, BatchNormCache<T>& cache) {
  batch_norm_stats(x, gamma, beta, running_mean, running_var, training, eps, cache);
  const std::size_t n = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto len = static_cast<Eigen::Index>(plane);
  cache.xhat = Tensor<T>(x.shape);
  for (std::size_t c = 0; c < ch; ++c) {
    const T mu = static_cast<T>(cache.batch_mean[c]), inv = cache.inv_std[c];
    const T g = gamma[c], b = beta[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * ch + c) * plane;
      ArrMap<T> xh(cache.xhat.ptr() + off, len);
      ArrMap<T> y(x.ptr() + off, len);
      xh = (y - mu) * inv;
      y = g * xh + b;
    }
  }
  return x;
}

template <typename T>
Tensor<T> batch_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                              const BatchNormCache<T>& cache, Tensor<T>& dgamma,
                              Tensor<T>& dbeta) {
  const std::size_t n = dy.dim(0), ch = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor<T> dx(dy.shape);
  const auto len = static_cast<Eigen::Index>(plane);
  for (std::size_t c = 0; c < ch; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * ch + c) * plane;
      const ConstArrMap<T> g(dy.ptr() + off, len);
      sum_dy += static_cast<double>(g.sum());
      sum_dy_xhat += static_cast<double>((g * ConstArrMap<T>(cache.xhat.ptr() + off, len)).sum());
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const T scale = gamma[c] * cache.inv_std[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t off = (s * ch + c) * plane;
      const ConstArrMap<T> g(dy.ptr() + off, len);
      ArrMap<T> out(dx.ptr() + off, len);
      if (cache.training) {
        // dx = g * inv / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
        const T mean_dy = static_cast<T>(sum_dy / m);
        const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
        out = scale * (g - mean_dy - ConstArrMap<T>(cache.xhat.ptr() + off, len) * mean_dy_xhat);
      } else {
        out = scale * g;
      }
    }
  }
  return dx;
}

// Exponential linear unit: x for x >= 0, exp(x) - 1 otherwise.

template <typename T>
T elu(T x) {
  return x >= T(0) ? x : std::expm1(x);
}

template <typename T>
void elu_inplace(Tensor<T>& x) {
  ArrMap<T> a(x.ptr(), static_cast<Eigen::Index>(x.size()));
  a = elu_array(a);
}

/// Uses the ELU output: derivative is 1 where out >= 0, out + 1 elsewhere.
template <typename T>
void elu_backward_inplace(Tensor<T>& dy, const Tensor<T>& out) {
  ArrMap<T> g(dy.ptr(), static_cast<Eigen::Index>(dy.size()));
  const ConstArrMap<T> o(out.ptr(), static_cast<Eigen::Index>(out.size()));
  g *= o.min(T(0)) + T(1);
}

// 1x2 max pooling along frequency, ceil mode (a trailing odd column pools
// alone).

template <typename T>
Tensor<T> max_pool_freq_forward(const Tensor<T>& x, std::vector<std::uint8_t>& argmax) {
  const std::size_t rows = x.dim(0) * x.dim(1) * x.dim(2), freq = x.dim(3);
  const std::size_t out_f = (freq + 1) / 2;
  Tensor<T> y({x.dim(0), x.dim(1), x.dim(2), out_f});
  argmax.assign(rows * out_f, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * freq;
    T* dst = y.ptr() + r * out_f;
    std::uint8_t* idx = argmax.data() + r * out_f;
    const std::size_t pairs = freq / 2;
    for (std::size_t f = 0; f < pairs; ++f) {
      const T a = src[2 * f], b = src[2 * f + 1];
      const bool second = b > a;
      dst[f] = second ? b : a;
      idx[f] = second;
    }
    if (pairs < out_f) dst[pairs] = src[2 * pairs];
  }
  return y;
}

template <typename T>
Tensor<T> max_pool_freq_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax,
                                 std::size_t in_freq) {
  const std::size_t rows = dy.dim(0) * dy.dim(1) * dy.dim(2), out_f = dy.dim(3);
  Tensor<T> dx({dy.dim(0), dy.dim(1), dy.dim(2), in_freq});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t f = 0; f < out_f; ++f)
      dx[r * in_freq + 2 * f + argmax[r * out_f + f]] = dy[r * out_f + f];
  return dx;
}

// Inverted dropout: kept units are scaled by 1 / (1 - rate).

/// Each 64-bit draw yields two 32-bit uniforms; unit i is kept when its
/// uniform is >= rate.
inline std::vector<std::uint8_t> dropout_mask(std::size_t count, double rate, Rng& rng) {
  std::vector<std::uint8_t> mask(count);
  const auto cut = static_cast<std::uint64_t>(std::ceil(std::ldexp(rate, 32)));
  for (std::size_t i = 0; i < count; i += 2) {
    const std::uint64_t bits = rng.next_u64();
    mask[i] = (bits >> 32) >= cut;
    if (i + 1 < count) mask[i + 1] = (bits & 0xffffffffu) >= cut;
  }
  return mask;
}

template <typename T>
void apply_dropout(Tensor<T>& x, const std::vector<std::uint8_t>& mask, double rate) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  const auto n = static_cast<Eigen::Index>(x.size());
  ArrMap<T>(x.ptr(), n) *=
      Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>>(mask.data(), n)
          .template cast<T>() * scale;
}


// Fused block tail: batch norm (optional), ELU and 1x2 frequency max pool.
// The ELU value at each kept position is the pooled output itself, so the
// full-width activation is never stored.

/// `bn` holds statistics from batch_norm_stats, or is null to skip batch
/// norm. With keep_xhat the normalized input is stored in bn->xhat.
template <typename T>
Tensor<T> bn_elu_pool_forward(const Tensor<T>& h, const Tensor<T>& gamma, const Tensor<T>& beta,
                              BatchNormCache<T>* bn, bool keep_xhat,
                              std::vector<std::uint8_t>& argmax) {
  const std::size_t n = h.dim(0), ch = h.dim(1), time = h.dim(2), freq = h.dim(3);
  const std::size_t out_f = (freq + 1) / 2, pairs = freq / 2;
  const auto len = static_cast<Eigen::Index>(freq);
  Tensor<T> y({n, ch, time, out_f});
  argmax.assign(n * ch * time * out_f, 0);
  if (bn && keep_xhat) bn->xhat = Tensor<T>(h.shape);
  AlignedVector<T> zbuf(freq), xbuf(freq);
  ArrMap<T> z(zbuf.data(), len);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t plane_row = (s * ch + c) * time;
      const T mu = bn ? static_cast<T>(bn->batch_mean[c]) : T(0);
      const T inv = bn ? bn->inv_std[c] : T(1);
      const T g = bn ? gamma[c] : T(1), b = bn ? beta[c] : T(0);
      for (std::size_t t = 0; t < time; ++t) {
        const std::size_t r = plane_row + t;
        const ConstArrMap<T> row(h.ptr() + r * freq, len);
        if (bn) {
          ArrMap<T> xh(keep_xhat ? bn->xhat.ptr() + r * freq : xbuf.data(), len);
          xh = (row - mu) * inv;
          z = elu_array(g * xh + b);
        } else {
          z = elu_array(row);
        }
        T* dst = y.ptr() + r * out_f;
        std::uint8_t* idx = argmax.data() + r * out_f;
        for (std::size_t f = 0; f < pairs; ++f) {
          const T lo = zbuf[2 * f], hi = zbuf[2 * f + 1];
          const bool second = hi > lo;
          dst[f] = second ? hi : lo;
          idx[f] = second;
        }
        if (pairs < out_f) dst[pairs] = zbuf[2 * pairs];
      }
    }
  }
  return y;
}

/// Backward of the fused tail, with the inverted dropout that follows it.
/// `pooled` is the forward output before dropout; mask may be null. With bn
/// null the result is the gradient at the ELU input; otherwise batch norm is
/// differentiated too and its parameter gradients accumulated.
template <typename T>
Tensor<T> bn_elu_pool_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax,
                               const Tensor<T>& pooled, const std::uint8_t* mask, double rate,
                               std::size_t in_freq, const Tensor<T>& gamma,
                               const BatchNormCache<T>* bn, Tensor<T>& dgamma,
                               Tensor<T>& dbeta) {
  const std::size_t n = dy.dim(0), ch = dy.dim(1), time = dy.dim(2), out_f = dy.dim(3);
  const auto count = static_cast<Eigen::Index>(dy.size());

  // Gradient at each pooled position: dropout, then the ELU derivative.
  AlignedVector<T> gp(dy.size());
  ArrMap<T> g(gp.data(), count);
  g = ConstArrMap<T>(dy.ptr(), count) *
      (ConstArrMap<T>(pooled.ptr(), count).min(T(0)) + T(1));
  if (mask)
    g *= Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>>(mask, count)
             .template cast<T>() *
         static_cast<T>(1.0 / (1.0 - rate));

  // Route each value to its argmax column; the other column gets zero.
  Tensor<T> dx({n, ch, time, in_freq});
  const std::size_t rows = n * ch * time, pairs = in_freq / 2;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = gp.data() + r * out_f;
    const std::uint8_t* idx = argmax.data() + r * out_f;
    T* dst = dx.ptr() + r * in_freq;
    for (std::size_t f = 0; f < pairs; ++f) {
      const T second = static_cast<T>(idx[f]);
      dst[2 * f] = src[f] * (T(1) - second);
      dst[2 * f + 1] = src[f] * second;
    }
    if (pairs < out_f) dst[2 * pairs] = src[pairs];
  }
  if (!bn) return dx;

  const std::size_t plane = time * in_freq;
  const auto len = static_cast<Eigen::Index>(plane);
  const double m = static_cast<double>(n * plane);
  const auto slab = [&](const Tensor<T>& t, std::size_t s, std::size_t c) {
    return ConstArrMap<T>(t.ptr() + (s * ch + c) * plane, len);
  };
  for (std::size_t c = 0; c < ch; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      sum_dy += static_cast<double>(slab(dx, s, c).sum());
      sum_dy_xhat += static_cast<double>((slab(dx, s, c) * slab(bn->xhat, s, c)).sum());
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const T scale = gamma[c] * bn->inv_std[c];
    const T mean_dy = static_cast<T>(sum_dy / m);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
    for (std::size_t s = 0; s < n; ++s) {
      ArrMap<T> out(dx.ptr() + (s * ch + c) * plane, len);
      if (bn->training) {
        // dx = g * inv / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
        out = scale * (out - mean_dy - slab(bn->xhat, s, c) * mean_dy_xhat);
      } else {
        out *= scale;
      }
    }
  }
  return dx;
}

}  // namespace mixtag::nn
