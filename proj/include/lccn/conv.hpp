// Copyright (c) 2026 The LCCN Authors. All Rights Reserved.
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

// Convolution three ways: a direct nested-loop reference, im2col + GEMM, and
// row-masked im2col + GEMM where only the rows of kept output positions are
// gathered and multiplied. All three share one accumulation order per output
// element (i, then j, then c), so the GEMM paths agree bit-for-bit with each
// other and to rounding with the direct loop.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "lccn/tensor.hpp"

namespace lccn {

struct ConvSpec {
  int k = 1;
  int stride = 1;
  int pad = 0;
  int in_channels = 1;
  int out_channels = 1;
  int in_x = 1;
  int in_y = 1;

  /// "Same" padding for odd k: pad = (k-1)/2.
  static ConvSpec same(int k, int in_channels, int out_channels, int in_x, int in_y,
                       int stride = 1) {
    return ConvSpec{k, stride, (k - 1) / 2, in_channels, out_channels, in_x, in_y};
  }

  int out_x() const { return (in_x + 2 * pad - k) / stride + 1; }
  int out_y() const { return (in_y + 2 * pad - k) / stride + 1; }
  std::size_t positions() const { return static_cast<std::size_t>(out_x()) * out_y(); }
  std::size_t patch_size() const { return static_cast<std::size_t>(k) * k * in_channels; }
  std::size_t weight_count() const { return patch_size() * out_channels; }

  Shape weight_shape() const { return Shape{out_channels, k, k, in_channels}; }
  Shape input_shape() const { return Shape{in_x, in_y, in_channels}; }
  Shape output_shape() const { return Shape{out_x(), out_y(), out_channels}; }

  void validate() const {
    if (k < 1 || stride < 1 || pad < 0 || in_channels < 1 || out_channels < 1 || in_x < 1 ||
        in_y < 1) {
      throw ShapeError("invalid conv spec " + to_string());
    }
    if (in_x + 2 * pad < k || in_y + 2 * pad < k) {
      throw ShapeError("kernel larger than padded input in " + to_string());
    }
  }

  std::string to_string() const {
    return "conv{k=" + std::to_string(k) + " s=" + std::to_string(stride) +
           " p=" + std::to_string(pad) + " " + std::to_string(in_x) + "x" +
           std::to_string(in_y) + "x" + std::to_string(in_channels) + "->" +
           std::to_string(out_channels) + "}";
  }

  bool operator==(const ConvSpec&) const = default;
};

/// Row-major matrix; im2col output (U*) and GEMM operands.
template <std::floating_point T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

  T& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

/// Which output positions (im2col rows) are computed.
struct RowMask {
  std::vector<std::uint8_t> keep;

  static RowMask all(std::size_t n) { return RowMask{std::vector<std::uint8_t>(n, 1)}; }
  static RowMask none(std::size_t n) { return RowMask{std::vector<std::uint8_t>(n, 0)}; }

  /// Exactly `kept` of `n` positions, spread evenly (Bresenham pattern).
  static RowMask evenly_spaced(std::size_t n, std::size_t kept) {
    RowMask m = none(n);
    if (n == 0) return m;
    kept = std::min(kept, n);
    for (std::size_t p = 0; p < n; ++p) m.keep[p] = ((p + 1) * kept) / n > (p * kept) / n;
    return m;
  }

  /// Keep every position whose gating value is nonzero.
  template <std::floating_point T>
  static RowMask nonzero(std::span<const T> gate) {
    RowMask m;
    m.keep.resize(gate.size());
    for (std::size_t i = 0; i < gate.size(); ++i) m.keep[i] = gate[i] != T(0);
    return m;
  }

  std::size_t size() const { return keep.size(); }
  std::size_t kept_count() const {
    return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
  }
};

/// Instrumentation for the GEMM paths. MACs are multiply-accumulates of the
/// original convolution; input_reads counts in-bounds input elements gathered.
struct MacCounter {
  std::uint64_t performed = 0;
  std::uint64_t skipped = 0;
  std::uint64_t rows_gathered = 0;
  std::uint64_t input_reads = 0;
};

namespace detail {

inline void check_input(const Shape& input, const ConvSpec& spec) {
  spec.validate();
  const auto d = FeatureDims::of(input);
  if (d.x != static_cast<std::size_t>(spec.in_x) || d.y != static_cast<std::size_t>(spec.in_y) ||
      d.c != static_cast<std::size_t>(spec.in_channels)) {
    throw ShapeError("input " + input.to_string() + " does not match " + spec.to_string());
  }
}

inline void check_weights(const Shape& weights, const ConvSpec& spec) {
  if (weights != spec.weight_shape()) {
    throw ShapeError("weights " + weights.to_string() + " do not match " + spec.to_string() +
                     ", expected " + spec.weight_shape().to_string());
  }
}

/// Copies the k*k*C receptive field of output row `row` into dst.
template <std::floating_point T>
void fill_patch(const T* input, const FeatureDims& d, const ConvSpec& s, std::size_t row,
                T* dst, std::uint64_t* reads) {
  const std::size_t oxy = static_cast<std::size_t>(s.out_x()) * s.out_y();
  const std::size_t n = row / oxy;
  const std::size_t rem = row % oxy;
  const int ox = static_cast<int>(rem / s.out_y());
  const int oy = static_cast<int>(rem % s.out_y());
  const std::size_t C = d.c;
  for (int i = 0; i < s.k; ++i) {
    const int x = ox * s.stride - s.pad + i;
    for (int j = 0; j < s.k; ++j) {
      const int y = oy * s.stride - s.pad + j;
      T* out = dst + (static_cast<std::size_t>(i) * s.k + j) * C;
      if (x < 0 || y < 0 || x >= s.in_x || y >= s.in_y) {
        std::fill(out, out + C, T(0));
        continue;
      }
      const T* src = input + ((n * d.x + x) * d.y + y) * C;
      std::memcpy(out, src, C * sizeof(T));
      if (reads) *reads += C;
    }
  }
}

/// C[rows) = A[rows) * B with a fixed k-ascending accumulation per element.
/// Four rows share each streamed row of B; per-element order is unaffected.
template <std::floating_point T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t row_begin, std::size_t row_end,
               std::size_t K, std::size_t N) {
  std::size_t i = row_begin;
  for (; i + 4 <= row_end; i += 4) {
    T* __restrict c0 = c + i * N;
    T* __restrict c1 = c0 + N;
    T* __restrict c2 = c1 + N;
    T* __restrict c3 = c2 + N;
    std::fill(c0, c0 + 4 * N, T(0));
    const T* a0 = a + i * K;
    const T* a1 = a0 + K;
    const T* a2 = a1 + K;
    const T* a3 = a2 + K;
    for (std::size_t kk = 0; kk < K; ++kk) {
      const T* __restrict bk = b + kk * N;
      const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      for (std::size_t j = 0; j < N; ++j) {
        const T bj = bk[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < row_end; ++i) {
    T* __restrict ci = c + i * N;
    std::fill(ci, ci + N, T(0));
    const T* ai = a + i * K;
    for (std::size_t kk = 0; kk < K; ++kk) {
      const T* __restrict bk = b + kk * N;
      const T v = ai[kk];
      for (std::size_t j = 0; j < N; ++j) ci[j] += v * bk[j];
    }
  }
}

/// Runs fn(begin, end) over [0, rows) split into contiguous chunks, one per worker.
template <class Fn>
void parallel_rows(std::size_t rows, int workers, Fn&& fn) {
  const std::size_t w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || rows < 8) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::size_t chunk = (rows + w - 1) / w;
  chunk = (chunk + 3) / 4 * 4;
  std::vector<std::jthread> pool;
  for (std::size_t begin = chunk; begin < rows; begin += chunk) {
    pool.emplace_back([&fn, begin, end = std::min(rows, begin + chunk)] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(rows, chunk));
}

}  // namespace detail

/// Raw-buffer GEMM: c (MxN) = a (MxK) * b (KxN). Output rows are split across
/// workers; the result does not depend on the worker count.
template <std::floating_point T>
void gemm_into(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t M,
               std::size_t K, std::size_t N, int workers = 1) {
  if (a.size() != M * K || b.size() != K * N || c.size() != M * N) {
    throw ShapeError("gemm buffer sizes do not match " + std::to_string(M) + "x" +
                     std::to_string(K) + "x" + std::to_string(N));
  }
  detail::parallel_rows(M, workers, [&](std::size_t r0, std::size_t r1) {
    detail::gemm_rows(a.data(), b.data(), c.data(), r0, r1, K, N);
  });
}

template <std::floating_point T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b, int workers = 1) {
  if (a.cols != b.rows) {
    throw ShapeError("gemm inner dimensions differ: " + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " * " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols));
  }
  Matrix<T> c(a.rows, b.cols);
  gemm_into<T>(a.data, b.data, c.data, a.rows, a.cols, b.cols, workers);
  return c;
}

template <std::floating_point T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

/// W* (k^2 C x T): column t holds filter t flattened as ((i*k + j)*C + c).
template <std::floating_point T>
Matrix<T> weights_to_columns(const BasicTensor<T>& weights, const ConvSpec& spec) {
  detail::check_weights(weights.shape(), spec);
  const std::size_t K = spec.patch_size();
  const std::size_t N = static_cast<std::size_t>(spec.out_channels);
  Matrix<T> w(K, N);
  for (std::size_t t = 0; t < N; ++t)
    for (std::size_t kk = 0; kk < K; ++kk) w.at(kk, t) = weights[t * K + kk];
  return w;
}

/// Reference convolution: explicit loops over every output cell and tap.
template <std::floating_point T>
BasicTensor<T> conv_direct(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                           const ConvSpec& spec) {
  detail::check_input(input.shape(), spec);
  detail::check_weights(weights.shape(), spec);
  const auto d = FeatureDims::of(input.shape());
  const int X = spec.out_x(), Y = spec.out_y();
  const std::size_t C = d.c, Tn = static_cast<std::size_t>(spec.out_channels);
  BasicTensor<T> out(FeatureDims::shape_like(input.shape(), d.n, X, Y, Tn));
  for (std::size_t n = 0; n < d.n; ++n) {
    for (int x = 0; x < X; ++x) {
      for (int y = 0; y < Y; ++y) {
        for (std::size_t t = 0; t < Tn; ++t) {
          T acc = T(0);
          for (int i = 0; i < spec.k; ++i) {
            const int ux = x * spec.stride - spec.pad + i;
            for (int j = 0; j < spec.k; ++j) {
              const int uy = y * spec.stride - spec.pad + j;
              const bool inside = ux >= 0 && uy >= 0 && ux < spec.in_x && uy < spec.in_y;
              for (std::size_t c = 0; c < C; ++c) {
                const T u = inside ? input[((n * d.x + ux) * d.y + uy) * C + c] : T(0);
                acc += weights[((t * spec.k + i) * spec.k + j) * C + c] * u;
              }
            }
          }
          out[((n * X + x) * Y + y) * Tn + t] = acc;
        }
      }
    }
  }
  return out;
}

/// U*: one row per output position (n, x, y), one column per tap ((i*k + j)*C + c).
/// Padded taps are exact zeros.
template <std::floating_point T>
Matrix<T> im2col(const BasicTensor<T>& input, const ConvSpec& spec,
                 MacCounter* counter = nullptr) {
  detail::check_input(input.shape(), spec);
  const auto d = FeatureDims::of(input.shape());
  const std::size_t rows = d.n * spec.positions();
  Matrix<T> m(rows, spec.patch_size());
  std::uint64_t* reads = counter ? &counter->input_reads : nullptr;
  for (std::size_t r = 0; r < rows; ++r) {
    detail::fill_patch(input.raw(), d, spec, r, m.data.data() + r * m.cols, reads);
  }
  if (counter) counter->rows_gathered += rows;
  return m;
}

/// Scatter-adds the rows of dU* back onto the input positions they were read from.
template <std::floating_point T>
void col2im_add(const Matrix<T>& cols, const ConvSpec& spec, BasicTensor<T>& input_grad) {
  detail::check_input(input_grad.shape(), spec);
  const auto d = FeatureDims::of(input_grad.shape());
  const std::size_t oxy = spec.positions();
  if (cols.rows != d.n * oxy || cols.cols != spec.patch_size()) {
    throw ShapeError("col2im: matrix does not match " + spec.to_string());
  }
  const std::size_t C = d.c;
  for (std::size_t r = 0; r < cols.rows; ++r) {
    const std::size_t n = r / oxy;
    const int ox = static_cast<int>((r % oxy) / spec.out_y());
    const int oy = static_cast<int>((r % oxy) % spec.out_y());
    for (int i = 0; i < spec.k; ++i) {
      const int x = ox * spec.stride - spec.pad + i;
      if (x < 0 || x >= spec.in_x) continue;
      for (int j = 0; j < spec.k; ++j) {
        const int y = oy * spec.stride - spec.pad + j;
        if (y < 0 || y >= spec.in_y) continue;
        const T* src = cols.data.data() + r * cols.cols + (static_cast<std::size_t>(i) * spec.k + j) * C;
        T* dst = input_grad.raw() + ((n * d.x + x) * d.y + y) * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
      }
    }
  }
}

/// V = U* x W*, written straight into the (n, x, y, t) output layout.
template <std::floating_point T>
BasicTensor<T> conv_gemm(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                         const ConvSpec& spec, int workers = 1, MacCounter* counter = nullptr) {
  const Matrix<T> cols = im2col(input, spec, counter);
  const Matrix<T> w = weights_to_columns(weights, spec);
  const auto d = FeatureDims::of(input.shape());
  BasicTensor<T> out(FeatureDims::shape_like(input.shape(), d.n, spec.out_x(), spec.out_y(),
                                             spec.out_channels));
  gemm_into<T>(cols.data, w.data, out.data(), cols.rows, cols.cols, w.cols, workers);
  if (counter) counter->performed += static_cast<std::uint64_t>(cols.rows) * w.rows * w.cols;
  return out;
}

/// Row-reduced convolution: gathers only the S' kept rows of U*, multiplies the
/// S' x k^2C block by W*, and scatters into the output. Skipped positions are
/// exact zeros and their receptive fields are never read.
template <std::floating_point T>
BasicTensor<T> conv_gemm_masked(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                                const ConvSpec& spec, const RowMask& mask, int workers = 1,
                                MacCounter* counter = nullptr) {
  detail::check_input(input.shape(), spec);
  const auto d = FeatureDims::of(input.shape());
  const std::size_t rows = d.n * spec.positions();
  if (mask.size() != rows) {
    throw ShapeError("row mask has " + std::to_string(mask.size()) + " entries, " +
                     spec.to_string() + " has " + std::to_string(rows) + " output positions");
  }
  const Matrix<T> w = weights_to_columns(weights, spec);
  const std::size_t K = w.rows, N = w.cols;

  std::vector<std::size_t> kept;
  kept.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r)
    if (mask.keep[r]) kept.push_back(r);

  std::vector<T> compact(kept.size() * K);
  std::uint64_t* reads = counter ? &counter->input_reads : nullptr;
  for (std::size_t s = 0; s < kept.size(); ++s) {
    detail::fill_patch(input.raw(), d, spec, kept[s], compact.data() + s * K, reads);
  }
  std::vector<T> product(kept.size() * N);
  gemm_into<T>(compact, w.data, product, kept.size(), K, N, workers);

  BasicTensor<T> out(FeatureDims::shape_like(input.shape(), d.n, spec.out_x(), spec.out_y(),
                                             spec.out_channels));
  for (std::size_t s = 0; s < kept.size(); ++s) {
    std::memcpy(out.raw() + kept[s] * N, product.data() + s * N, N * sizeof(T));
  }
  if (counter) {
    counter->rows_gathered += kept.size();
    counter->performed += static_cast<std::uint64_t>(kept.size()) * K * N;
    counter->skipped += static_cast<std::uint64_t>(rows - kept.size()) * K * N;
  }
  return out;
}

}  // namespace lccn
