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

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lccn/conv.hpp"
#include "lccn/tensor.hpp"

namespace lccn {

enum class Mode { kTrain, kInfer };

/// Low-cost collaborative kernel forms.
///  kSharedAcrossFilters: k x k x C x 1, one map shared by all T filters, so the
///    zero pattern is the same in every output channel and whole im2col rows drop.
///  kPointwiseFull: 1 x 1 x C x T, one map per output channel; gating only.
enum class LcclForm { kSharedAcrossFilters, kPointwiseFull };

/// Where the collaborative layer reads its input: before or after the BN+ReLU
/// pre-activation that feeds the original convolution.
enum class Connection { kBef, kAft };

/// How an accelerated convolution is executed.
///  kMasked: skip rows predicted zero (shared form) and gate.
///  kDenseThenGate: compute the original convolution fully, then gate.
///  kDense: ignore the collaborative layer entirely (the plain CNN baseline).
enum class Path { kMasked, kDenseThenGate, kDense };

inline std::string to_string(LcclForm f) {
  return f == LcclForm::kSharedAcrossFilters ? "shared" : "pointwise";
}
inline std::string to_string(Connection c) { return c == Connection::kBef ? "bef" : "aft"; }

inline LcclForm parse_lccl_form(const std::string& s) {
  if (s == "shared") return LcclForm::kSharedAcrossFilters;
  if (s == "pointwise") return LcclForm::kPointwiseFull;
  throw ConfigError("unknown lccl form '" + s + "' (expected shared|pointwise)");
}
inline Connection parse_connection(const std::string& s) {
  if (s == "bef") return Connection::kBef;
  if (s == "aft") return Connection::kAft;
  throw ConfigError("unknown connection '" + s + "' (expected bef|aft)");
}

template <std::floating_point T>
struct BatchNorm {
  BasicTensor<T> gamma, beta, running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.9;

  /// gamma 1, beta 0, running mean 0, running var 1.
  static BatchNorm identity(int channels) {
    BatchNorm bn;
    const Shape s{channels};
    bn.gamma = BasicTensor<T>(s);
    bn.gamma.fill(T(1));
    bn.beta = BasicTensor<T>(s);
    bn.running_mean = BasicTensor<T>(s);
    bn.running_var = BasicTensor<T>(s);
    bn.running_var.fill(T(1));
    return bn;
  }

  std::size_t channels() const { return gamma.size(); }

  void validate() const {
    const auto c = channels();
    if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
      throw ShapeError("batch norm parameter lengths disagree");
    }
    if (!(eps > 0)) throw ConfigError("batch norm eps must be > 0");
    for (std::size_t i = 0; i < c; ++i)
      if (running_var[i] < T(0)) throw ConfigError("batch norm running_var must be >= 0");
  }

  /// Per-channel output for an all-zero input in inference mode.
  T zero_response(std::size_t c) const {
    return beta[c] - gamma[c] * running_mean[c] /
                         static_cast<T>(std::sqrt(static_cast<double>(running_var[c]) + eps));
  }
};

/// What the backward pass needs from a BN forward.
template <std::floating_point T>
struct BnCache {
  Mode mode = Mode::kInfer;
  BasicTensor<T> xhat;
  std::vector<T> mean, var, invstd;  // statistics actually used
  std::size_t count = 0;             // elements per channel
};

/// Normalizes over every position of a rank-3/4 feature map, channel last.
/// Train mode uses biased batch statistics, infer mode the running ones.
template <std::floating_point T>
BasicTensor<T> bn_forward(const BasicTensor<T>& x, const BatchNorm<T>& bn, Mode mode,
                          BnCache<T>* cache = nullptr) {
  const auto d = FeatureDims::of(x.shape());
  const std::size_t C = d.c, P = d.positions();
  if (bn.channels() != C) {
    throw ShapeError("batch norm has " + std::to_string(bn.channels()) + " channels, input " +
                     x.shape().to_string());
  }
  std::vector<T> mean(C), var(C), invstd(C);
  if (mode == Mode::kTrain) {
    std::vector<double> s(C, 0.0), s2(C, 0.0);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) s[c] += static_cast<double>(x[p * C + c]);
    for (std::size_t c = 0; c < C; ++c) s[c] /= static_cast<double>(P);
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) {
        const double dv = static_cast<double>(x[p * C + c]) - s[c];
        s2[c] += dv * dv;
      }
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = static_cast<T>(s[c]);
      var[c] = static_cast<T>(s2[c] / static_cast<double>(P));
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = bn.running_mean[c];
      var[c] = bn.running_var[c];
    }
  }
  for (std::size_t c = 0; c < C; ++c)
    invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + bn.eps));

  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat;
  if (cache) xhat = BasicTensor<T>(x.shape());
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      const T h = (x[i] - mean[c]) * invstd[c];
      y[i] = bn.gamma[c] * h + bn.beta[c];
      if (cache) xhat[i] = h;
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->xhat = std::move(xhat);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
    cache->invstd = std::move(invstd);
    cache->count = P;
  }
  return y;
}

/// running = momentum * running + (1 - momentum) * batch, unbiased batch variance.
template <std::floating_point T>
void bn_update_running(BatchNorm<T>& bn, const BnCache<T>& cache) {
  if (cache.mode != Mode::kTrain) return;
  const double m = bn.momentum;
  const double unbias =
      cache.count > 1 ? static_cast<double>(cache.count) / static_cast<double>(cache.count - 1)
                      : 1.0;
  for (std::size_t c = 0; c < bn.channels(); ++c) {
    bn.running_mean[c] =
        static_cast<T>(m * bn.running_mean[c] + (1.0 - m) * static_cast<double>(cache.mean[c]));
    bn.running_var[c] = static_cast<T>(m * bn.running_var[c] +
                                       (1.0 - m) * unbias * static_cast<double>(cache.var[c]));
  }
}

template <std::floating_point T>
struct ConvLayer {
  ConvSpec spec;
  BasicTensor<T> weights;
};

template <std::floating_point T>
struct Lccl {
  LcclForm form = LcclForm::kSharedAcrossFilters;
  BasicTensor<T> weights;
  BatchNorm<T> bn;
  bool use_bn = true;
  Connection input = Connection::kAft;
};

/// Geometry of the collaborative convolution paired with `original`. The
/// shared form keeps k' = k with a single output channel; the pointwise form
/// is 1x1 with T outputs. Output spatial extents always match the original.
inline ConvSpec lccl_spec(const ConvSpec& original, LcclForm form) {
  ConvSpec s = original;
  if (form == LcclForm::kSharedAcrossFilters) {
    s.out_channels = 1;
  } else {
    s.k = 1;
    s.pad = original.pad - (original.k - 1) / 2;
    if (s.pad < 0 || s.out_x() != original.out_x() || s.out_y() != original.out_y()) {
      throw ShapeError("pointwise collaborative layer cannot match output of " +
                       original.to_string());
    }
  }
  return s;
}

/// One original convolution with its collaborative layer.
template <std::floating_point T>
struct AccelBlock {
  ConvLayer<T> conv;
  Lccl<T> lccl;

  ConvSpec lccl_spec() const { return lccn::lccl_spec(conv.spec, lccl.form); }
  int lccl_channels() const {
    return lccl.form == LcclForm::kSharedAcrossFilters ? 1 : conv.spec.out_channels;
  }

  void validate() const {
    conv.spec.validate();
    detail::check_weights(conv.weights.shape(), conv.spec);
    detail::check_weights(lccl.weights.shape(), lccl_spec());
    if (lccl.bn.channels() != static_cast<std::size_t>(lccl_channels())) {
      throw ShapeError("collaborative batch norm must have " + std::to_string(lccl_channels()) +
                       " channels");
    }
    lccl.bn.validate();
  }
};

/// Fan-in scaled normal initialization, std = sqrt(2 / (k^2 C)).
template <std::floating_point T>
BasicTensor<T> he_init(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  BasicTensor<T> w(shape);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(dist(rng));
  return w;
}

template <std::floating_point T>
AccelBlock<T> make_accel_block(const ConvSpec& spec, LcclForm form, bool use_bn,
                               Connection input, std::mt19937_64& rng) {
  AccelBlock<T> b;
  b.conv.spec = spec;
  b.conv.weights = he_init<T>(spec.weight_shape(), spec.patch_size(), rng);
  b.lccl.form = form;
  const ConvSpec ls = lccl_spec(spec, form);
  b.lccl.weights = he_init<T>(ls.weight_shape(), ls.patch_size(), rng);
  b.lccl.bn = BatchNorm<T>::identity(ls.out_channels);
  b.lccl.use_bn = use_bn;
  b.lccl.input = input;
  return b;
}

template <std::floating_point T>
struct LcclCache {
  BasicTensor<T> raw;        // conv(input, W')
  BasicTensor<T> activated;  // V' (post ReLU)
  BnCache<T> bn;
  BasicTensor<T> pre_relu;   // BN output, or raw when BN is off
};

/// V' = ReLU(BN(conv(input, W'))), or ReLU(conv(input, W')) with BN disabled.
/// The shared form yields a single channel, broadcast logically over T.
template <std::floating_point T>
BasicTensor<T> lccl_forward(const BasicTensor<T>& input, const AccelBlock<T>& block, Mode mode,
                            LcclCache<T>* cache = nullptr, int workers = 1,
                            MacCounter* counter = nullptr) {
  const ConvSpec ls = block.lccl_spec();
  BasicTensor<T> raw = conv_gemm(input, block.lccl.weights, ls, workers, counter);
  BasicTensor<T> pre =
      block.lccl.use_bn ? bn_forward(raw, block.lccl.bn, mode, cache ? &cache->bn : nullptr)
                        : raw;
  BasicTensor<T> out = relu(pre);
  if (cache) {
    cache->raw = std::move(raw);
    cache->pre_relu = std::move(pre);
    cache->activated = out;
  }
  return out;
}

/// V*_t(x,y) = 0 where V'_t(x,y) = 0, else V'_t(x,y) * V_t(x,y).
/// A single-channel V' broadcasts over every channel of V.
template <std::floating_point T>
BasicTensor<T> gate(const BasicTensor<T>& v_prime, const BasicTensor<T>& v) {
  const auto dp = FeatureDims::of(v_prime.shape());
  const auto dv = FeatureDims::of(v.shape());
  if (dp.n != dv.n || dp.x != dv.x || dp.y != dv.y || (dp.c != dv.c && dp.c != 1)) {
    throw ShapeError("gate: " + v_prime.shape().to_string() + " cannot gate " +
                     v.shape().to_string());
  }
  BasicTensor<T> out(v.shape());
  const std::size_t C = dv.c;
  for (std::size_t p = 0; p < dv.positions(); ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const T g = dp.c == 1 ? v_prime[p] : v_prime[p * C + c];
      out[p * C + c] = g == T(0) ? T(0) : g * v[p * C + c];
    }
  }
  return out;
}

/// Per-call accounting of one accelerated convolution.
struct AccelStats {
  LcclForm form = LcclForm::kSharedAcrossFilters;
  std::size_t gate_cells = 0;     // elements of V'
  std::size_t gate_zeros = 0;     // exact zeros in V'
  std::size_t positions = 0;      // im2col rows of the original conv
  std::size_t kept_rows = 0;      // rows actually multiplied (S')
  std::uint64_t performed_macs = 0;
  std::uint64_t skipped_macs = 0;
  std::uint64_t lccl_macs = 0;
  std::uint64_t dense_macs = 0;
  std::uint64_t rows_gathered = 0;

  /// r: fraction of zero cells in V'.
  double sparsity() const {
    return gate_cells ? static_cast<double>(gate_zeros) / static_cast<double>(gate_cells) : 0.0;
  }
  /// Fraction of the original convolution's work that is computed.
  double kept() const {
    return dense_macs ? static_cast<double>(performed_macs) / static_cast<double>(dense_macs)
                      : 0.0;
  }
};

struct AccelOptions {
  Path path = Path::kMasked;
  int workers = 1;
  /// Benchmarking aid: replace the predicted row mask with an evenly spaced
  /// one keeping this fraction of rows. Shared form only.
  std::optional<double> forced_kept;
};

template <std::floating_point T>
struct AccelResult {
  BasicTensor<T> output;   // V*
  BasicTensor<T> v_prime;  // V' (empty on the dense path)
  BasicTensor<T> v;        // V  (zero at skipped rows on the masked path)
  AccelStats stats;
};

/// Computes V', derives the skip pattern, evaluates the original convolution
/// (row-reduced for the shared form) and gates. `lccl_input` is the tensor the
/// collaborative layer reads; for the Aft connection it is `conv_input`.
template <std::floating_point T>
AccelResult<T> accel_forward(const BasicTensor<T>& conv_input, const BasicTensor<T>& lccl_input,
                             const AccelBlock<T>& block, Mode mode,
                             const AccelOptions& options = {}, LcclCache<T>* cache = nullptr) {
  const ConvSpec& spec = block.conv.spec;
  const auto d = FeatureDims::of(conv_input.shape());
  const std::size_t rows = d.n * spec.positions();
  const std::uint64_t dense =
      static_cast<std::uint64_t>(rows) * spec.patch_size() * spec.out_channels;

  AccelResult<T> r;
  r.stats.form = block.lccl.form;
  r.stats.positions = rows;
  r.stats.dense_macs = dense;

  if (options.path == Path::kDense) {
    r.v = conv_gemm(conv_input, block.conv.weights, spec, options.workers);
    r.output = r.v;
    r.stats.kept_rows = rows;
    r.stats.performed_macs = dense;
    r.stats.rows_gathered = rows;
    return r;
  }

  MacCounter lccl_counter;
  r.v_prime = lccl_forward(lccl_input, block, mode, cache, options.workers, &lccl_counter);
  r.stats.lccl_macs = lccl_counter.performed;
  r.stats.gate_cells = r.v_prime.size();
  r.stats.gate_zeros = count_zeros<T>(r.v_prime.data());

  MacCounter counter;
  const bool shared = block.lccl.form == LcclForm::kSharedAcrossFilters;
  if (shared && options.path == Path::kMasked) {
    RowMask mask;
    if (options.forced_kept) {
      const double f = std::clamp(*options.forced_kept, 0.0, 1.0);
      mask = RowMask::evenly_spaced(rows, static_cast<std::size_t>(
                                              std::llround(f * static_cast<double>(rows))));
    } else {
      mask = RowMask::nonzero<T>(r.v_prime.data());
    }
    r.v = conv_gemm_masked(conv_input, block.conv.weights, spec, mask, options.workers,
                           &counter);
    r.stats.kept_rows = mask.kept_count();
    r.stats.performed_macs = counter.performed;
    r.stats.skipped_macs = counter.skipped;
  } else {
    r.v = conv_gemm(conv_input, block.conv.weights, spec, options.workers, &counter);
    r.stats.kept_rows = rows;
    if (shared) {
      r.stats.performed_macs = counter.performed;
    } else {
      // Pointwise form: computed densely, work accounted per gated cell.
      const std::uint64_t per_cell = spec.patch_size();
      r.stats.performed_macs = (r.stats.gate_cells - r.stats.gate_zeros) * per_cell;
      r.stats.skipped_macs = r.stats.gate_zeros * per_cell;
    }
  }
  r.stats.rows_gathered = counter.rows_gathered;
  r.output = gate(r.v_prime, r.v);
  return r;
}

template <std::floating_point T>
AccelResult<T> accel_forward(const BasicTensor<T>& input, const AccelBlock<T>& block, Mode mode,
                             const AccelOptions& options = {}) {
  return accel_forward(input, input, block, mode, options);
}

/// mu * ||x||_2 + rho * ||x||_1.
template <std::floating_point T>
double smooth_l1l2(const BasicTensor<T>& x, double mu, double rho) {
  if (mu < 0 || rho < 0) throw ConfigError("smooth_l1l2: mu and rho must be >= 0");
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    sq += v * v;
    ab += std::abs(v);
  }
  return mu * std::sqrt(sq) + rho * ab;
}

/// mu * x / ||x|| + rho * sign(x); zero where x = 0, no L2 term at the origin.
template <std::floating_point T>
BasicTensor<T> smooth_l1l2_grad(const BasicTensor<T>& x, double mu, double rho) {
  if (mu < 0 || rho < 0) throw ConfigError("smooth_l1l2_grad: mu and rho must be >= 0");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += static_cast<double>(x[i]) * x[i];
  const double norm = std::sqrt(sq);
  BasicTensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    if (v == 0.0) continue;
    const double l2 = norm > 0 ? mu * v / norm : 0.0;
    g[i] = static_cast<T>(l2 + rho * (v > 0 ? 1.0 : -1.0));
  }
  return g;
}

}  // namespace lccn
