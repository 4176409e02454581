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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lccn/conv.hpp"
#include "lccn/graph.hpp"
#include "lccn/lccl.hpp"
#include "lccn/tensor.hpp"

namespace lccn {

/// Backward called without the forward state it needs.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Loss became NaN or infinite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct SgdConfig {
  double base_lr = 0.1;
  double warmup_lr = 0.01;
  double warmup_fraction = 0.03;
  std::vector<double> decay_points{0.45, 0.70, 0.90};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 50;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double mu = 0.0;   // smooth L1L2 on every V', off by default
  double rho = 0.0;
  int workers = 1;
  int eval_batch = 64;
};

/// Warmup rate for the first warmup_fraction of iterations, then base_lr
/// scaled by decay_factor once per decay point already passed.
inline double lr_at(const SgdConfig& cfg, std::size_t iter, std::size_t total) {
  if (total == 0 || iter >= total) throw ConfigError("lr_at: iteration out of range");
  const double f = static_cast<double>(iter) / static_cast<double>(total);
  if (f < cfg.warmup_fraction) return cfg.warmup_lr;
  double lr = cfg.base_lr;
  for (double p : cfg.decay_points)
    if (f >= p) lr *= cfg.decay_factor;
  return lr;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct DatasetConfig {
  int size = 8;
  int channels = 3;
  int classes = 4;
  int train = 256;
  int val = 64;
  double noise = 0.35;
  std::uint64_t seed = 0;
};

struct ToyDataset {
  DatasetConfig config;
  Tensor train_x;  // (N, X, Y, C)
  std::vector<int> train_y;
  Tensor val_x;
  std::vector<int> val_y;
};

namespace detail {

/// Class-dependent pattern: stripes of a class-specific orientation and
/// frequency, or a blob for every fourth class, tinted per channel.
inline float toy_pattern(int cls, int x, int y, int c, int size, int channels, double phase,
                         double amp) {
  const double pi = 3.14159265358979323846;
  const double u = static_cast<double>(x) / size, v = static_cast<double>(y) / size;
  const int family = cls % 4;
  const double freq = 1.0 + cls / 4;
  double s = 0.0;
  switch (family) {
    case 0: s = std::sin(2 * pi * freq * u + phase); break;
    case 1: s = std::sin(2 * pi * freq * v + phase); break;
    case 2: s = std::sin(2 * pi * freq * (u + v) / 1.4142 + phase); break;
    default: {
      const double cx = 0.5 + 0.15 * std::cos(phase), cy = 0.5 + 0.15 * std::sin(phase);
      const double r2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
      s = 2.0 * std::exp(-r2 / (0.05 * freq)) - 0.5;
    }
  }
  const double tint = 0.6 + 0.4 * std::cos(2 * pi * (c + cls) / std::max(channels, 2));
  return static_cast<float>(amp * s * tint);
}

inline void fill_split(Tensor& xs, std::vector<int>& ys, int count, const DatasetConfig& cfg,
                       std::mt19937_64& rng) {
  xs = Tensor(Shape{count, cfg.size, cfg.size, cfg.channels});
  ys.resize(static_cast<std::size_t>(count));
  std::uniform_real_distribution<double> phase(0.0, 6.283185307179586);
  std::uniform_real_distribution<double> amp(0.7, 1.3);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  std::size_t i = 0;
  for (int n = 0; n < count; ++n) {
    const int cls = n % cfg.classes;
    ys[static_cast<std::size_t>(n)] = cls;
    const double ph = phase(rng), a = amp(rng);
    for (int x = 0; x < cfg.size; ++x)
      for (int y = 0; y < cfg.size; ++y)
        for (int c = 0; c < cfg.channels; ++c)
          xs[i++] = toy_pattern(cls, x, y, c, cfg.size, cfg.channels, ph, a) +
                    static_cast<float>(noise(rng));
  }
}

}  // namespace detail

/// Seeded, bit-reproducible synthetic classification data.
inline ToyDataset make_toy_dataset(const DatasetConfig& cfg) {
  if (cfg.size < 2 || cfg.channels < 1 || cfg.classes < 2 || cfg.train < 1 || cfg.val < 1 ||
      cfg.noise < 0) {
    throw ConfigError("invalid toy dataset configuration");
  }
  ToyDataset d;
  d.config = cfg;
  std::mt19937_64 rng(cfg.seed ^ 0x5eedda7aULL);
  detail::fill_split(d.train_x, d.train_y, cfg.train, cfg, rng);
  detail::fill_split(d.val_x, d.val_y, cfg.val, cfg, rng);
  return d;
}

/// Rows `idx` of a rank-4 batch.
template <std::floating_point T>
BasicTensor<T> gather_batch(const BasicTensor<T>& x, std::span<const std::size_t> idx) {
  if (x.shape().rank() != 4) throw ShapeError("gather_batch expects a rank-4 batch");
  const std::size_t per = x.size() / x.shape()[0];
  std::vector<T> out(idx.size() * per);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.shape()[0]) throw ShapeError("gather_batch index out of range");
    std::copy_n(x.raw() + idx[i] * per, per, out.data() + i * per);
  }
  return BasicTensor<T>(Shape{static_cast<std::int64_t>(idx.size()),
                              static_cast<std::int64_t>(x.shape()[1]),
                              static_cast<std::int64_t>(x.shape()[2]),
                              static_cast<std::int64_t>(x.shape()[3])},
                        std::move(out));
}

// ---------------------------------------------------------------------------
// Backward primitives

/// Subgradient 0 at exactly 0.
template <std::floating_point T>
BasicTensor<T> backward_relu(const BasicTensor<T>& dy, const BasicTensor<T>& activated) {
  if (dy.shape() != activated.shape()) throw ShapeError("backward_relu shape mismatch");
  BasicTensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = activated[i] > T(0) ? dy[i] : T(0);
  return dx;
}

/// Accumulates dgamma/dbeta and returns dx. Train mode differentiates through
/// the batch statistics; infer mode treats them as constants.
template <std::floating_point T>
BasicTensor<T> backward_bn(const BasicTensor<T>& dy, const BnCache<T>& cache,
                           const BatchNorm<T>& bn, BasicTensor<T>* dgamma, BasicTensor<T>* dbeta) {
  if (cache.xhat.empty() || cache.xhat.shape() != dy.shape()) {
    throw UsageError("backward_bn: missing or mismatched forward cache");
  }
  const std::size_t C = bn.channels(), P = dy.size() / C;
  std::vector<double> sum(C, 0.0), sum_xhat(C, 0.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const double g = dy[p * C + c];
      sum[c] += g;
      sum_xhat[c] += g * static_cast<double>(cache.xhat[p * C + c]);
    }
  for (std::size_t c = 0; c < C; ++c) {
    if (dgamma) (*dgamma)[c] += static_cast<T>(sum_xhat[c]);
    if (dbeta) (*dbeta)[c] += static_cast<T>(sum[c]);
  }
  BasicTensor<T> dx(dy.shape());
  const bool train = cache.mode == Mode::kTrain;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      const double scale = static_cast<double>(bn.gamma[c]) * cache.invstd[c];
      double g = dy[i];
      if (train) {
        g -= (sum[c] + static_cast<double>(cache.xhat[i]) * sum_xhat[c]) / static_cast<double>(P);
      }
      dx[i] = static_cast<T>(scale * g);
    }
  return dx;
}

/// dW += U*^T dV (in (t,i,j,c) layout); returns dU via col2im of dV W*^T.
template <std::floating_point T>
BasicTensor<T> backward_conv(const BasicTensor<T>& dy, const BasicTensor<T>& input,
                             const BasicTensor<T>& weights, const ConvSpec& spec,
                             BasicTensor<T>* dweights, int workers = 1,
                             bool need_input_grad = true) {
  if (input.empty()) throw UsageError("backward_conv: missing cached input");
  const Matrix<T> cols = im2col(input, spec);
  const std::size_t M = cols.rows, K = cols.cols, N = static_cast<std::size_t>(spec.out_channels);
  if (dy.size() != M * N) throw ShapeError("backward_conv: upstream does not match " + spec.to_string());
  if (dweights) {
    Matrix<T> dyt(N, M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t t = 0; t < N; ++t) dyt.at(t, m) = dy[m * N + t];
    std::vector<T> dw(N * K);
    gemm_into<T>(dyt.data, cols.data, dw, N, M, K, workers);
    for (std::size_t i = 0; i < dw.size(); ++i) (*dweights)[i] += dw[i];
  }
  if (!need_input_grad) return {};
  Matrix<T> dcols(M, K);
  gemm_into<T>(dy.data(), weights.data(), dcols.data, M, N, K, workers);
  BasicTensor<T> dx(input.shape());
  col2im_add(dcols, spec, dx);
  return dx;
}

template <std::floating_point T>
struct GateGrads {
  BasicTensor<T> d_v_prime;
  BasicTensor<T> d_v;
};

/// dV = dV* V' (0 where V' = 0); dV' = dV* V, summed over channels when V' is
/// a single broadcast channel.
template <std::floating_point T>
GateGrads<T> backward_gate(const BasicTensor<T>& d_out, const BasicTensor<T>& v_prime,
                           const BasicTensor<T>& v) {
  const auto dp = FeatureDims::of(v_prime.shape());
  const auto dv = FeatureDims::of(v.shape());
  if (d_out.shape() != v.shape() || dp.positions() != dv.positions() ||
      (dp.c != dv.c && dp.c != 1)) {
    throw ShapeError("backward_gate shape mismatch");
  }
  GateGrads<T> g{BasicTensor<T>(v_prime.shape()), BasicTensor<T>(v.shape())};
  const std::size_t C = dv.c;
  for (std::size_t p = 0; p < dv.positions(); ++p)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      const std::size_t gi = dp.c == 1 ? p : i;
      const T gv = v_prime[gi];
      g.d_v[i] = gv == T(0) ? T(0) : d_out[i] * gv;
      g.d_v_prime[gi] += d_out[i] * v[i];
    }
  return g;
}

/// Mean softmax cross-entropy over the batch; optional gradient wrt logits.
template <std::floating_point T>
double softmax_xent(const BasicTensor<T>& logits, const std::vector<int>& labels,
                    BasicTensor<T>* dlogits = nullptr) {
  if (logits.shape().rank() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("softmax_xent: logits must be (N, classes) with N labels");
  }
  const std::size_t N = logits.shape()[0], K = logits.shape()[1];
  if (dlogits) *dlogits = BasicTensor<T>(logits.shape());
  double loss = 0.0;
  std::vector<double> p(K);
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw ConfigError("label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(logits[n * K + k]));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += p[k] = std::exp(logits[n * K + k] - mx);
    loss += std::log(z) - (logits[n * K + static_cast<std::size_t>(y)] - mx);
    if (dlogits)
      for (std::size_t k = 0; k < K; ++k)
        (*dlogits)[n * K + k] =
            static_cast<T>((p[k] / z - (k == static_cast<std::size_t>(y) ? 1.0 : 0.0)) / N);
  }
  return loss / static_cast<double>(N);
}

/// A graph of the same shape with every tensor zeroed; used for gradients and
/// momentum buffers.
template <std::floating_point T>
Graph<T> zeros_like(const Graph<T>& g) {
  Graph<T> z = g;
  visit_params(z, [](const std::string&, BasicTensor<T>& t, ParamKind) { t.fill(T(0)); });
  return z;
}

/// Smooth L1L2 penalty summed over every collaborative map recorded in a tape.
template <std::floating_point T>
double tape_penalty(const Tape<T>& tape, double mu, double rho) {
  if (mu == 0.0 && rho == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& block : tape.blocks)
    for (const auto& ut : block)
      if (!ut.v_prime.empty()) s += smooth_l1l2(ut.v_prime, mu, rho);
  return s;
}

/// Backpropagates dlogits through a train-mode tape, accumulating into `grad`.
template <std::floating_point T>
void backward(const Graph<T>& g, const Tape<T>& tape, const BasicTensor<T>& dlogits, double mu,
              double rho, Graph<T>& grad, int workers = 1) {
  if (tape.blocks.size() != g.blocks.size() || tape.pooled.empty()) {
    throw UsageError("backward: tape does not belong to this graph");
  }
  // Classifier and global average pool.
  const std::size_t N = dlogits.shape()[0], K = g.fc.out(), W = g.fc.in();
  BasicTensor<T> dpooled(tape.pooled.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < K; ++o) {
      const T d = dlogits[n * K + o];
      grad.fc.bias[o] += d;
      for (std::size_t i = 0; i < W; ++i) {
        grad.fc.weight[o * W + i] += d * tape.pooled[n * W + i];
        dpooled[n * W + i] += d * g.fc.weight[o * W + i];
      }
    }
  const auto hd = FeatureDims::of(tape.head_activated.shape());
  BasicTensor<T> dact(tape.head_activated.shape());
  const T inv = T(1) / static_cast<T>(hd.x * hd.y);
  for (std::size_t n = 0; n < hd.n; ++n)
    for (std::size_t p = 0; p < hd.x * hd.y; ++p)
      for (std::size_t c = 0; c < hd.c; ++c)
        dact[(n * hd.x * hd.y + p) * hd.c + c] = dpooled[n * hd.c + c] * inv;
  BasicTensor<T> d = backward_bn(backward_relu(dact, tape.head_activated), tape.head_bn,
                                 g.head_bn, &grad.head_bn.gamma, &grad.head_bn.beta);

  auto add_into = [](BasicTensor<T>& a, const BasicTensor<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };

  for (std::size_t b = g.blocks.size(); b-- > 0;) {
    const auto& block = g.blocks[b];
    const auto& bt = tape.blocks[b];
    auto& gblock = grad.blocks[b];
    BasicTensor<T> proj_dact;
    BasicTensor<T> shortcut_grad;
    if (block.projection) {
      proj_dact = backward_conv(d, bt[0].activated, block.projection->weights,
                                block.projection->spec, &gblock.projection->weights, workers);
    } else {
      shortcut_grad = d;
    }
    for (std::size_t u = block.units.size(); u-- > 0;) {
      const auto& unit = block.units[u];
      const auto& ut = bt[u];
      auto& gu = gblock.units[u];
      if (ut.skipped || ut.activated.empty()) throw UsageError("backward: incomplete tape");
      BasicTensor<T> dv;
      BasicTensor<T> dlccl_in;
      const auto* a = unit.accel();
      if (a) {
        auto gg = backward_gate(d, ut.v_prime, ut.v);
        if (mu != 0.0 || rho != 0.0) add_into(gg.d_v_prime, smooth_l1l2_grad(ut.v_prime, mu, rho));
        BasicTensor<T> dl = backward_relu(gg.d_v_prime, ut.lccl.activated);
        auto* ga = gu.accel();
        if (a->lccl.use_bn) {
          dl = backward_bn(dl, ut.lccl.bn, a->lccl.bn, &ga->lccl.bn.gamma, &ga->lccl.bn.beta);
        }
        const BasicTensor<T>& lin = a->lccl.input == Connection::kBef ? ut.input : ut.activated;
        dlccl_in = backward_conv(dl, lin, a->lccl.weights, a->lccl_spec(), &ga->lccl.weights,
                                 workers);
        dv = std::move(gg.d_v);
      } else {
        dv = std::move(d);
      }
      BasicTensor<T> da = backward_conv(dv, ut.activated, unit.conv().weights, unit.conv().spec,
                                        &gu.conv().weights, workers);
      if (a && a->lccl.input == Connection::kAft) add_into(da, dlccl_in);
      if (u == 0 && block.projection) add_into(da, proj_dact);
      BasicTensor<T> dx = backward_bn(backward_relu(da, ut.activated), ut.bn, unit.pre_bn,
                                      &gu.pre_bn.gamma, &gu.pre_bn.beta);
      if (a && a->lccl.input == Connection::kBef) add_into(dx, dlccl_in);
      d = std::move(dx);
    }
    if (!block.projection) add_into(d, shortcut_grad);
  }

  // Stem.
  if (g.stem_bn) {
    BasicTensor<T> dpre_pool(tape.stem_activated.shape());
    for (std::size_t i = 0; i < d.size(); ++i) dpre_pool[tape.pool_argmax[i]] += d[i];
    d = backward_bn(backward_relu(dpre_pool, tape.stem_activated), tape.stem_bn, *g.stem_bn,
                    &grad.stem_bn->gamma, &grad.stem_bn->beta);
  }
  (void)backward_conv(d, tape.input, g.stem.weights, g.stem.spec, &grad.stem.weights, workers,
                      false);
}

/// Train-mode loss (cross-entropy plus optional penalty). With `grad` set,
/// accumulates the full gradient into it.
template <std::floating_point T>
double loss_and_grad(const Graph<T>& g, const BasicTensor<T>& x, const std::vector<int>& y,
                     double mu, double rho, Graph<T>* grad = nullptr, Tape<T>* tape_out = nullptr,
                     int workers = 1, std::vector<int>* predictions = nullptr) {
  ExecOptions opts;
  opts.mode = Mode::kTrain;
  opts.workers = workers;
  Tape<T> local;
  Tape<T>& tape = tape_out ? *tape_out : local;
  auto res = forward(g, x, opts, &tape);
  BasicTensor<T> dlogits;
  double loss = softmax_xent(res.logits, y, grad ? &dlogits : nullptr);
  loss += tape_penalty(tape, mu, rho);
  if (predictions) {
    const std::size_t N = res.logits.shape()[0], K = res.logits.shape()[1];
    predictions->resize(N);
    for (std::size_t n = 0; n < N; ++n) {
      const auto* row = res.logits.raw() + n * K;
      (*predictions)[n] = static_cast<int>(std::max_element(row, row + K) - row);
    }
  }
  if (grad) backward(g, tape, dlogits, mu, rho, *grad, workers);
  return loss;
}

/// Folds the batch statistics of a train-mode tape into the running statistics.
template <std::floating_point T>
void update_running_stats(Graph<T>& g, const Tape<T>& tape) {
  if (g.stem_bn) bn_update_running(*g.stem_bn, tape.stem_bn);
  for (std::size_t b = 0; b < g.blocks.size(); ++b)
    for (std::size_t u = 0; u < g.blocks[b].units.size(); ++u) {
      auto& unit = g.blocks[b].units[u];
      const auto& ut = tape.blocks[b][u];
      bn_update_running(unit.pre_bn, ut.bn);
      if (auto* a = unit.accel(); a && a->lccl.use_bn) bn_update_running(a->lccl.bn, ut.lccl.bn);
    }
  bn_update_running(g.head_bn, tape.head_bn);
}

/// Momentum SGD: v = m v + (g + wd w), w -= lr v. Weight decay applies to
/// convolution and classifier weights only.
template <std::floating_point T>
void sgd_step(Graph<T>& g, const Graph<T>& grad, Graph<T>& velocity, const SgdConfig& cfg,
              double lr) {
  std::vector<const BasicTensor<T>*> gs;
  visit_params(grad, [&](const std::string&, const BasicTensor<T>& t, ParamKind k) {
    if (k == ParamKind::kLearnable) gs.push_back(&t);
  });
  std::vector<BasicTensor<T>*> vs;
  visit_params(velocity, [&](const std::string&, BasicTensor<T>& t, ParamKind k) {
    if (k == ParamKind::kLearnable) vs.push_back(&t);
  });
  std::size_t i = 0;
  visit_params(g, [&](const std::string& name, BasicTensor<T>& w, ParamKind k) {
    if (k != ParamKind::kLearnable) return;
    const bool decay = name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    const auto& gr = *gs[i];
    auto& v = *vs[i];
    ++i;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(gr[j]) + (decay ? cfg.weight_decay * w[j] : 0.0);
      v[j] = static_cast<T>(cfg.momentum * v[j] + gj);
      w[j] = static_cast<T>(w[j] - lr * v[j]);
    }
  });
}

// ---------------------------------------------------------------------------
// Evaluation and the training loop

struct EvalResult {
  std::size_t samples = 0;
  double loss = 0.0;  // mean cross-entropy; 0 without labels
  double accuracy = 0.0;
  std::vector<std::string> layers;  // accelerated convs
  std::vector<std::uint64_t> zeros, cells;

  double layer_sparsity(std::size_t i) const {
    return cells[i] ? static_cast<double>(zeros[i]) / static_cast<double>(cells[i]) : 0.0;
  }
  double mean_sparsity() const {
    if (layers.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < layers.size(); ++i) s += layer_sparsity(i);
    return s / static_cast<double>(layers.size());
  }
};

/// Inference over a dataset in chunks. Sparsity is the dataset-wide zero
/// fraction of each collaborative map, independent of the chunk size.
template <std::floating_point T>
EvalResult evaluate(const Graph<T>& g, const BasicTensor<T>& x, const std::vector<int>& y,
                    ExecOptions opts = {}, std::size_t batch = 64) {
  if (x.shape().rank() != 4) throw ShapeError("evaluate expects a rank-4 batch");
  if (!y.empty() && y.size() != x.shape()[0]) throw ShapeError("label count does not match data");
  opts.mode = Mode::kInfer;
  EvalResult r;
  const std::size_t N = x.shape()[0];
  r.samples = N;
  std::size_t correct = 0;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < N; start += batch) {
    const std::size_t end = std::min(N, start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto xb = gather_batch<T>(x, idx);
    auto res = forward(g, xb, opts);
    if (r.layers.empty()) {
      for (const auto& c : res.stats.convs)
        if (c.accelerated) r.layers.push_back(c.name);
      r.zeros.assign(r.layers.size(), 0);
      r.cells.assign(r.layers.size(), 0);
    }
    std::size_t a = 0;
    for (const auto& c : res.stats.convs) {
      if (!c.accelerated) continue;
      r.zeros[a] += c.stats.gate_zeros;
      r.cells[a] += c.stats.gate_cells;
      ++a;
    }
    if (!y.empty()) {
      const std::vector<int> yb(y.begin() + static_cast<std::ptrdiff_t>(start),
                                y.begin() + static_cast<std::ptrdiff_t>(end));
      loss += softmax_xent(res.logits, yb) * static_cast<double>(end - start);
      const std::size_t K = res.logits.shape()[1];
      for (std::size_t n = 0; n < yb.size(); ++n) {
        const auto* row = res.logits.raw() + n * K;
        correct += static_cast<std::size_t>(std::max_element(row, row + K) - row) ==
                   static_cast<std::size_t>(yb[n]);
      }
    }
  }
  if (!y.empty()) {
    r.loss = loss / static_cast<double>(N);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(N);
  }
  return r;
}

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;  // mean mini-batch training loss
  double train_acc = 0.0;
  double val_acc = 0.0;
  double mean_sparsity = 0.0;
  double lr = 0.0;
  std::vector<double> layer_sparsity;
};

struct TrainLog {
  std::vector<std::string> layers;
  std::vector<EpochLog> epochs;

  static std::string csv_header() { return "epoch,loss,train_acc,val_acc,mean_sparsity,lr"; }

  static std::string csv_row(const EpochLog& e) {
    char buf[192];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6g", e.epoch, e.loss, e.train_acc,
                  e.val_acc, e.mean_sparsity, e.lr);
    return buf;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << csv_header() << '\n';
    for (const auto& e : epochs) os << csv_row(e) << '\n';
    return os.str();
  }

  double initial_loss() const { return epochs.empty() ? 0.0 : epochs.front().loss; }
  double final_loss() const { return epochs.empty() ? 0.0 : epochs.back().loss; }
};

namespace detail {

template <std::floating_point T>
void fill_metrics(EpochLog& e, const Graph<T>& g, const ToyDataset& data, const SgdConfig& cfg) {
  ExecOptions opts;
  opts.workers = cfg.workers;
  const auto tr = evaluate(g, data.train_x.cast<T>(), data.train_y, opts,
                           static_cast<std::size_t>(cfg.eval_batch));
  const auto va = evaluate(g, data.val_x.cast<T>(), data.val_y, opts,
                           static_cast<std::size_t>(cfg.eval_batch));
  e.train_acc = tr.accuracy;
  e.val_acc = va.accuracy;
  e.mean_sparsity = tr.mean_sparsity();
  e.layer_sparsity.clear();
  for (std::size_t i = 0; i < tr.layers.size(); ++i) e.layer_sparsity.push_back(tr.layer_sparsity(i));
}

}  // namespace detail

/// Mini-batch SGD on the training split. Row 0 of the log is the train-mode
/// loss of the untouched initial network over the epoch-1 batches; metrics
/// after each epoch come from inference-mode evaluation. Deterministic in seed.
template <std::floating_point T>
TrainLog train(Graph<T>& g, const ToyDataset& data, const SgdConfig& cfg,
               const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch size must be >= 1");
  const std::size_t N = data.train_x.shape()[0];
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), N);
  const std::size_t per_epoch = (N + B - 1) / B;
  const std::size_t total = per_epoch * static_cast<std::size_t>(cfg.epochs);
  const BasicTensor<T> xs = data.train_x.cast<T>();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  auto shuffled = [&] {
    std::vector<std::size_t> o = order;
    for (std::size_t i = o.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(o[i - 1], o[pick(rng)]);
    }
    return o;
  };

  TrainLog log;
  for (const auto& b : g.blocks)
    for (std::size_t u = 0; u < b.units.size(); ++u)
      if (b.units[u].accel()) log.layers.push_back(b.name + ".u" + std::to_string(u));

  std::vector<std::vector<std::size_t>> epoch_orders;
  epoch_orders.push_back(shuffled());

  auto batch_at = [&](const std::vector<std::size_t>& o, std::size_t i, std::vector<int>& yb) {
    const std::size_t start = i * B, end = std::min(N, start + B);
    std::span<const std::size_t> idx(o.data() + start, end - start);
    yb.clear();
    for (auto j : idx) yb.push_back(data.train_y[j]);
    return gather_batch<T>(xs, idx);
  };

  {
    EpochLog e0;
    double sum = 0.0;
    std::vector<int> yb;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const auto xb = batch_at(epoch_orders[0], i, yb);
      sum += loss_and_grad<T>(g, xb, yb, cfg.mu, cfg.rho, nullptr, nullptr, cfg.workers);
    }
    e0.loss = sum / static_cast<double>(per_epoch);
    e0.lr = lr_at(cfg, 0, total);
    detail::fill_metrics(e0, g, data, cfg);
    log.epochs.push_back(e0);
    if (on_epoch) on_epoch(e0);
  }

  Graph<T> velocity = zeros_like(g);
  std::size_t iter = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto o = epoch == 1 ? epoch_orders[0] : shuffled();
    double sum = 0.0, lr = 0.0;
    std::vector<int> yb;
    for (std::size_t i = 0; i < per_epoch; ++i, ++iter) {
      const auto xb = batch_at(o, i, yb);
      Graph<T> grad = zeros_like(g);
      Tape<T> tape;
      const double loss = loss_and_grad<T>(g, xb, yb, cfg.mu, cfg.rho, &grad, &tape, cfg.workers);
      if (!std::isfinite(loss)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              ", iteration " + std::to_string(iter) + " (loss " +
                              std::to_string(loss) + ")");
      }
      sum += loss;
      lr = lr_at(cfg, iter, total);
      sgd_step(g, grad, velocity, cfg, lr);
      update_running_stats(g, tape);
    }
    EpochLog e;
    e.epoch = epoch;
    e.loss = sum / static_cast<double>(per_epoch);
    e.lr = lr;
    detail::fill_metrics(e, g, data, cfg);
    if (!std::isfinite(e.loss)) throw DivergenceError("training diverged at epoch " + std::to_string(epoch));
    log.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace lccn
