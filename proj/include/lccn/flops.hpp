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

// Theoretical FLOP formulas, counter-based reports and wall-clock comparison.
// One multiply-accumulate counts as one FLOP. Only convolution and classifier
// terms are counted; BN, ReLU, pooling, gating and residual adds are reported
// separately as unaccounted elementwise ops.
//
// Naming: `sparsity` is the zero fraction r of V'; `kept` = 1 - sparsity is the
// computed fraction, which is what multiplies the high-cost term below.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lccn/conv.hpp"
#include "lccn/graph.hpp"
#include "lccn/lccl.hpp"

namespace lccn {

/// X * Y * T * k^2 * C.
inline std::uint64_t dense_flops(const ConvSpec& s) {
  return static_cast<std::uint64_t>(s.positions()) * s.out_channels * s.patch_size();
}

namespace detail {
inline void check_kept(double kept) {
  if (!(kept >= 0.0 && kept <= 1.0)) {
    throw ConfigError("kept fraction must lie in [0, 1], got " + std::to_string(kept));
  }
}
inline double xyt(const ConvSpec& s) {
  return static_cast<double>(s.positions()) * static_cast<double>(s.out_channels);
}
}  // namespace detail

/// Collaborative-layer cost plus the kept part of the original convolution.
///  shared (k x k x C x 1):     X Y T k^2 (1 + C kept)
///  pointwise (1 x 1 x C x T):  X Y T C (1 + k^2 kept)
inline double lccl_flops(const ConvSpec& s, LcclForm form, double kept) {
  detail::check_kept(kept);
  const double k2 = static_cast<double>(s.k) * s.k;
  const double C = s.in_channels;
  if (form == LcclForm::kSharedAcrossFilters) return detail::xyt(s) * k2 * (1.0 + C * kept);
  return detail::xyt(s) * C * (1.0 + k2 * kept);
}

/// Basic form with a full k' x k' x C x T collaborative kernel: X Y T C (k'^2 + k^2 kept).
inline double lccl_flops_basic(const ConvSpec& s, int k_prime, double kept) {
  detail::check_kept(kept);
  const double k2 = static_cast<double>(s.k) * s.k;
  return detail::xyt(s) * s.in_channels * (static_cast<double>(k_prime) * k_prime + k2 * kept);
}

/// shared: 1 - (1/C + kept); pointwise: 1 - (1/k^2 + kept). Not clamped.
inline double speedup_ratio(const ConvSpec& s, LcclForm form, double kept) {
  detail::check_kept(kept);
  if (form == LcclForm::kSharedAcrossFilters) return 1.0 - (1.0 / s.in_channels + kept);
  return 1.0 - (1.0 / (static_cast<double>(s.k) * s.k) + kept);
}

/// 1 - (k'^2 / k^2 + kept).
inline double speedup_ratio_basic(const ConvSpec& s, int k_prime, double kept) {
  detail::check_kept(kept);
  return 1.0 - (static_cast<double>(k_prime) * k_prime / (static_cast<double>(s.k) * s.k) + kept);
}

struct FlopsRow {
  std::string layer;
  bool accelerated = false;
  LcclForm form = LcclForm::kSharedAcrossFilters;
  double sparsity = 0.0;
  double kept = 1.0;
  std::uint64_t dense_flops = 0;
  double lccl_flops = 0.0;  // theoretical cost; equals dense_flops for plain layers
  double theoretical_speedup = 0.0;
  std::uint64_t performed_macs = 0;
  std::uint64_t skipped_macs = 0;
  std::uint64_t lccl_macs = 0;
  bool block_skipped = false;
  std::optional<double> t_dense_ms;
  std::optional<double> t_masked_ms;

  std::optional<double> realistic_speedup() const {
    if (!t_dense_ms || !t_masked_ms || *t_dense_ms <= 0.0) return std::nullopt;
    return 1.0 - *t_masked_ms / *t_dense_ms;
  }
  std::string form_name() const { return accelerated ? to_string(form) : "none"; }
};

struct FlopsReport {
  std::vector<FlopsRow> rows;
  std::uint64_t elementwise_ops = 0;
  int workers = 1;
  std::optional<double> t_dense_ms;   // whole forward
  std::optional<double> t_masked_ms;

  std::uint64_t dense_total() const {
    std::uint64_t n = 0;
    for (const auto& r : rows) n += r.dense_flops;
    return n;
  }
  double theoretical_total() const {
    double n = 0;
    for (const auto& r : rows) n += r.lccl_flops;
    return n;
  }
  std::uint64_t counted_total() const {
    std::uint64_t n = 0;
    for (const auto& r : rows) n += r.performed_macs + r.lccl_macs;
    return n;
  }
  std::uint64_t skipped_total() const {
    std::uint64_t n = 0;
    for (const auto& r : rows) n += r.skipped_macs;
    return n;
  }
  double theoretical_speedup() const {
    const auto d = dense_total();
    return d ? 1.0 - theoretical_total() / static_cast<double>(d) : 0.0;
  }
  /// Same ratio from the instrumented counters.
  double counted_speedup() const {
    const auto d = dense_total();
    return d ? 1.0 - static_cast<double>(counted_total()) / static_cast<double>(d) : 0.0;
  }
  std::optional<double> realistic_speedup() const {
    if (!t_dense_ms || !t_masked_ms || *t_dense_ms <= 0.0) return std::nullopt;
    return 1.0 - *t_masked_ms / *t_dense_ms;
  }
  std::size_t accelerated_rows() const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const FlopsRow& r) { return r.accelerated; }));
  }

  static std::string csv_header() {
    return "layer,form,sparsity,kept,dense_flops,lccl_flops,theoretical_speedup,performed_macs,"
           "skipped_macs,t_dense_ms,t_masked_ms,realistic_speedup";
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << csv_header() << '\n';
    auto opt = [](const std::optional<double>& v) {
      if (!v) return std::string();
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *v);
      return std::string(buf);
    };
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%llu,%.1f,%.6f,%llu,%llu,", r.layer.c_str(),
                    r.form_name().c_str(), r.sparsity, r.kept,
                    static_cast<unsigned long long>(r.dense_flops), r.lccl_flops,
                    r.theoretical_speedup, static_cast<unsigned long long>(r.performed_macs),
                    static_cast<unsigned long long>(r.skipped_macs));
      os << buf << opt(r.t_dense_ms) << ',' << opt(r.t_masked_ms) << ','
         << opt(r.realistic_speedup()) << '\n';
    }
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %-9s %8s %8s %14s %14s %8s %10s %10s %9s\n", "layer",
                  "form", "sparsity", "kept", "dense_flops", "lccl_flops", "theo", "t_dense",
                  "t_masked", "real");
    os << buf;
    auto ms = [](const std::optional<double>& v) {
      char b[32];
      if (v) std::snprintf(b, sizeof b, "%.3f", *v);
      else std::snprintf(b, sizeof b, "-");
      return std::string(b);
    };
    auto pct = [](const std::optional<double>& v) {
      char b[32];
      if (v) std::snprintf(b, sizeof b, "%.1f%%", 100.0 * *v);
      else std::snprintf(b, sizeof b, "-");
      return std::string(b);
    };
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%-14s %-9s %8.4f %8.4f %14llu %14.0f %7.1f%% %10s %10s %9s\n",
                    r.layer.c_str(), r.form_name().c_str(), r.sparsity, r.kept,
                    static_cast<unsigned long long>(r.dense_flops), r.lccl_flops,
                    100.0 * r.theoretical_speedup, ms(r.t_dense_ms).c_str(),
                    ms(r.t_masked_ms).c_str(), pct(r.realistic_speedup()).c_str());
      os << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "total: dense %.3e  theoretical %.3e  counted %.3e  skipped %.3e\n",
                  static_cast<double>(dense_total()), theoretical_total(),
                  static_cast<double>(counted_total()), static_cast<double>(skipped_total()));
    os << buf;
    std::snprintf(buf, sizeof buf, "speedup: theoretical %.1f%%  counted %.1f%%  realistic %s\n",
                  100.0 * theoretical_speedup(), 100.0 * counted_speedup(),
                  pct(realistic_speedup()).c_str());
    os << buf;
    std::snprintf(buf, sizeof buf, "unaccounted elementwise ops: %.3e  workers: %d\n",
                  static_cast<double>(elementwise_ops), workers);
    os << buf;
    return os.str();
  }
};

/// Per-layer rows from one forward's stats. Accelerated layers use their
/// measured kept fraction in the theoretical formula.
inline FlopsReport make_report(const RunStats& stats) {
  FlopsReport rep;
  for (const auto& c : stats.convs) {
    FlopsRow r;
    r.layer = c.name;
    r.accelerated = c.accelerated;
    r.form = c.stats.form;
    r.dense_flops = c.stats.dense_macs;
    r.performed_macs = c.stats.performed_macs;
    r.skipped_macs = c.stats.skipped_macs;
    r.lccl_macs = c.stats.lccl_macs;
    r.block_skipped = c.block_skipped;
    if (c.accelerated) {
      r.sparsity = c.stats.sparsity();
      r.kept = c.stats.kept();
      if (c.block_skipped) {
        r.lccl_flops = 0.0;
        r.theoretical_speedup = 1.0;
      } else {
        // Per-image formula scaled by batch: positions already include N.
        ConvSpec s = c.spec;
        const double batch =
            static_cast<double>(c.stats.positions) / static_cast<double>(s.positions());
        r.lccl_flops = batch * lccl_flops(s, c.stats.form, r.kept);
        r.theoretical_speedup = speedup_ratio(s, c.stats.form, r.kept);
      }
    } else {
      r.sparsity = 0.0;
      r.kept = c.block_skipped ? 0.0 : 1.0;
      r.lccl_flops = c.block_skipped ? 0.0 : static_cast<double>(r.dense_flops);
      r.theoretical_speedup = c.block_skipped ? 1.0 : 0.0;
    }
    rep.rows.push_back(std::move(r));
  }
  if (stats.fc_macs) {
    FlopsRow fc;
    fc.layer = "fc";
    fc.dense_flops = stats.fc_macs;
    fc.performed_macs = stats.fc_macs;
    fc.lccl_flops = static_cast<double>(stats.fc_macs);
    rep.rows.push_back(std::move(fc));
  }
  rep.elementwise_ops = stats.elementwise_ops;
  return rep;
}

/// Dense multiply-accumulates of one image through the graph.
template <std::floating_point T>
std::uint64_t dense_flops(const Graph<T>& g) {
  std::uint64_t n = dense_flops(g.stem.spec);
  for (const auto& b : g.blocks) {
    for (const auto& u : b.units) n += dense_flops(u.conv().spec);
    if (b.projection) n += dense_flops(b.projection->spec);
  }
  return n + static_cast<std::uint64_t>(g.fc.in()) * g.fc.out();
}

/// Whole-graph theoretical speedup if every accelerated layer keeps `kept`.
template <std::floating_point T>
double graph_theoretical_speedup(const Graph<T>& g, double kept) {
  const double dense = static_cast<double>(dense_flops(g));
  double cost = dense;
  for (const auto& b : g.blocks)
    for (const auto& u : b.units)
      if (const auto* a = u.accel())
        cost += lccl_flops(a->conv.spec, a->lccl.form, kept) -
                static_cast<double>(dense_flops(a->conv.spec));
  return 1.0 - cost / dense;
}

/// Uniform kept fraction at which the graph reaches `target` theoretical
/// speedup. The speedup is affine in kept, so two evaluations suffice.
template <std::floating_point T>
double implied_kept(const Graph<T>& g, double target) {
  const double s0 = graph_theoretical_speedup(g, 0.0);
  const double s1 = graph_theoretical_speedup(g, 1.0);
  if (s0 == s1) throw ConfigError("graph has no accelerated layers");
  return std::clamp((s0 - target) / (s0 - s1), 0.0, 1.0);
}

struct BenchOptions {
  int reps = 5;
  int warmup = 3;
  int workers = 1;
  std::optional<double> forced_kept;
};

namespace detail {
inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}
}  // namespace detail

/// Times the plain (collaborative layers ignored) and masked executions of the
/// same graph, alternating per repetition, and reports per-layer medians.
template <std::floating_point T>
FlopsReport compare_realistic(const Graph<T>& g, const BasicTensor<T>& input,
                              const BenchOptions& options = {}) {
  if (options.reps < 1) throw ConfigError("repetitions must be >= 1");
  ExecOptions masked;
  masked.path = Path::kMasked;
  masked.workers = options.workers;
  masked.timing = true;
  masked.forced_kept = options.forced_kept;
  ExecOptions dense = masked;
  dense.path = Path::kDense;
  dense.forced_kept.reset();

  for (int i = 0; i < options.warmup; ++i) {
    (void)forward(g, input, dense);
    (void)forward(g, input, masked);
  }
  RunStats last;
  std::vector<std::vector<double>> td, tm;
  std::vector<double> total_d, total_m;
  for (int i = 0; i < options.reps; ++i) {
    auto rd = forward(g, input, dense);
    auto rm = forward(g, input, masked);
    if (td.empty()) {
      td.resize(rd.stats.convs.size());
      tm.resize(rm.stats.convs.size());
    }
    for (std::size_t l = 0; l < td.size(); ++l) td[l].push_back(rd.stats.convs[l].wall_ms);
    for (std::size_t l = 0; l < tm.size(); ++l) tm[l].push_back(rm.stats.convs[l].wall_ms);
    total_d.push_back(rd.stats.total_ms);
    total_m.push_back(rm.stats.total_ms);
    last = std::move(rm.stats);
  }
  FlopsReport rep = make_report(last);
  for (std::size_t l = 0; l < last.convs.size(); ++l) {
    rep.rows[l].t_dense_ms = detail::median(td[l]);
    rep.rows[l].t_masked_ms = detail::median(tm[l]);
  }
  rep.t_dense_ms = detail::median(total_d);
  rep.t_masked_ms = detail::median(total_m);
  rep.workers = options.workers;
  return rep;
}

struct LayerBench {
  ConvSpec spec;
  double kept = 0.0;
  double t_dense_ms = 0.0;   // median plain conv_gemm
  double t_masked_ms = 0.0;  // median collaborative layer + masked conv + gate
  double theoretical_speedup = 0.0;
  AccelStats stats;
  double realistic_speedup() const { return t_dense_ms > 0 ? 1.0 - t_masked_ms / t_dense_ms : 0.0; }
};

/// Single-layer benchmark of the shared-form skip path with a forced mask.
inline LayerBench bench_accel_layer(const ConvSpec& spec, double kept, int reps, int workers = 1,
                                    int warmup = 3, std::uint64_t seed = 1) {
  if (reps < 1) throw ConfigError("repetitions must be >= 1");
  std::mt19937_64 rng(seed);
  const auto block = make_accel_block<float>(spec, LcclForm::kSharedAcrossFilters, true,
                                             Connection::kAft, rng);
  Tensor input(spec.input_shape());
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (std::size_t i = 0; i < input.size(); ++i) input[i] = dist(rng);

  AccelOptions opts;
  opts.path = Path::kMasked;
  opts.workers = workers;
  opts.forced_kept = kept;
  LayerBench out;
  out.spec = spec;
  out.kept = kept;
  for (int i = 0; i < warmup; ++i) {
    (void)conv_gemm(input, block.conv.weights, spec, workers);
    (void)accel_forward(input, block, Mode::kInfer, opts);
  }
  std::vector<double> td, tm;
  for (int i = 0; i < reps; ++i) {
    detail::Stopwatch a;
    auto v = conv_gemm(input, block.conv.weights, spec, workers);
    td.push_back(a.ms());
    detail::Stopwatch b;
    auto r = accel_forward(input, block, Mode::kInfer, opts);
    tm.push_back(b.ms());
    out.stats = r.stats;
  }
  out.t_dense_ms = detail::median(td);
  out.t_masked_ms = detail::median(tm);
  out.theoretical_speedup = speedup_ratio(spec, LcclForm::kSharedAcrossFilters, out.stats.kept());
  return out;
}

}  // namespace lccn
