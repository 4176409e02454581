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

// Pre-activation residual networks whose residual convolutions may carry a
// collaborative layer. A unit is BN -> ReLU -> conv; a block is a list of units
// plus an identity or 1x1 projection shortcut reading the first unit's
// activated input. Architectures are table-driven (ArchConfig) so widened and
// desk-scale variants need no code changes.

#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lccn/conv.hpp"
#include "lccn/lccl.hpp"
#include "lccn/tensor.hpp"

namespace lccn {

enum class BlockKind { kBasic, kBottleneck };

/// Which residual convolutions receive a collaborative layer.
///  kDense: none.  kAll: every residual conv.
///  kStandard: the default choice per architecture (bottleneck: first and second
///    conv; ImageNet ResNet-34: all but the first block of each stage).
///  kStandardCifar100: as kStandard, but bottleneck blocks only accelerate the 3x3 conv.
enum class AccelPreset { kDense, kStandard, kStandardCifar100, kAll };

inline AccelPreset parse_accel_preset(const std::string& s) {
  if (s == "dense") return AccelPreset::kDense;
  if (s == "standard") return AccelPreset::kStandard;
  if (s == "standard-c100") return AccelPreset::kStandardCifar100;
  if (s == "all") return AccelPreset::kAll;
  throw ConfigError("unknown accel preset '" + s + "' (expected dense|standard|standard-c100|all)");
}

struct StemConfig {
  int k = 3;
  int stride = 1;
  int pad = 1;
  int out_channels = 16;
  bool bn_relu_pool = false;  // BN, ReLU, 3x3/2 max pool after the conv
};

struct StageConfig {
  int width = 16;  // bottleneck inner width; block output is 4x that
  int blocks = 1;
  int stride = 1;
  bool operator==(const StageConfig&) const = default;
};

struct ArchConfig {
  std::string name;
  int input_x = 32, input_y = 32, input_c = 3;
  int classes = 10;
  StemConfig stem;
  BlockKind kind = BlockKind::kBasic;
  std::vector<StageConfig> stages;
  LcclForm lccl_form = LcclForm::kSharedAcrossFilters;
  bool lccl_bn = true;
  std::vector<std::vector<bool>> accelerate;      // [block][unit]
  std::vector<std::vector<Connection>> strategy;  // [block][unit]

  int units_per_block() const { return kind == BlockKind::kBasic ? 2 : 3; }
  int expansion() const { return kind == BlockKind::kBasic ? 1 : 4; }
  int total_blocks() const {
    int n = 0;
    for (const auto& s : stages) n += s.blocks;
    return n;
  }

  /// Fills accelerate/strategy with defaults (dense, Aft) where missing.
  void normalize() {
    const auto nb = static_cast<std::size_t>(total_blocks());
    const auto nu = static_cast<std::size_t>(units_per_block());
    accelerate.resize(nb);
    strategy.resize(nb);
    for (auto& a : accelerate) a.resize(nu, false);
    for (auto& s : strategy) s.resize(nu, Connection::kAft);
  }

  void validate() const {
    if (input_x < 1 || input_y < 1 || input_c < 1 || classes < 1) {
      throw ConfigError("architecture '" + name + "': input extents and classes must be >= 1");
    }
    if (stages.empty()) throw ConfigError("architecture '" + name + "' has no stages");
    for (const auto& s : stages) {
      if (s.width < 1 || s.blocks < 1 || s.stride < 1) {
        throw ConfigError("architecture '" + name + "': invalid stage");
      }
    }
    const auto nb = static_cast<std::size_t>(total_blocks());
    const auto nu = static_cast<std::size_t>(units_per_block());
    if (accelerate.size() != nb || strategy.size() != nb) {
      throw ConfigError("architecture '" + name + "': per-block flags do not match block count");
    }
    for (std::size_t b = 0; b < nb; ++b) {
      if (accelerate[b].size() != nu || strategy[b].size() != nu) {
        throw ConfigError("architecture '" + name + "': per-unit flags do not match block kind");
      }
    }
  }

  /// Applies a connection pattern such as "aft-aft" or "bef-aft" to every block;
  /// unit u uses token min(u, tokens - 1).
  void set_strategy(const std::string& pattern) {
    std::vector<Connection> tokens;
    std::size_t start = 0;
    while (start <= pattern.size()) {
      const auto dash = pattern.find('-', start);
      const auto end = dash == std::string::npos ? pattern.size() : dash;
      tokens.push_back(parse_connection(pattern.substr(start, end - start)));
      if (dash == std::string::npos) break;
      start = dash + 1;
    }
    normalize();
    for (auto& block : strategy)
      for (std::size_t u = 0; u < block.size(); ++u)
        block[u] = tokens[std::min(u, tokens.size() - 1)];
  }

  bool operator==(const ArchConfig& o) const {
    return name == o.name && input_x == o.input_x && input_y == o.input_y &&
           input_c == o.input_c && classes == o.classes && stem.k == o.stem.k &&
           stem.stride == o.stem.stride && stem.pad == o.stem.pad &&
           stem.out_channels == o.stem.out_channels && stem.bn_relu_pool == o.stem.bn_relu_pool &&
           kind == o.kind && stages == o.stages && lccl_form == o.lccl_form &&
           lccl_bn == o.lccl_bn && accelerate == o.accelerate && strategy == o.strategy;
  }
};

namespace detail {

inline void fill_accel(ArchConfig& cfg, AccelPreset preset, bool skip_first_block_per_stage) {
  cfg.normalize();
  std::size_t b = 0;
  for (const auto& stage : cfg.stages) {
    for (int i = 0; i < stage.blocks; ++i, ++b) {
      auto& flags = cfg.accelerate[b];
      for (std::size_t u = 0; u < flags.size(); ++u) {
        bool on = preset != AccelPreset::kDense;
        if (cfg.kind == BlockKind::kBottleneck && preset == AccelPreset::kStandard) on = u < 2;
        if (cfg.kind == BlockKind::kBottleneck && preset == AccelPreset::kStandardCifar100) on = u == 1;
        if (skip_first_block_per_stage && preset != AccelPreset::kAll && i == 0) on = false;
        flags[u] = on;
      }
    }
  }
}

}  // namespace detail

/// CIFAR-style pre-activation ResNet: depth 6n+2 (basic) or 9n+2 (bottleneck),
/// 32x32 input, three stages of base width 16/32/64 times `widen`.
inline ArchConfig cifar_resnet_config(int depth, int widen, AccelPreset preset,
                                      BlockKind kind = BlockKind::kBasic, int classes = 10) {
  const int per = kind == BlockKind::kBasic ? 6 : 9;
  if (depth < per + 2 || (depth - 2) % per != 0) {
    throw ConfigError("CIFAR ResNet depth must be " + std::string(per == 6 ? "6n+2" : "9n+2") +
                      ", got " + std::to_string(depth));
  }
  if (widen < 1) throw ConfigError("widen factor must be >= 1");
  const int n = (depth - 2) / per;
  ArchConfig cfg;
  cfg.name = "resnet" + std::to_string(depth) + (widen > 1 ? "-" + std::to_string(widen) : "") +
             "-cifar";
  cfg.classes = classes;
  cfg.kind = kind;
  cfg.stem = StemConfig{3, 1, 1, 16, false};
  cfg.stages = {{16 * widen, n, 1}, {32 * widen, n, 2}, {64 * widen, n, 2}};
  detail::fill_accel(cfg, preset, false);
  return cfg;
}

/// ImageNet pre-activation ResNet-18/34 at 224x224.
inline ArchConfig imagenet_resnet_config(int depth, AccelPreset preset) {
  std::vector<int> blocks;
  if (depth == 18) blocks = {2, 2, 2, 2};
  else if (depth == 34) blocks = {3, 4, 6, 3};
  else throw ConfigError("ImageNet ResNet depth must be 18 or 34, got " + std::to_string(depth));
  ArchConfig cfg;
  cfg.name = "resnet" + std::to_string(depth) + "-imagenet";
  cfg.input_x = cfg.input_y = 224;
  cfg.classes = 1000;
  cfg.stem = StemConfig{7, 2, 3, 64, true};
  cfg.stages = {{64, blocks[0], 1}, {128, blocks[1], 2}, {256, blocks[2], 2}, {512, blocks[3], 2}};
  // ResNet-34 leaves the first residual block of every stage dense (its conv
  // layers 2, 3, 8, 9, 16, 17, 28, 29 counting the stem as layer 1).
  detail::fill_accel(cfg, preset, depth == 34);
  return cfg;
}

/// Desk-scale variant for the synthetic dataset: 6n+2 basic blocks on a small
/// input with narrow stages.
inline ArchConfig toy_resnet_config(int depth = 8, int input = 8, int classes = 4,
                                    std::vector<int> widths = {8, 16, 32},
                                    AccelPreset preset = AccelPreset::kAll) {
  if (depth < 8 || (depth - 2) % 6 != 0) {
    throw ConfigError("toy ResNet depth must be 6n+2, got " + std::to_string(depth));
  }
  if (widths.size() != 3) throw ConfigError("toy ResNet needs three stage widths");
  const int n = (depth - 2) / 6;
  ArchConfig cfg;
  cfg.name = "toy-resnet" + std::to_string(depth);
  cfg.input_x = cfg.input_y = input;
  cfg.classes = classes;
  cfg.stem = StemConfig{3, 1, 1, widths[0], false};
  cfg.stages = {{widths[0], n, 1}, {widths[1], n, 2}, {widths[2], n, 2}};
  detail::fill_accel(cfg, preset, false);
  return cfg;
}

template <std::floating_point T>
struct ConvUnit {
  BatchNorm<T> pre_bn;
  std::variant<ConvLayer<T>, AccelBlock<T>> op;

  const ConvLayer<T>& conv() const {
    if (const auto* a = std::get_if<AccelBlock<T>>(&op)) return a->conv;
    return std::get<ConvLayer<T>>(op);
  }
  ConvLayer<T>& conv() {
    if (auto* a = std::get_if<AccelBlock<T>>(&op)) return a->conv;
    return std::get<ConvLayer<T>>(op);
  }
  const AccelBlock<T>* accel() const { return std::get_if<AccelBlock<T>>(&op); }
  AccelBlock<T>* accel() { return std::get_if<AccelBlock<T>>(&op); }
};

template <std::floating_point T>
struct ResidualBlock {
  std::string name;
  BlockKind kind = BlockKind::kBasic;
  std::vector<ConvUnit<T>> units;
  std::optional<ConvLayer<T>> projection;
};

template <std::floating_point T>
struct Linear {
  BasicTensor<T> weight;  // (out, in)
  BasicTensor<T> bias;    // (out)
  std::size_t in() const { return weight.shape()[1]; }
  std::size_t out() const { return weight.shape()[0]; }
};

/// 3x3 stride-2 pad-1 max pool geometry used by the ImageNet stem.
struct PoolSpec {
  int k = 3, stride = 2, pad = 1;
  int out(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

template <std::floating_point T>
struct Graph {
  ArchConfig config;
  ConvLayer<T> stem;
  std::optional<BatchNorm<T>> stem_bn;
  std::vector<ResidualBlock<T>> blocks;
  BatchNorm<T> head_bn;
  Linear<T> fc;

  Shape input_shape() const { return Shape{config.input_x, config.input_y, config.input_c}; }

  std::size_t residual_convs() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.units.size();
    return n;
  }
  std::size_t accelerated_convs() const {
    std::size_t n = 0;
    for (const auto& b : blocks)
      for (const auto& u : b.units) n += u.accel() != nullptr;
    return n;
  }

  /// Walks the topology checking every tensor against the propagated shapes.
  void validate() const {
    config.validate();
    stem.spec.validate();
    detail::check_weights(stem.weights.shape(), stem.spec);
    if (stem.spec.in_x != config.input_x || stem.spec.in_y != config.input_y ||
        stem.spec.in_channels != config.input_c) {
      throw ShapeError("stem does not read the declared input shape");
    }
    int x = stem.spec.out_x(), y = stem.spec.out_y(), c = stem.spec.out_channels;
    if (stem_bn) {
      if (stem_bn->channels() != static_cast<std::size_t>(c)) throw ShapeError("stem bn channels");
      stem_bn->validate();
      x = PoolSpec{}.out(x);
      y = PoolSpec{}.out(y);
    }
    for (const auto& b : blocks) {
      const int in_c = c;
      const int in_x = x, in_y = y;
      for (std::size_t u = 0; u < b.units.size(); ++u) {
        const auto& unit = b.units[u];
        const auto& s = unit.conv().spec;
        if (s.in_x != x || s.in_y != y || s.in_channels != c) {
          throw ShapeError(b.name + ".u" + std::to_string(u) + ": expects " + s.to_string() +
                           " but receives " + std::to_string(x) + "x" + std::to_string(y) + "x" +
                           std::to_string(c));
        }
        if (unit.pre_bn.channels() != static_cast<std::size_t>(c)) {
          throw ShapeError(b.name + ".u" + std::to_string(u) + ": pre-activation channels");
        }
        unit.pre_bn.validate();
        detail::check_weights(unit.conv().weights.shape(), s);
        if (const auto* a = unit.accel()) a->validate();
        x = s.out_x();
        y = s.out_y();
        c = s.out_channels;
      }
      if (b.projection) {
        const auto& p = b.projection->spec;
        detail::check_weights(b.projection->weights.shape(), p);
        if (p.in_x != in_x || p.in_y != in_y || p.in_channels != in_c || p.out_x() != x ||
            p.out_y() != y || p.out_channels != c) {
          throw ShapeError(b.name + ": projection shortcut does not map block input to output");
        }
      } else if (in_x != x || in_y != y || in_c != c) {
        throw ShapeError(b.name + ": identity shortcut with changing shape");
      }
    }
    if (head_bn.channels() != static_cast<std::size_t>(c)) throw ShapeError("head bn channels");
    if (fc.weight.shape() != Shape{config.classes, c} || fc.bias.shape() != Shape{config.classes}) {
      throw ShapeError("classifier shape does not match final feature width");
    }
  }
};

/// Materializes a graph with He-initialized convolutions, identity BN and a
/// small normal classifier, all drawn from `seed`.
template <std::floating_point T = float>
Graph<T> build_graph(ArchConfig cfg, std::uint64_t seed = 0) {
  cfg.normalize();
  cfg.validate();
  std::mt19937_64 rng(seed);
  Graph<T> g;
  g.config = cfg;
  g.stem.spec = ConvSpec{cfg.stem.k, cfg.stem.stride, cfg.stem.pad, cfg.input_c,
                         cfg.stem.out_channels, cfg.input_x, cfg.input_y};
  g.stem.spec.validate();
  g.stem.weights = he_init<T>(g.stem.spec.weight_shape(), g.stem.spec.patch_size(), rng);
  int x = g.stem.spec.out_x(), y = g.stem.spec.out_y(), c = cfg.stem.out_channels;
  if (cfg.stem.bn_relu_pool) {
    g.stem_bn = BatchNorm<T>::identity(c);
    x = PoolSpec{}.out(x);
    y = PoolSpec{}.out(y);
  }

  std::size_t b = 0;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const auto& stage = cfg.stages[s];
    for (int i = 0; i < stage.blocks; ++i, ++b) {
      ResidualBlock<T> block;
      block.name = "s" + std::to_string(s + 1) + ".b" + std::to_string(i);
      block.kind = cfg.kind;
      const int stride = i == 0 ? stage.stride : 1;
      const int out_c = stage.width * cfg.expansion();
      std::vector<ConvSpec> specs;
      if (cfg.kind == BlockKind::kBasic) {
        specs.push_back(ConvSpec::same(3, c, stage.width, x, y, stride));
        specs.push_back(ConvSpec::same(3, stage.width, stage.width, specs[0].out_x(),
                                       specs[0].out_y()));
      } else {
        specs.push_back(ConvSpec::same(1, c, stage.width, x, y));
        specs.push_back(ConvSpec::same(3, stage.width, stage.width, x, y, stride));
        specs.push_back(ConvSpec::same(1, stage.width, out_c, specs[1].out_x(), specs[1].out_y()));
      }
      if (stride != 1 || c != out_c) {
        ConvLayer<T> p;
        p.spec = ConvSpec{1, stride, 0, c, out_c, x, y};
        p.weights = he_init<T>(p.spec.weight_shape(), p.spec.patch_size(), rng);
        block.projection = std::move(p);
      }
      for (std::size_t u = 0; u < specs.size(); ++u) {
        ConvUnit<T> unit;
        unit.pre_bn = BatchNorm<T>::identity(specs[u].in_channels);
        if (cfg.accelerate[b][u]) {
          unit.op = make_accel_block<T>(specs[u], cfg.lccl_form, cfg.lccl_bn, cfg.strategy[b][u],
                                        rng);
        } else {
          ConvLayer<T> l;
          l.spec = specs[u];
          l.weights = he_init<T>(specs[u].weight_shape(), specs[u].patch_size(), rng);
          unit.op = std::move(l);
        }
        block.units.push_back(std::move(unit));
      }
      x = specs.back().out_x();
      y = specs.back().out_y();
      c = out_c;
      g.blocks.push_back(std::move(block));
    }
  }
  g.head_bn = BatchNorm<T>::identity(c);
  g.fc.weight = BasicTensor<T>(Shape{cfg.classes, c});
  std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / c));
  for (std::size_t i = 0; i < g.fc.weight.size(); ++i) g.fc.weight[i] = static_cast<T>(dist(rng));
  g.fc.bias = BasicTensor<T>(Shape{cfg.classes});
  g.validate();
  return g;
}

template <std::floating_point T = float>
Graph<T> build_resnet_cifar(int depth, int widen, AccelPreset preset, std::uint64_t seed = 0) {
  return build_graph<T>(cifar_resnet_config(depth, widen, preset,
                                            (depth - 2) % 6 == 0 ? BlockKind::kBasic
                                                                 : BlockKind::kBottleneck),
                        seed);
}

template <std::floating_point T = float>
Graph<T> build_resnet_imagenet(int depth, AccelPreset preset, std::uint64_t seed = 0) {
  return build_graph<T>(imagenet_resnet_config(depth, preset), seed);
}

enum class ParamKind { kLearnable, kBuffer };

/// Calls fn(name, tensor, kind) for every tensor owned by the graph, in a fixed
/// order. Works on const and mutable graphs.
template <class G, class Fn>
void visit_params(G& g, Fn&& fn) {
  auto bn = [&](const std::string& prefix, auto& b) {
    fn(prefix + ".gamma", b.gamma, ParamKind::kLearnable);
    fn(prefix + ".beta", b.beta, ParamKind::kLearnable);
    fn(prefix + ".running_mean", b.running_mean, ParamKind::kBuffer);
    fn(prefix + ".running_var", b.running_var, ParamKind::kBuffer);
  };
  fn(std::string("stem.weight"), g.stem.weights, ParamKind::kLearnable);
  if (g.stem_bn) bn("stem.bn", *g.stem_bn);
  for (auto& block : g.blocks) {
    for (std::size_t u = 0; u < block.units.size(); ++u) {
      auto& unit = block.units[u];
      const std::string p = block.name + ".u" + std::to_string(u);
      bn(p + ".bn", unit.pre_bn);
      fn(p + ".conv.weight", unit.conv().weights, ParamKind::kLearnable);
      if (auto* a = unit.accel()) {
        fn(p + ".lccl.weight", a->lccl.weights, ParamKind::kLearnable);
        if (a->lccl.use_bn) bn(p + ".lccl.bn", a->lccl.bn);
      }
    }
    if (block.projection) fn(block.name + ".proj.weight", block.projection->weights,
                             ParamKind::kLearnable);
  }
  bn("head.bn", g.head_bn);
  fn(std::string("fc.weight"), g.fc.weight, ParamKind::kLearnable);
  fn(std::string("fc.bias"), g.fc.bias, ParamKind::kLearnable);
}

template <std::floating_point T>
std::size_t parameter_count(const Graph<T>& g) {
  std::size_t n = 0;
  visit_params(g, [&](const std::string&, const BasicTensor<T>& t, ParamKind) { n += t.size(); });
  return n;
}

/// Same architecture, tensors converted to another scalar type.
template <std::floating_point U, std::floating_point T>
Graph<U> graph_cast(const Graph<T>& src) {
  Graph<U> dst = build_graph<U>(src.config, 0);
  std::vector<const BasicTensor<T>*> from;
  visit_params(src, [&](const std::string&, const BasicTensor<T>& t, ParamKind) {
    from.push_back(&t);
  });
  std::size_t i = 0;
  visit_params(dst, [&](const std::string&, BasicTensor<U>& t, ParamKind) {
    t = from[i++]->template cast<U>();
  });
  auto copy_bn_scalars = [](auto& d, const auto& s) {
    d.eps = s.eps;
    d.momentum = s.momentum;
  };
  for (std::size_t b = 0; b < src.blocks.size(); ++b)
    for (std::size_t u = 0; u < src.blocks[b].units.size(); ++u) {
      copy_bn_scalars(dst.blocks[b].units[u].pre_bn, src.blocks[b].units[u].pre_bn);
      if (const auto* a = src.blocks[b].units[u].accel())
        copy_bn_scalars(dst.blocks[b].units[u].accel()->lccl.bn, a->lccl.bn);
    }
  copy_bn_scalars(dst.head_bn, src.head_bn);
  if (src.stem_bn) copy_bn_scalars(*dst.stem_bn, *src.stem_bn);
  return dst;
}

// ---------------------------------------------------------------------------
// Execution

struct ExecOptions {
  Mode mode = Mode::kInfer;
  Path path = Path::kMasked;
  bool block_skip = false;  // inference only
  std::optional<double> forced_kept;
  int workers = 1;
  bool timing = false;
  bool keep_gate_maps = false;
};

/// Per-convolution record of one forward call.
struct ConvRecord {
  std::string name;
  ConvSpec spec;
  bool accelerated = false;
  Connection input = Connection::kAft;
  AccelStats stats;
  bool block_skipped = false;
  double wall_ms = 0.0;
};

struct RunStats {
  std::vector<ConvRecord> convs;
  std::vector<std::uint8_t> blocks_skipped;
  std::uint64_t fc_macs = 0;
  std::uint64_t elementwise_ops = 0;  // BN, ReLU, gating, residual adds, pooling
  double total_ms = 0.0;

  std::uint64_t performed_macs() const {
    std::uint64_t n = fc_macs;
    for (const auto& c : convs) n += c.stats.performed_macs + c.stats.lccl_macs;
    return n;
  }
};

/// Forward activations kept for backpropagation.
template <std::floating_point T>
struct UnitTape {
  BasicTensor<T> input;      // unit input before pre-activation
  BnCache<T> bn;
  BasicTensor<T> activated;  // ReLU(BN(input)), the conv input
  BasicTensor<T> v;          // original conv output
  BasicTensor<T> v_prime;    // collaborative map
  LcclCache<T> lccl;
  bool skipped = false;
};

template <std::floating_point T>
struct Tape {
  BasicTensor<T> input;
  BnCache<T> stem_bn;
  BasicTensor<T> stem_activated;          // before pooling
  std::vector<std::size_t> pool_argmax;   // flat index into stem_activated per pooled cell
  std::vector<std::vector<UnitTape<T>>> blocks;
  BasicTensor<T> head_in;
  BnCache<T> head_bn;
  BasicTensor<T> head_activated;
  BasicTensor<T> pooled;  // (N, C)
};

template <std::floating_point T>
struct ForwardResult {
  BasicTensor<T> logits;  // (N, classes)
  RunStats stats;
  std::vector<BasicTensor<T>> gate_maps;  // per accelerated conv, when requested
};

/// True when a unit's gated output is exactly zero and every descendant
/// pre-activation maps zero to zero, so the rest of the residual branch is
/// exactly zero and the block reduces to its shortcut.
template <std::floating_point T>
bool block_skip_check(const BasicTensor<T>& gated, std::span<const ConvUnit<T>> descendants) {
  if (descendants.empty() || !all_zero<T>(gated.data())) return false;
  for (const auto& unit : descendants)
    for (std::size_t c = 0; c < unit.pre_bn.channels(); ++c)
      if (unit.pre_bn.zero_response(c) > T(0)) return false;
  return true;
}

namespace detail {

template <std::floating_point T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("residual add shape mismatch");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <std::floating_point T>
BasicTensor<T> max_pool(const BasicTensor<T>& x, std::vector<std::size_t>* argmax) {
  const auto d = FeatureDims::of(x.shape());
  const PoolSpec p;
  const int X = p.out(static_cast<int>(d.x)), Y = p.out(static_cast<int>(d.y));
  BasicTensor<T> out(FeatureDims::shape_like(x.shape(), d.n, X, Y, d.c));
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t n = 0; n < d.n; ++n)
    for (int ox = 0; ox < X; ++ox)
      for (int oy = 0; oy < Y; ++oy)
        for (std::size_t c = 0; c < d.c; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (int i = 0; i < p.k; ++i)
            for (int j = 0; j < p.k; ++j) {
              const int ix = ox * p.stride - p.pad + i, iy = oy * p.stride - p.pad + j;
              if (ix < 0 || iy < 0 || ix >= static_cast<int>(d.x) || iy >= static_cast<int>(d.y))
                continue;
              const std::size_t idx = ((n * d.x + ix) * d.y + iy) * d.c + c;
              if (x[idx] > best) {
                best = x[idx];
                arg = idx;
              }
            }
          const std::size_t o = ((n * X + ox) * Y + oy) * d.c + c;
          out[o] = best;
          if (argmax) (*argmax)[o] = arg;
        }
  return out;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/// Executes the graph on a rank-3 image or rank-4 batch. Bef connections feed
/// the collaborative layer the unit input before BN+ReLU, Aft the activated
/// tensor the original convolution reads. Train mode always evaluates the
/// original convolution densely and gates; skipping is an inference feature.
template <std::floating_point T>
ForwardResult<T> forward(const Graph<T>& g, const BasicTensor<T>& input,
                         const ExecOptions& options = {}, Tape<T>* tape = nullptr) {
  const auto d = FeatureDims::of(input.shape());
  if (d.x != static_cast<std::size_t>(g.config.input_x) ||
      d.y != static_cast<std::size_t>(g.config.input_y) ||
      d.c != static_cast<std::size_t>(g.config.input_c)) {
    throw ShapeError("input " + input.shape().to_string() + " does not match graph input " +
                     g.input_shape().to_string());
  }
  const BasicTensor<T> batch =
      input.shape().rank() == 4
          ? input
          : BasicTensor<T>(FeatureDims::shape_like(Shape{1, 1, 1, 1}, 1, d.x, d.y, d.c),
                           std::vector<T>(input.data().begin(), input.data().end()));
  const Mode mode = options.mode;
  const bool train = mode == Mode::kTrain;
  ForwardResult<T> result;
  RunStats& stats = result.stats;
  detail::Stopwatch total;
  if (tape) {
    *tape = Tape<T>{};
    tape->input = batch;
  }

  auto record_plain = [&](const std::string& name, const ConvSpec& spec, double ms) {
    ConvRecord r;
    r.name = name;
    r.spec = spec;
    r.stats.positions = d.n * spec.positions();
    r.stats.kept_rows = r.stats.positions;
    r.stats.dense_macs =
        static_cast<std::uint64_t>(r.stats.positions) * spec.patch_size() * spec.out_channels;
    r.stats.performed_macs = r.stats.dense_macs;
    r.stats.rows_gathered = r.stats.positions;
    r.wall_ms = ms;
    stats.convs.push_back(std::move(r));
  };

  // Stem.
  detail::Stopwatch sw;
  BasicTensor<T> cur = conv_gemm(batch, g.stem.weights, g.stem.spec, options.workers);
  record_plain("stem", g.stem.spec, options.timing ? sw.ms() : 0.0);
  if (g.stem_bn) {
    BasicTensor<T> pre = bn_forward(cur, *g.stem_bn, mode, tape ? &tape->stem_bn : nullptr);
    BasicTensor<T> act = relu(pre);
    stats.elementwise_ops += 2 * act.size();
    cur = detail::max_pool(act, tape ? &tape->pool_argmax : nullptr);
    stats.elementwise_ops += cur.size();
    if (tape) tape->stem_activated = std::move(act);
  }

  AccelOptions accel_opts;
  accel_opts.path = train ? Path::kDenseThenGate : options.path;
  accel_opts.workers = options.workers;
  accel_opts.forced_kept = options.forced_kept;

  for (const auto& block : g.blocks) {
    std::vector<UnitTape<T>>* btape = nullptr;
    if (tape) btape = &tape->blocks.emplace_back(block.units.size());
    const BasicTensor<T> block_in = cur;
    BasicTensor<T> first_activated;
    BasicTensor<T> x = block_in;
    bool skipping = false;
    for (std::size_t u = 0; u < block.units.size(); ++u) {
      const auto& unit = block.units[u];
      const std::string name = block.name + ".u" + std::to_string(u);
      if (skipping) {
        ConvRecord r;
        r.name = name;
        r.spec = unit.conv().spec;
        r.block_skipped = true;
        r.stats.positions = d.n * r.spec.positions();
        r.stats.dense_macs =
            static_cast<std::uint64_t>(r.stats.positions) * r.spec.patch_size() *
            r.spec.out_channels;
        r.stats.skipped_macs = r.stats.dense_macs;
        if (const auto* a = unit.accel()) {
          r.accelerated = true;
          r.input = a->lccl.input;
          r.stats.form = a->lccl.form;
          r.stats.gate_cells = d.n * r.spec.positions() * a->lccl_channels();
          r.stats.gate_zeros = r.stats.gate_cells;
          if (options.keep_gate_maps) {
            result.gate_maps.emplace_back(FeatureDims::shape_like(
                Shape{1, 1, 1, 1}, d.n, r.spec.out_x(), r.spec.out_y(), a->lccl_channels()));
          }
        }
        stats.convs.push_back(std::move(r));
        if (btape) (*btape)[u].skipped = true;
        continue;
      }
      UnitTape<T>* ut = btape ? &(*btape)[u] : nullptr;
      BasicTensor<T> pre = bn_forward(x, unit.pre_bn, mode, ut ? &ut->bn : nullptr);
      BasicTensor<T> act = relu(pre);
      stats.elementwise_ops += 2 * act.size();
      if (u == 0 && block.projection) first_activated = act;

      detail::Stopwatch usw;
      BasicTensor<T> out;
      if (const auto* a = unit.accel()) {
        const BasicTensor<T>& lccl_in = a->lccl.input == Connection::kBef ? x : act;
        auto res = accel_forward(act, lccl_in, *a, mode, accel_opts, ut ? &ut->lccl : nullptr);
        const double ms = options.timing ? usw.ms() : 0.0;
        ConvRecord r;
        r.name = name;
        r.spec = a->conv.spec;
        r.accelerated = options.path != Path::kDense || train;
        r.input = a->lccl.input;
        r.stats = res.stats;
        r.wall_ms = ms;
        stats.convs.push_back(std::move(r));
        if (options.path != Path::kDense || train) stats.elementwise_ops += res.output.size();
        if (options.keep_gate_maps) result.gate_maps.push_back(res.v_prime);
        if (ut) {
          ut->v = std::move(res.v);
          ut->v_prime = std::move(res.v_prime);
        }
        out = std::move(res.output);
      } else {
        out = conv_gemm(act, unit.conv().weights, unit.conv().spec, options.workers);
        record_plain(name, unit.conv().spec, options.timing ? usw.ms() : 0.0);
        if (ut) ut->v = out;
      }
      if (ut) {
        ut->input = std::move(x);
        ut->activated = std::move(act);
      }
      x = std::move(out);
      if (options.block_skip && !train && u + 1 < block.units.size() &&
          block_skip_check<T>(x, std::span<const ConvUnit<T>>(block.units).subspan(u + 1))) {
        skipping = true;
      }
    }
    stats.blocks_skipped.push_back(skipping);

    BasicTensor<T> shortcut;
    if (block.projection) {
      detail::Stopwatch psw;
      shortcut = conv_gemm(first_activated, block.projection->weights, block.projection->spec,
                           options.workers);
      record_plain(block.name + ".proj", block.projection->spec,
                   options.timing ? psw.ms() : 0.0);
    } else {
      shortcut = block_in;
    }
    if (skipping) {
      cur = std::move(shortcut);
    } else {
      cur = detail::add(x, shortcut);
      stats.elementwise_ops += cur.size();
    }
  }

  // Head: BN, ReLU, global average pool, linear classifier.
  if (tape) tape->head_in = cur;
  BasicTensor<T> pre = bn_forward(cur, g.head_bn, mode, tape ? &tape->head_bn : nullptr);
  BasicTensor<T> act = relu(pre);
  const auto hd = FeatureDims::of(act.shape());
  BasicTensor<T> pooled(Shape{static_cast<std::int64_t>(hd.n), static_cast<std::int64_t>(hd.c)});
  for (std::size_t n = 0; n < hd.n; ++n)
    for (std::size_t p = 0; p < hd.x * hd.y; ++p)
      for (std::size_t c = 0; c < hd.c; ++c) pooled[n * hd.c + c] += act[(n * hd.x * hd.y + p) * hd.c + c];
  for (std::size_t i = 0; i < pooled.size(); ++i) pooled[i] /= static_cast<T>(hd.x * hd.y);
  stats.elementwise_ops += 3 * act.size();

  const std::size_t classes = g.fc.out(), width = g.fc.in();
  BasicTensor<T> logits(Shape{static_cast<std::int64_t>(hd.n), static_cast<std::int64_t>(classes)});
  for (std::size_t n = 0; n < hd.n; ++n)
    for (std::size_t o = 0; o < classes; ++o) {
      T acc = g.fc.bias[o];
      for (std::size_t i = 0; i < width; ++i) acc += g.fc.weight[o * width + i] * pooled[n * width + i];
      logits[n * classes + o] = acc;
    }
  stats.fc_macs = static_cast<std::uint64_t>(hd.n) * classes * width;
  if (tape) {
    tape->head_activated = std::move(act);
    tape->pooled = std::move(pooled);
  }
  result.logits = std::move(logits);
  stats.total_ms = options.timing ? total.ms() : 0.0;
  return result;
}

}  // namespace lccn
