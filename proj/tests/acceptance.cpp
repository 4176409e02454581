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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "lccn/lccn.hpp"
#include "oracles.hpp"

namespace {

using lccn::ConvSpec;
using lccn::Shape;
using lccn::Tensor;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<float>::infinity();
  float m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Outcome conv_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  oracle::Rng rng(1001);
  const int ks[] = {1, 3, 5};
  float worst = 0;
  int cases = 0;
  for (; cases < 240; ++cases) {
    const int k = ks[cases % 3];
    const int stride = 1 + (cases / 3) % 2;
    const int pad = rng.uniform_int(0, k / 2);
    ConvSpec s{k, stride, pad, rng.uniform_int(1, 16), rng.uniform_int(1, 16),
               rng.uniform_int(std::max(1, k - 2 * pad), 20), rng.uniform_int(std::max(1, k - 2 * pad), 20)};
    const Tensor u = rng.tensor<float>(s.input_shape(), -1, 1);
    const Tensor w = rng.tensor<float>(s.weight_shape(), -1, 1);
    worst = std::max(worst, max_abs_diff(lccn::conv_gemm(u, w, s), lccn::conv_direct(u, w, s)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4f && secs < 60.0,
          fmt("%d cases, max abs error %.3g (<= 1e-4), %.2f s (< 60 s)", cases, worst, secs)};
}

Outcome skip_exactness() {
  oracle::Rng rng(1002);
  float worst = 0;
  bool cells_zero = true, macs_exact = true;
  int cases = 0;
  for (; cases < 150; ++cases) {
    const int k = rng.coin() ? 3 : 1;
    const auto spec = ConvSpec::same(k, rng.uniform_int(1, 12), rng.uniform_int(1, 12),
                                     rng.uniform_int(2, 12), rng.uniform_int(2, 12),
                                     rng.uniform_int(1, 2));
    auto block = lccn::make_accel_block<float>(spec, lccn::LcclForm::kSharedAcrossFilters, true,
                                               lccn::Connection::kAft, rng.engine());
    block.lccl.bn.beta.fill(static_cast<float>(rng.uniform(-0.8, 0.3)));
    const Tensor u = rng.tensor<float>(spec.input_shape(), -1, 1);
    lccn::AccelOptions masked, gated;
    gated.path = lccn::Path::kDenseThenGate;
    const auto a = lccn::accel_forward(u, block, lccn::Mode::kInfer, masked);
    const auto b = lccn::accel_forward(u, block, lccn::Mode::kInfer, gated);
    worst = std::max(worst, max_abs_diff(a.output, b.output));
    const std::size_t T = static_cast<std::size_t>(spec.out_channels);
    std::size_t open = 0;
    for (std::size_t p = 0; p < spec.positions(); ++p) {
      if (a.v_prime[p] != 0.0f) {
        ++open;
        continue;
      }
      for (std::size_t t = 0; t < T; ++t) cells_zero = cells_zero && a.output[p * T + t] == 0.0f;
    }
    macs_exact = macs_exact && a.stats.performed_macs == open * spec.patch_size() * T;
  }
  return {worst <= 1e-5f && cells_zero && macs_exact,
          fmt("%d blocks, max abs diff %.3g (<= 1e-5), skipped cells zero: %s, performed = S'k^2CT: %s",
              cases, worst, cells_zero ? "yes" : "no", macs_exact ? "yes" : "no")};
}

Outcome formula_pipeline() {
  oracle::Rng rng(1003);
  const auto spec = ConvSpec::same(3, 16, 16, 32, 32);
  const auto block = lccn::make_accel_block<float>(spec, lccn::LcclForm::kSharedAcrossFilters, true,
                                                   lccn::Connection::kAft, rng.engine());
  lccn::AccelOptions opts;
  opts.forced_kept = 0.5;
  const auto r = lccn::accel_forward(rng.tensor<float>(spec.input_shape(), -1, 1), block,
                                     lccn::Mode::kInfer, opts);
  const auto total = r.stats.lccl_macs + r.stats.performed_macs;
  const double speedup = lccn::speedup_ratio(spec, lccn::LcclForm::kSharedAcrossFilters, r.stats.kept());
  return {total == 1327104u && speedup == 0.4375,
          fmt("LCCL+performed MACs %llu (== 1327104), speedup %.6f (== 0.4375)",
              static_cast<unsigned long long>(total), speedup)};
}

Outcome architecture_flops() {
  const double f18 = static_cast<double>(lccn::dense_flops(lccn::build_resnet_imagenet(18, lccn::AccelPreset::kStandard)));
  const double f34 = static_cast<double>(lccn::dense_flops(lccn::build_resnet_imagenet(34, lccn::AccelPreset::kStandard)));
  const auto n20 = lccn::build_resnet_cifar(20, 1, lccn::AccelPreset::kStandard).accelerated_convs();
  const bool ok = std::abs(f18 - 1.8e9) <= 0.05 * 1.8e9 && std::abs(f34 - 3.6e9) <= 0.05 * 3.6e9 && n20 == 18;
  return {ok, fmt("ResNet-18 %.3e (1.8e9 +-5%%), ResNet-34 %.3e (3.6e9 +-5%%), ResNet-20 accelerable convs %zu (== 18)",
                  f18, f34, n20)};
}

Outcome whole_block_skip() {
  oracle::Rng rng(1005);
  auto g = lccn::build_graph(lccn::toy_resnet_config(), 5);
  g.blocks[0].units[0].accel()->lccl.weights.fill(0.0f);
  const Tensor x = rng.tensor<float>(Shape{2, 8, 8, 3}, -1, 1);
  lccn::ExecOptions opts;
  opts.block_skip = true;
  lccn::Tape<float> tape;
  const auto res = lccn::forward(g, x, opts, &tape);
  const auto& in = tape.blocks[0][0].input;
  const auto& out = tape.blocks[1][0].input;
  bool equal = in.shape() == out.shape() &&
               std::memcmp(in.raw(), out.raw(), in.size() * sizeof(float)) == 0;
  std::uint64_t desc = 0;
  for (const auto& c : res.stats.convs)
    if (c.name == "s1.b0.u1") desc = c.stats.performed_macs + c.stats.lccl_macs;
  const bool fired = res.stats.blocks_skipped[0] != 0;
  return {fired && equal && desc == 0,
          fmt("skip fired: %s, output bit-equal to shortcut: %s, descendant MACs %llu (== 0)",
              fired ? "yes" : "no", equal ? "yes" : "no", static_cast<unsigned long long>(desc))};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  oracle::Rng rng(1006);
  auto g = lccn::build_graph(oracle::gradcheck_arch(), 6);
  for (auto& b : g.blocks)
    for (auto& u : b.units) u.accel()->lccl.bn.beta.fill(0.1f);
  const Tensor x = rng.tensor<float>(Shape{3, 6, 6, 3}, -1, 1);
  const auto r = oracle::gradcheck(g, x, {0, 1, 2}, 0.0, 0.0, 1u << 20, 1e-3, 7);
  const double secs = seconds_since(t0);
  return {r.pass_rate() >= 0.99 && secs < 120.0,
          fmt("%zu coordinates over %zu tensors, %.2f%% within 1e-3 relative (>= 99%%), worst %.3g at %s, %.1f s (< 120 s)",
              r.checked, r.tensors.size(), 100.0 * r.pass_rate(), r.worst, r.worst_name.c_str(), secs)};
}

lccn::TrainLog train_preset(const std::string& preset, std::uint64_t seed, int epochs = 50) {
  lccn::DatasetConfig dc;
  dc.seed = seed;
  const auto data = lccn::make_toy_dataset(dc);
  auto g = lccn::build_graph(*lccn::named_preset(preset), seed);
  lccn::SgdConfig cfg;
  cfg.seed = seed;
  cfg.epochs = epochs;
  return lccn::train(g, data, cfg);
}

Outcome desk_training() {
  const auto log = train_preset("toy-resnet8-aftaft", 1);
  const double l0 = log.initial_loss(), l1 = log.final_loss(), acc = log.epochs.back().train_acc;
  std::string others;
  bool all_ok = true;
  for (const char* s : {"toy-resnet8-aftbef", "toy-resnet8-befbef", "toy-resnet8-befaft"}) {
    try {
      const auto l = train_preset(s, 1);
      const bool ok = std::isfinite(l.final_loss()) && l.final_loss() < l.initial_loss();
      all_ok = all_ok && ok;
      others += fmt(" %s %.3f->%.3f", s + 12, l.initial_loss(), l.final_loss());
    } catch (const lccn::DivergenceError& e) {
      all_ok = false;
      others += fmt(" %s diverged", s + 12);
    }
  }
  return {l1 < 0.5 * l0 && acc > 0.9 && all_ok,
          fmt("aft-aft loss %.4f -> %.4f (< 0.5x), train acc %.3f (> 0.9); others:%s", l0, l1, acc,
              others.c_str())};
}

Outcome bn_direction() {
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double with = train_preset("toy-resnet8-aftaft", seed).epochs.back().mean_sparsity;
    const double without = train_preset("toy-resnet8-nobn", seed).epochs.back().mean_sparsity;
    wins += with >= without;
    detail += fmt(" seed %llu: %.3f vs %.3f;", static_cast<unsigned long long>(seed), with, without);
  }
  return {wins >= 2, fmt("with-BN >= without-BN sparsity in %d/3 seeds (>= 2):%s", wins, detail.c_str())};
}

Outcome realistic_speedup() {
  const auto spec = ConvSpec::same(3, 128, 128, 56, 56);
  const auto r = lccn::bench_accel_layer(spec, 0.1, 20, 1);
  const bool ok = r.t_masked_ms <= 0.7 * r.t_dense_ms && r.realistic_speedup() <= r.theoretical_speedup;
  return {ok, fmt("t_masked %.2f ms vs t_dense %.2f ms (ratio %.3f <= 0.7); realistic %.3f <= theoretical %.3f",
                  r.t_masked_ms, r.t_dense_ms, r.t_masked_ms / r.t_dense_ms, r.realistic_speedup(),
                  r.theoretical_speedup)};
}

Outcome persistence() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("lccn-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  std::size_t ok = 0, total = 0;
  std::string failed;
  for (const auto& p : lccn::preset_list()) {
    ++total;
    auto g = lccn::build_graph(*lccn::named_preset(p.name), 10);
    oracle::Rng rng(total);
    lccn::visit_params(g, [&](const std::string&, Tensor& t, lccn::ParamKind kind) {
      const double lo = kind == lccn::ParamKind::kBuffer ? 0.1 : -2.0;
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, 2.0));
    });
    const auto base = (dir / p.name).string();
    lccn::save_model(g, base);
    const auto back = lccn::load_model(base).graph;
    std::vector<const Tensor*> a, b;
    lccn::visit_params(g, [&](const std::string&, const Tensor& t, lccn::ParamKind) { a.push_back(&t); });
    lccn::visit_params(back, [&](const std::string&, const Tensor& t, lccn::ParamKind) { b.push_back(&t); });
    bool same = back.config == g.config && a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i)
      same = a[i]->shape() == b[i]->shape() &&
             std::memcmp(a[i]->raw(), b[i]->raw(), a[i]->size() * sizeof(float)) == 0;
    if (same) ++ok;
    else failed += " " + p.name;
    if (p.name != "toy-resnet8-aftaft") {
      fs::remove(base + ".manifest");
      fs::remove(base + ".weights");
    }
  }
  // Corrupt one byte and truncate: both must be rejected.
  const auto base = (dir / "toy-resnet8-aftaft").string();
  std::fstream f(base + ".weights", std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(100);
  char c;
  f.get(c);
  f.seekp(100);
  f.put(static_cast<char>(c ^ 0x01));
  f.close();
  bool flipped = false, truncated = false;
  try {
    (void)lccn::load_model(base);
  } catch (const lccn::FormatError&) {
    flipped = true;
  }
  fs::resize_file(base + ".weights", fs::file_size(base + ".weights") - 8);
  try {
    (void)lccn::load_model(base);
  } catch (const lccn::FormatError&) {
    truncated = true;
  }
  fs::remove_all(dir);
  return {ok == total && flipped && truncated,
          fmt("%zu/%zu presets bit-exact%s; flipped byte rejected: %s; truncated blob rejected: %s", ok,
              total, failed.c_str(), flipped ? "yes" : "no", truncated ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"convolution oracle equivalence", conv_oracle},
      {"skip-path exactness", skip_exactness},
      {"FLOP formula pipeline", formula_pipeline},
      {"architecture FLOP calibration", architecture_flops},
      {"whole-block skip", whole_block_skip},
      {"gradient suite", gradient_suite},
      {"desk-scale training", desk_training},
      {"BN sparsity direction", bn_direction},
      {"realistic speedup", realistic_speedup},
      {"persistence", persistence},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] criterion %zu: %s -- %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
