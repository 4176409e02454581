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

#include <gtest/gtest.h>

#include "lccn/flops.hpp"
#include "lccn/lccl.hpp"
#include "oracles.hpp"

namespace {

using lccn::AccelBlock;
using lccn::ConvSpec;
using lccn::LcclForm;
using lccn::Mode;
using lccn::Path;
using lccn::Shape;
using lccn::Tensor;

AccelBlock<float> random_block(oracle::Rng& rng, LcclForm form, bool bn = true) {
  const int k = rng.coin() ? 3 : 1;
  const auto spec = ConvSpec::same(k, rng.uniform_int(1, 6), rng.uniform_int(1, 6),
                                   rng.uniform_int(2, 8), rng.uniform_int(2, 8),
                                   rng.uniform_int(1, 2));
  auto b = lccn::make_accel_block<float>(spec, form, bn, lccn::Connection::kAft, rng.engine());
  const auto C = static_cast<std::size_t>(b.lccl_channels());
  for (std::size_t c = 0; c < C; ++c) {
    b.lccl.bn.gamma[c] = static_cast<float>(rng.uniform(0.5, 1.5));
    b.lccl.bn.beta[c] = static_cast<float>(rng.uniform(-0.5, 0.3));
    b.lccl.bn.running_mean[c] = static_cast<float>(rng.uniform(-0.2, 0.2));
    b.lccl.bn.running_var[c] = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  return b;
}

TEST(LcclForward, ZeroWeightsAndSaturation) {
  oracle::Rng rng(30);
  auto b = random_block(rng, LcclForm::kSharedAcrossFilters, false);
  const auto u = rng.tensor(b.conv.spec.input_shape());
  b.lccl.weights.fill(0.0f);
  EXPECT_EQ(lccn::sparsity(lccn::lccl_forward(u, b, Mode::kInfer)), 1.0);
  // Positive input, negative weights, no BN: conv output <= 0 everywhere.
  const auto pos = rng.tensor(b.conv.spec.input_shape(), 0.1, 1.0);
  b.lccl.weights.fill(-1.0f);
  EXPECT_EQ(lccn::sparsity(lccn::lccl_forward(pos, b, Mode::kInfer)), 1.0);
}

TEST(LcclForward, ComposesConvBnRelu) {
  oracle::Rng rng(31);
  for (auto form : {LcclForm::kSharedAcrossFilters, LcclForm::kPointwiseFull}) {
    const auto b = random_block(rng, form);
    const auto u = rng.tensor(b.conv.spec.input_shape());
    const auto got = lccn::lccl_forward(u, b, Mode::kInfer);
    const auto ref = oracle::relu(
        oracle::bn_infer(oracle::conv_reordered(u, b.lccl.weights, b.lccl_spec()), b.lccl.bn));
    ASSERT_EQ(got.shape(), ref.shape());
    EXPECT_EQ(got.shape()[2], form == LcclForm::kSharedAcrossFilters ? 1u : b.conv.spec.out_channels + 0u);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-5f);
  }
}

TEST(LcclForward, IdentityBnMatchesNoBn) {
  oracle::Rng rng(32);
  auto b = random_block(rng, LcclForm::kSharedAcrossFilters);
  b.lccl.bn = lccn::BatchNorm<float>::identity(1);
  b.lccl.bn.eps = 0.0;  // exact identity; validate() is not involved here
  const auto u = rng.tensor(b.conv.spec.input_shape());
  const auto with = lccn::lccl_forward(u, b, Mode::kInfer);
  b.lccl.use_bn = false;
  EXPECT_EQ(lccn::lccl_forward(u, b, Mode::kInfer), with);
}

TEST(LcclSpec, PointwiseMatchesOutputExtent) {
  const auto s = ConvSpec::same(3, 4, 8, 9, 7, 2);
  const auto p = lccn::lccl_spec(s, LcclForm::kPointwiseFull);
  EXPECT_EQ(p.k, 1);
  EXPECT_EQ(p.out_x(), s.out_x());
  EXPECT_EQ(p.out_y(), s.out_y());
  const auto w = lccn::lccl_spec(s, LcclForm::kSharedAcrossFilters);
  EXPECT_EQ(w.k, 3);
  EXPECT_EQ(w.out_channels, 1);
}

TEST(Gate, Examples) {
  oracle::Rng rng(33);
  const auto v = rng.tensor(Shape{3, 4, 5});
  EXPECT_EQ(lccn::gate(Tensor(Shape{3, 4, 1}), v), Tensor(v.shape()));
  Tensor ones(Shape{3, 4, 5});
  ones.fill(1.0f);
  EXPECT_EQ(lccn::gate(ones, v), v);
  for (int trial = 0; trial < 50; ++trial) {
    const bool shared = rng.coin();
    auto vp = lccn::relu(rng.tensor(Shape{3, 4, shared ? 1 : 5}));
    EXPECT_EQ(lccn::gate(vp, v), oracle::gate(vp, v));
  }
  EXPECT_THROW(lccn::gate(Tensor(Shape{3, 4, 2}), v), lccn::ShapeError);
}

TEST(AccelForward, FullSkipAndNoSkip) {
  oracle::Rng rng(34);
  auto b = random_block(rng, LcclForm::kSharedAcrossFilters, false);
  const auto u = rng.tensor(b.conv.spec.input_shape());
  b.lccl.weights.fill(0.0f);
  auto r = lccn::accel_forward(u, b, Mode::kInfer);
  EXPECT_EQ(r.output, Tensor(r.output.shape()));
  EXPECT_EQ(r.stats.performed_macs, 0u);
  EXPECT_EQ(r.stats.skipped_macs, r.stats.dense_macs);
  EXPECT_EQ(r.stats.sparsity(), 1.0);

  // All-open gate: V* = V' * V and the shared form costs 1/C on top of dense.
  b = random_block(rng, LcclForm::kSharedAcrossFilters, false);
  b.lccl.weights.fill(0.0f);
  auto all_on = lccn::make_accel_block<float>(b.conv.spec, LcclForm::kSharedAcrossFilters, false,
                                              lccn::Connection::kAft, rng.engine());
  all_on.lccl.weights.fill(0.0f);
  // A positive constant input with positive weights keeps every V' cell > 0.
  const auto pos = rng.tensor(b.conv.spec.input_shape(), 0.5, 1.0);
  all_on.lccl.weights.fill(0.1f);
  r = lccn::accel_forward(pos, all_on, Mode::kInfer);
  ASSERT_EQ(r.stats.sparsity(), 0.0);
  EXPECT_EQ(r.output, oracle::gate(r.v_prime, lccn::conv_gemm(pos, all_on.conv.weights, all_on.conv.spec)));
  EXPECT_EQ(r.stats.performed_macs, r.stats.dense_macs);
  EXPECT_DOUBLE_EQ(lccn::speedup_ratio(all_on.conv.spec, LcclForm::kSharedAcrossFilters, r.stats.kept()),
                   -1.0 / all_on.conv.spec.in_channels);
  EXPECT_DOUBLE_EQ(lccn::speedup_ratio_basic(all_on.conv.spec, all_on.conv.spec.k, 1.0), -1.0);
}

TEST(AccelForward, PathEquivalenceRandomized) {
  oracle::Rng rng(35);
  for (int trial = 0; trial < 150; ++trial) {
    const auto form = trial % 3 == 0 ? LcclForm::kPointwiseFull : LcclForm::kSharedAcrossFilters;
    const auto b = random_block(rng, form, rng.coin(0.7));
    const auto u = lccn::relu(rng.tensor(b.conv.spec.input_shape()));
    lccn::AccelOptions masked, dense;
    dense.path = Path::kDenseThenGate;
    masked.workers = rng.uniform_int(1, 3);
    const auto a = lccn::accel_forward(u, b, Mode::kInfer, masked);
    const auto d = lccn::accel_forward(u, b, Mode::kInfer, dense);
    ASSERT_EQ(a.output.shape(), d.output.shape());
    for (std::size_t i = 0; i < a.output.size(); ++i) EXPECT_NEAR(a.output[i], d.output[i], 1e-5f);

    // Zero propagation and mask uniformity across channels.
    const std::size_t T = b.conv.spec.out_channels, G = a.v_prime.shape()[2];
    std::size_t broadcast_zeros = 0;
    for (std::size_t p = 0; p < a.v_prime.size() / G; ++p)
      for (std::size_t t = 0; t < T; ++t) {
        const float g = a.v_prime[p * G + (G == 1 ? 0 : t)];
        if (g == 0.0f) {
          EXPECT_EQ(a.output[p * T + t], 0.0f);
          ++broadcast_zeros;
        }
      }
    EXPECT_GE(lccn::count_zeros<float>(a.output.data()), broadcast_zeros);
    if (form == LcclForm::kSharedAcrossFilters) {
      const std::uint64_t per_row = b.conv.spec.patch_size() * T;
      EXPECT_EQ(a.stats.performed_macs, a.stats.kept_rows * per_row);
      EXPECT_EQ(a.stats.performed_macs + a.stats.skipped_macs, a.stats.dense_macs);
      EXPECT_EQ(a.stats.kept_rows, a.stats.positions - a.stats.gate_zeros);
    }
  }
}

TEST(AccelForward, BefReadsSeparateInput) {
  oracle::Rng rng(36);
  const auto b = random_block(rng, LcclForm::kSharedAcrossFilters);
  const auto u = lccn::relu(rng.tensor(b.conv.spec.input_shape()));
  const auto raw = rng.tensor(b.conv.spec.input_shape());
  const auto r = lccn::accel_forward(u, raw, b, Mode::kInfer);
  EXPECT_EQ(r.v_prime, lccn::lccl_forward(raw, b, Mode::kInfer));
}

TEST(SmoothL1L2, ValuesAndGradient) {
  EXPECT_DOUBLE_EQ(lccn::smooth_l1l2(Tensor(Shape{2}, {3, 4}), 1, 1), 12.0);
  EXPECT_DOUBLE_EQ(lccn::smooth_l1l2(Tensor(Shape{5}), 0.5, 0.1), 0.0);
  const auto g = lccn::smooth_l1l2_grad(Tensor(Shape{2}, {3, 4}), 1, 0);
  EXPECT_FLOAT_EQ(g[0], 0.6f);
  EXPECT_FLOAT_EQ(g[1], 0.8f);
  EXPECT_EQ(lccn::smooth_l1l2_grad(Tensor(Shape{4}), 1, 1), Tensor(Shape{4}));
  EXPECT_THROW(lccn::smooth_l1l2(Tensor(Shape{1}), -1, 0), lccn::ConfigError);

  oracle::Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = rng.tensor<double>(Shape{rng.uniform_int(1, 20)});
    double brute_sq = 0, brute_ab = 0;
    for (double v : x.data()) {
      brute_sq += v * v;
      brute_ab += std::abs(v);
    }
    EXPECT_NEAR(lccn::smooth_l1l2(x, 0.5, 0.1), 0.5 * std::sqrt(brute_sq) + 0.1 * brute_ab, 1e-12);
    const auto grad = lccn::smooth_l1l2_grad(x, 0.5, 0.1);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double w = x[i], h = 1e-6;
      x[i] = w + h;
      const double p = lccn::smooth_l1l2(x, 0.5, 0.1);
      x[i] = w - h;
      const double m = lccn::smooth_l1l2(x, 0.5, 0.1);
      x[i] = w;
      const double fd = (p - m) / (2 * h);
      EXPECT_LE(std::abs(fd - grad[i]) / std::max(std::abs(fd), 1e-9), 1e-3);
    }
  }
}

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunning) {
  oracle::Rng rng(38);
  const auto x = rng.tensor(Shape{2, 3, 3, 4}, -2, 5);
  auto bn = lccn::BatchNorm<float>::identity(4);
  lccn::BnCache<float> cache;
  const auto y = lccn::bn_forward(x, bn, Mode::kTrain, &cache);
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t p = 0; p < 18; ++p) {
      s += y[p * 4 + c];
      s2 += static_cast<double>(y[p * 4 + c]) * y[p * 4 + c];
    }
    EXPECT_NEAR(s / 18, 0.0, 1e-5);
    EXPECT_NEAR(s2 / 18, 1.0, 1e-3);
  }
  lccn::bn_update_running(bn, cache);
  EXPECT_NEAR(bn.running_mean[0], 0.1 * cache.mean[0], 1e-6);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * cache.var[0] * 18.0 / 17.0, 1e-5);
}

}  // namespace
