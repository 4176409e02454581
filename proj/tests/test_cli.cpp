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
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(LCCN_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string tmp(const std::string& name) {
  const fs::path dir = fs::path(LCCN_TEST_TMP) / "cli";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

/// A short toy training run shared by several tests.
const std::string& trained_model() {
  static const std::string base = [] {
    const auto b = tmp("trained");
    const auto r = run("train toy-resnet8-aftaft -o " + b + " --seed 7 --epochs 6 -q --save-data " +
                       tmp("trained-data"));
    EXPECT_EQ(r.code, 0);
    return b;
  }();
  return base;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("train").code, 2);
  const auto r = run("train no-such-preset -o " + tmp("x"), true);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("unknown preset"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("Usage"), std::string::npos) << r.out;
  EXPECT_EQ(run("init no-such-preset -o " + tmp("x")).code, 2);
  EXPECT_EQ(run("bench-layer --kept 2").code, 2);
  EXPECT_EQ(run("train toy-resnet8-aftaft -o " + tmp("x") + " --strategy sideways").code, 2);
  EXPECT_EQ(run("presets").code, 0);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, BadWorkerEnvironmentIsUsageError) {
  const auto cmd = std::string("LCCN_WORKERS=zero ") + LCCN_CLI_PATH + " presets >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  EXPECT_EQ(run("infer " + tmp("missing") + " " + tmp("missing")).code, 1);
  EXPECT_EQ(run("bench " + tmp("missing")).code, 1);
}

TEST(Cli, TrainIsDeterministicAndWritesLog) {
  const auto a = tmp("det-a"), b = tmp("det-b");
  const auto ra = run("train toy-resnet8-aftaft -o " + a + " --seed 7 --epochs 3 --log " + a + ".csv");
  const auto rb = run("train toy-resnet8-aftaft -o " + b + " --seed 7 --epochs 3 --log " + b + ".csv");
  ASSERT_EQ(ra.code, 0);
  ASSERT_EQ(rb.code, 0);
  EXPECT_EQ(ra.out, rb.out);
  const auto log = slurp(a + ".csv");
  EXPECT_EQ(log, slurp(b + ".csv"));
  EXPECT_EQ(lines(log).front(), "epoch,loss,train_acc,val_acc,mean_sparsity,lr");
  EXPECT_EQ(lines(log).size(), 5u);
  EXPECT_EQ(slurp(a + ".weights"), slurp(b + ".weights"));
}

TEST(Cli, StrategyOverrideRecordedInManifest) {
  const auto base = tmp("strategy");
  ASSERT_EQ(run("train toy-resnet8-aftaft -o " + base + " --epochs 1 -q --strategy bef-aft").code, 0);
  std::ifstream in(base + ".manifest");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m.at("metadata").at("strategy"), "bef-aft");
  for (const auto& row : m.at("architecture").at("strategy")) {
    EXPECT_EQ(row[0], "bef");
    EXPECT_EQ(row[1], "aft");
  }
}

TEST(Cli, TrainFromJsonConfig) {
  const auto cfg = tmp("train.json");
  std::ofstream(cfg) << R"({
    "architecture": {"preset": {"family": "toy", "widths": [4, 8, 8], "classes": 3}, "strategy": "aft-aft"},
    "dataset": {"train": 48, "val": 12, "noise": 0.2},
    "sgd": {"epochs": 2, "batch_size": 16}
  })";
  const auto r = run("train " + cfg + " -o " + tmp("from-json"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(lines(r.out).size(), 4u);
  std::ofstream(tmp("bad.json")) << "{ not json";
  EXPECT_EQ(run("train " + tmp("bad.json") + " -o " + tmp("x")).code, 2);
}

TEST(Cli, SparsityMatchesFinalTrainingLogRow) {
  const auto& base = trained_model();
  const auto log = lines(slurp(base + ".manifest.log.csv"));
  const auto last = split(log.back());
  ASSERT_EQ(last.size(), 6u);
  const auto r = run("sparsity " + base + " " + tmp("trained-data") + " --masks " + tmp("masks") +
                     " --limit 1");
  ASSERT_EQ(r.code, 0);
  const auto out = lines(r.out);
  EXPECT_EQ(out.front(), "layer,sparsity,kept,zeros,cells");
  EXPECT_EQ(out.back(), "mean_sparsity," + last[4]);
  std::size_t layers = 0;
  for (std::size_t i = 1; i + 1 < out.size(); ++i) {
    const double s = std::stod(split(out[i])[1]);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    ++layers;
  }
  EXPECT_EQ(layers, 6u);
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(tmp("masks"))) {
    ++pgm;
    EXPECT_EQ(slurp(e.path().string()).substr(0, 2), "P5");
  }
  EXPECT_EQ(pgm, 6u);
}

TEST(Cli, InferPrintsProbabilitiesAndStats) {
  const auto& base = trained_model();
  const auto stats = tmp("infer-stats.csv");
  const auto r = run("infer " + base + " " + tmp("trained-data") + " --stats " + stats);
  ASSERT_EQ(r.code, 0);
  const auto out = lines(r.out);
  EXPECT_EQ(out.front(), "sample,class,p0,p1,p2,p3");
  EXPECT_EQ(out.size(), 257u);
  double total = 0;
  for (std::size_t k = 2; k < 6; ++k) total += std::stod(split(out[1])[k]);
  EXPECT_NEAR(total, 1.0, 1e-5);
  const auto st = lines(slurp(stats));
  EXPECT_EQ(st.front(),
            "layer,accelerated,form,sparsity,kept,performed_macs,skipped_macs,lccl_macs,dense_macs,"
            "block_skipped");
  // Masked and dense-then-gate execution compute the same function.
  const auto alt = run("infer " + base + " " + tmp("trained-data") + " --path dense-then-gate");
  ASSERT_EQ(alt.code, 0);
  const auto al = lines(alt.out);
  for (std::size_t i = 1; i < out.size(); ++i) EXPECT_EQ(split(al[i])[1], split(out[i])[1]);
  EXPECT_EQ(run("infer " + base + " " + tmp("trained-data") + " --path dense").code, 0);
  EXPECT_EQ(run("infer " + base + " " + tmp("trained-data") + " --path sideways").code, 2);
}

TEST(Cli, InferShapeMismatchIsStructuredError) {
  const auto& base = trained_model();
  const auto data = tmp("wrong-size");
  ASSERT_EQ(run("dataset -o " + data + " --size 6 --train 2 --val 1").code, 0);
  const auto r = run("infer " + base + " " + data, true);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("does not match graph input"), std::string::npos) << r.out;
}

TEST(Cli, ZeroLcclCheckpointClosesEveryGate) {
  const auto base = tmp("zero");
  ASSERT_EQ(run("init toy-resnet8-aftaft -o " + base + " --zero-lccl").code, 0);
  const auto data = tmp("zero-data");
  ASSERT_EQ(run("dataset -o " + data + " --train 5 --val 1").code, 0);
  const auto stats = tmp("zero-stats.csv");
  ASSERT_EQ(run("infer " + base + " " + data + " --stats " + stats).code, 0);
  std::size_t accel = 0;
  for (const auto& l : lines(slurp(stats))) {
    const auto f = split(l);
    if (f[1] != "1") continue;
    ++accel;
    EXPECT_EQ(f[3], "1.000000") << l;
  }
  EXPECT_EQ(accel, 6u);
  const auto sp = lines(run("sparsity " + base + " " + data).out);
  for (std::size_t i = 1; i + 1 < sp.size(); ++i) EXPECT_EQ(split(sp[i])[1], "1.000000");
}

TEST(Cli, SparsityOfDenseModelHasNoLayers) {
  const auto base = tmp("dense");
  ASSERT_EQ(run("init toy-resnet8-dense -o " + base).code, 0);
  const auto data = tmp("dense-data");
  ASSERT_EQ(run("dataset -o " + data + " --train 3 --val 1").code, 0);
  const auto out = lines(run("sparsity " + base + " " + data).out);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], "layer,sparsity,kept,zeros,cells");
}

TEST(Cli, BenchWritesReportCsv) {
  const auto csv = tmp("bench.csv");
  const auto r = run("bench " + trained_model() + " --reps 2 --warmup 1 --csv " + csv);
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("speedup: theoretical"), std::string::npos);
  const auto l = lines(slurp(csv));
  EXPECT_EQ(l.front(),
            "layer,form,sparsity,kept,dense_flops,lccl_flops,theoretical_speedup,performed_macs,"
            "skipped_macs,t_dense_ms,t_masked_ms,realistic_speedup");
  EXPECT_EQ(l.size(), 1u + 1 + 6 + 2 + 1);  // stem, six units, two projections, fc
}

TEST(Cli, BenchResNet18ImpliedKeptReproducesTheoreticalSpeedup) {
  const auto r = run("bench preset:resnet18-imagenet --target-speedup 0.346 --formula-only");
  ASSERT_EQ(r.code, 0);
  const auto pos = r.out.find("speedup: theoretical ");
  ASSERT_NE(pos, std::string::npos) << r.out;
  const double pct = std::stod(r.out.substr(pos + 21));
  EXPECT_NEAR(pct, 34.6, 0.05 * 34.6);
}

TEST(Cli, DatasetCommandIsDeterministic) {
  ASSERT_EQ(run("dataset -o " + tmp("ds1") + " --seed 3 --split val").code, 0);
  ASSERT_EQ(run("dataset -o " + tmp("ds2") + " --seed 3 --split val").code, 0);
  EXPECT_EQ(slurp(tmp("ds1.weights")), slurp(tmp("ds2.weights")));
  EXPECT_EQ(run("dataset -o " + tmp("ds3") + " --split test").code, 2);
}

}  // namespace
