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

// lccn: train, run, benchmark and inspect networks with collaborative layers.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lccn/lccn.hpp"

namespace {

using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int default_workers() {
  if (const char* env = std::getenv("LCCN_WORKERS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
    }
    throw lccn::ConfigError(std::string("LCCN_WORKERS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

struct TrainSetup {
  lccn::ArchConfig arch;
  lccn::DatasetConfig data;
  lccn::SgdConfig sgd;
};

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lccn::IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw lccn::ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

/// A preset name or a JSON file {"architecture", "dataset", "sgd"}.
TrainSetup resolve_train_config(const std::string& config) {
  TrainSetup s;
  if (std::filesystem::is_regular_file(config)) {
    const json j = read_json(config);
    try {
      s.arch = lccn::arch_from_json(j.at("architecture"));
      if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        s.data.size = d.value("size", s.data.size);
        s.data.channels = d.value("channels", s.data.channels);
        s.data.classes = d.value("classes", s.data.classes);
        s.data.train = d.value("train", s.data.train);
        s.data.val = d.value("val", s.data.val);
        s.data.noise = d.value("noise", s.data.noise);
        s.data.seed = d.value("seed", s.data.seed);
      }
      if (j.contains("sgd")) {
        const auto& g = j.at("sgd");
        s.sgd.base_lr = g.value("base_lr", s.sgd.base_lr);
        s.sgd.warmup_lr = g.value("warmup_lr", s.sgd.warmup_lr);
        s.sgd.warmup_fraction = g.value("warmup_fraction", s.sgd.warmup_fraction);
        s.sgd.decay_points = g.value("decay_points", s.sgd.decay_points);
        s.sgd.decay_factor = g.value("decay_factor", s.sgd.decay_factor);
        s.sgd.momentum = g.value("momentum", s.sgd.momentum);
        s.sgd.weight_decay = g.value("weight_decay", s.sgd.weight_decay);
        s.sgd.epochs = g.value("epochs", s.sgd.epochs);
        s.sgd.batch_size = g.value("batch_size", s.sgd.batch_size);
        s.sgd.seed = g.value("seed", s.sgd.seed);
        s.sgd.mu = g.value("mu", s.sgd.mu);
        s.sgd.rho = g.value("rho", s.sgd.rho);
      }
    } catch (const json::exception& e) {
      throw lccn::ConfigError("malformed training config '" + config + "': " + e.what());
    }
    return s;
  }
  auto arch = config.rfind("toy-", 0) == 0 ? lccn::named_preset(config) : std::nullopt;
  if (!arch) {
    throw lccn::ConfigError("unknown preset or config file '" + config +
                            "' (run `lccn presets` for the list)");
  }
  s.arch = *arch;
  return s;
}

lccn::Path parse_path(const std::string& p) {
  if (p == "masked") return lccn::Path::kMasked;
  if (p == "dense") return lccn::Path::kDense;
  if (p == "dense-then-gate") return lccn::Path::kDenseThenGate;
  throw lccn::ConfigError("unknown execution path '" + p + "'");
}

std::string strategy_pattern(const lccn::ArchConfig& a) {
  std::string s;
  if (a.strategy.empty()) return s;
  for (std::size_t u = 0; u < a.strategy[0].size(); ++u)
    s += (u ? "-" : "") + lccn::to_string(a.strategy[0][u]);
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw lccn::IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw lccn::IoError("write failed for '" + path + "'");
}

/// The input tensor of a tensors file: "input", else "x", else the only one.
lccn::Tensor input_tensor(const std::string& path) {
  auto t = lccn::load_tensors(path);
  for (const char* key : {"input", "x"})
    if (auto it = t.find(key); it != t.end()) return std::move(it->second.tensor);
  if (t.size() == 1) return std::move(t.begin()->second.tensor);
  throw lccn::FormatError("'" + path + "' has no tensor named 'input' or 'x'");
}

std::string stats_csv(const lccn::RunStats& stats) {
  std::string out =
      "layer,accelerated,form,sparsity,kept,performed_macs,skipped_macs,lccl_macs,dense_macs,"
      "block_skipped\n";
  char buf[256];
  for (const auto& c : stats.convs) {
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%.6f,%.6f,%llu,%llu,%llu,%llu,%d\n", c.name.c_str(),
                  c.accelerated ? 1 : 0, c.accelerated ? lccn::to_string(c.stats.form).c_str() : "none",
                  c.stats.sparsity(), c.stats.kept(),
                  static_cast<unsigned long long>(c.stats.performed_macs),
                  static_cast<unsigned long long>(c.stats.skipped_macs),
                  static_cast<unsigned long long>(c.stats.lccl_macs),
                  static_cast<unsigned long long>(c.stats.dense_macs), c.block_skipped ? 1 : 0);
    out += buf;
  }
  return out;
}

lccn::Tensor random_input(const lccn::Graph<float>& g, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  lccn::Tensor x(lccn::Shape{batch, g.config.input_x, g.config.input_y, g.config.input_c});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = dist(rng);
  return x;
}

/// Writes a binary PGM: 255 where the gate is open, 0 where it is closed. For
/// per-channel gates the gray level is the fraction of open channels.
void write_pgm(const std::string& path, const lccn::Tensor& vp, std::size_t image) {
  const auto d = lccn::FeatureDims::of(vp.shape());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lccn::IoError("cannot write '" + path + "'");
  out << "P5\n" << d.y << ' ' << d.x << "\n255\n";
  for (std::size_t x = 0; x < d.x; ++x)
    for (std::size_t y = 0; y < d.y; ++y) {
      std::size_t open = 0;
      for (std::size_t c = 0; c < d.c; ++c)
        open += vp[((image * d.x + x) * d.y + y) * d.c + c] != 0.0f;
      out.put(static_cast<char>(255 * open / d.c));
    }
}

// --------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string config, out, log, save_data;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch;
  std::optional<std::string> strategy;
  std::optional<double> lr, mu, rho;
  int workers = 1;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  TrainSetup s = resolve_train_config(a.config);
  if (a.seed) {
    s.sgd.seed = *a.seed;
    s.data.seed = *a.seed;
  }
  if (a.epochs) s.sgd.epochs = *a.epochs;
  if (a.batch) s.sgd.batch_size = *a.batch;
  if (a.lr) s.sgd.base_lr = *a.lr;
  if (a.mu) s.sgd.mu = *a.mu;
  if (a.rho) s.sgd.rho = *a.rho;
  if (a.strategy) s.arch.set_strategy(*a.strategy);
  s.sgd.workers = a.workers;
  s.data.size = s.arch.input_x;
  s.data.channels = s.arch.input_c;
  s.data.classes = s.arch.classes;

  const auto data = lccn::make_toy_dataset(s.data);
  auto g = lccn::build_graph<float>(s.arch, s.sgd.seed);
  if (!a.quiet) std::cout << lccn::TrainLog::csv_header() << '\n';
  const auto log = lccn::train(g, data, s.sgd, [&](const lccn::EpochLog& e) {
    if (!a.quiet) std::cout << lccn::TrainLog::csv_row(e) << std::endl;
  });
  const auto& last = log.epochs.back();
  json meta = {{"seed", s.sgd.seed},
               {"epochs", s.sgd.epochs},
               {"strategy", strategy_pattern(s.arch)},
               {"final", {{"loss", last.loss}, {"train_acc", last.train_acc},
                          {"val_acc", last.val_acc}, {"mean_sparsity", last.mean_sparsity}}},
               {"dataset", {{"size", s.data.size}, {"channels", s.data.channels},
                            {"classes", s.data.classes}, {"train", s.data.train},
                            {"val", s.data.val}, {"noise", s.data.noise}, {"seed", s.data.seed}}}};
  lccn::save_model(g, a.out, meta);
  write_text(a.log.empty() ? lccn::ModelFiles::of(a.out).manifest + ".log.csv" : a.log, log.to_csv());
  if (!a.save_data.empty()) {
    lccn::save_tensors(a.save_data,
                       {{"x", data.train_x},
                        {"y", lccn::Tensor(lccn::Shape{static_cast<std::int64_t>(data.train_y.size())},
                                           std::vector<float>(data.train_y.begin(), data.train_y.end()))}},
                       {{"split", "train"}, {"seed", s.data.seed}});
  }
  return 0;
}

int cmd_init(const std::string& preset, const std::string& out, std::uint64_t seed, bool zero_lccl,
             const std::optional<std::string>& strategy) {
  auto arch = lccn::named_preset(preset);
  if (!arch) throw lccn::ConfigError("unknown preset '" + preset + "'");
  if (strategy) arch->set_strategy(*strategy);
  auto g = lccn::build_graph<float>(*arch, seed);
  if (zero_lccl)
    for (auto& b : g.blocks)
      for (auto& u : b.units)
        if (auto* acc = u.accel()) acc->lccl.weights.fill(0.0f);
  lccn::save_model(g, out, {{"seed", seed}, {"preset", preset}});
  std::cout << "wrote " << lccn::ModelFiles::of(out).manifest << " (" << lccn::parameter_count(g)
            << " values, " << g.accelerated_convs() << " accelerated convs)\n";
  return 0;
}

int cmd_infer(const std::string& model, const std::string& input, const std::string& stats_path,
              const std::string& path, bool block_skip, int workers) {
  const auto m = lccn::load_model(model);
  const auto x = input_tensor(input);
  lccn::ExecOptions opts;
  opts.path = parse_path(path);
  opts.block_skip = block_skip;
  opts.workers = workers;
  const auto res = lccn::forward(m.graph, x, opts);
  const std::size_t N = res.logits.shape()[0], K = res.logits.shape()[1];
  std::cout << "sample,class";
  for (std::size_t k = 0; k < K; ++k) std::cout << ",p" << k;
  std::cout << '\n';
  for (std::size_t n = 0; n < N; ++n) {
    double mx = -1e300, z = 0.0;
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(res.logits[n * K + k]));
    std::vector<double> p(K);
    for (std::size_t k = 0; k < K; ++k) z += p[k] = std::exp(res.logits[n * K + k] - mx);
    const auto best = std::max_element(p.begin(), p.end()) - p.begin();
    std::cout << n << ',' << best;
    char buf[32];
    for (std::size_t k = 0; k < K; ++k) {
      std::snprintf(buf, sizeof buf, ",%.6f", p[k] / z);
      std::cout << buf;
    }
    std::cout << '\n';
  }
  const std::string csv = stats_csv(res.stats);
  if (stats_path.empty()) std::cerr << csv;
  else write_text(stats_path, csv);
  return 0;
}

struct BenchArgs {
  std::string model;
  int reps = 5, warmup = 3, workers = 1, batch = 1;
  std::optional<double> force_kept, target_speedup;
  std::string csv, input;
  std::uint64_t seed = 0;
  bool formula_only = false;
};

int cmd_bench(const BenchArgs& a) {
  lccn::Graph<float> g;
  if (a.model.rfind("preset:", 0) == 0) {
    const auto arch = lccn::named_preset(a.model.substr(7));
    if (!arch) throw lccn::ConfigError("unknown preset '" + a.model.substr(7) + "'");
    g = lccn::build_graph<float>(*arch, a.seed);
  } else {
    g = lccn::load_model(a.model).graph;
  }
  std::optional<double> kept = a.force_kept;
  if (a.target_speedup) {
    kept = lccn::implied_kept(g, *a.target_speedup);
    std::printf("implied uniform kept fraction for %.1f%% theoretical speedup: %.4f\n",
                100.0 * *a.target_speedup, *kept);
  }
  const auto x = a.input.empty() ? random_input(g, a.batch, a.seed) : input_tensor(a.input);
  lccn::FlopsReport rep;
  if (a.formula_only) {
    lccn::ExecOptions opts;
    opts.forced_kept = kept;
    opts.workers = a.workers;
    rep = lccn::make_report(lccn::forward(g, x, opts).stats);
  } else {
    rep = lccn::compare_realistic(g, x, {a.reps, a.warmup, a.workers, kept});
  }
  std::cout << rep.to_table();
  if (!a.csv.empty()) write_text(a.csv, rep.to_csv());
  return 0;
}

int cmd_bench_layer(int size, int channels, int k, double kept, int reps, int workers,
                    const std::string& csv) {
  const auto spec = lccn::ConvSpec::same(k, channels, channels, size, size);
  const auto r = lccn::bench_accel_layer(spec, kept, reps, workers);
  std::printf("layer %s kept %.4f reps %d workers %d\n", spec.to_string().c_str(), r.stats.kept(),
              reps, workers);
  std::printf("t_dense %.3f ms  t_masked %.3f ms  theoretical %.1f%%  realistic %.1f%%\n",
              r.t_dense_ms, r.t_masked_ms, 100.0 * r.theoretical_speedup,
              100.0 * r.realistic_speedup());
  if (!csv.empty()) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", size, channels, k,
                  r.stats.kept(), r.t_dense_ms, r.t_masked_ms, r.theoretical_speedup,
                  r.realistic_speedup());
    write_text(csv, std::string("size,channels,k,kept,t_dense_ms,t_masked_ms,theoretical_speedup,"
                                "realistic_speedup\n") + buf);
  }
  return 0;
}

int cmd_sparsity(const std::string& model, const std::string& dataset, const std::string& csv,
                 const std::string& masks, int limit, int workers) {
  const auto m = lccn::load_model(model);
  const auto x = input_tensor(dataset);
  if (x.shape().rank() != 4) throw lccn::ShapeError("dataset tensor must be rank 4 (N, X, Y, C)");
  lccn::ExecOptions opts;
  opts.workers = workers;
  const auto r = lccn::evaluate(m.graph, x, {}, opts);
  std::string out = "layer,sparsity,kept,zeros,cells\n";
  char buf[256];
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%llu,%llu\n", r.layers[i].c_str(),
                  r.layer_sparsity(i), 1.0 - r.layer_sparsity(i),
                  static_cast<unsigned long long>(r.zeros[i]),
                  static_cast<unsigned long long>(r.cells[i]));
    out += buf;
  }
  if (csv.empty()) std::cout << out;
  else write_text(csv, out);
  std::printf("mean_sparsity,%.6f\n", r.mean_sparsity());

  if (!masks.empty() && limit > 0) {
    std::filesystem::create_directories(masks);
    opts.keep_gate_maps = true;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(limit), x.shape()[0]);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const auto res = lccn::forward(m.graph, lccn::gather_batch<float>(x, idx), opts);
    for (std::size_t l = 0; l < res.gate_maps.size(); ++l)
      for (std::size_t i = 0; i < n; ++i)
        write_pgm(masks + "/" + r.layers[l] + ".img" + std::to_string(i) + ".pgm",
                  res.gate_maps[l], i);
  }
  return 0;
}

int cmd_dataset(const std::string& out, lccn::DatasetConfig cfg, const std::string& split) {
  const auto d = lccn::make_toy_dataset(cfg);
  const bool train = split == "train";
  if (!train && split != "val") throw lccn::ConfigError("split must be train or val");
  const auto& x = train ? d.train_x : d.val_x;
  const auto& y = train ? d.train_y : d.val_y;
  lccn::save_tensors(out,
                     {{"x", x},
                      {"y", lccn::Tensor(lccn::Shape{static_cast<std::int64_t>(y.size())},
                                         std::vector<float>(y.begin(), y.end()))}},
                     {{"split", split}, {"seed", cfg.seed}});
  std::cout << "wrote " << lccn::ModelFiles::of(out).manifest << " (" << y.size() << " images)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lccn: convolutional networks with low-cost collaborative layers"};
  app.require_subcommand(1);
  int workers = 1;
  try {
    workers = default_workers();
  } catch (const lccn::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  TrainArgs ta;
  ta.workers = workers;
  auto* train = app.add_subcommand("train", "train on the synthetic dataset and write a checkpoint");
  train->add_option("config", ta.config, "preset name or JSON config file")->required();
  train->add_option("-o,--out", ta.out, "checkpoint base path")->required();
  train->add_option("--log", ta.log, "training log CSV (default <out>.manifest.log.csv)");
  train->add_option("--save-data", ta.save_data, "also write the training split as a tensors file");
  train->add_option("--seed", ta.seed, "seed for weights, data and shuffling");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch", ta.batch);
  train->add_option("--strategy", ta.strategy, "connection pattern, e.g. aft-aft or bef-aft");
  train->add_option("--lr", ta.lr, "base learning rate");
  train->add_option("--mu", ta.mu, "smooth L1L2 L2 weight");
  train->add_option("--rho", ta.rho, "smooth L1L2 L1 weight");
  train->add_option("--workers", ta.workers)->check(CLI::PositiveNumber);
  train->add_flag("-q,--quiet", ta.quiet, "do not echo the log");

  std::string init_preset, init_out;
  std::uint64_t init_seed = 0;
  bool zero_lccl = false;
  std::optional<std::string> init_strategy;
  auto* init = app.add_subcommand("init", "write an untrained preset model");
  init->add_option("preset", init_preset)->required();
  init->add_option("-o,--out", init_out)->required();
  init->add_option("--seed", init_seed);
  init->add_option("--strategy", init_strategy);
  init->add_flag("--zero-lccl", zero_lccl, "zero every collaborative kernel (gates closed)");

  std::string im_model, im_input, im_stats, im_path = "masked";
  bool im_skip = false;
  int im_workers = workers;
  auto* infer = app.add_subcommand("infer", "class probabilities and per-layer stats");
  infer->add_option("model", im_model)->required();
  infer->add_option("input", im_input, "tensors file with 'input' or 'x'")->required();
  infer->add_option("--stats", im_stats, "per-layer stats CSV (default: stderr)");
  infer->add_option("--path", im_path, "masked | dense | dense-then-gate");
  infer->add_flag("--block-skip", im_skip, "bypass residual blocks whose branch is exactly zero");
  infer->add_option("--workers", im_workers)->check(CLI::PositiveNumber);

  BenchArgs ba;
  ba.workers = workers;
  auto* bench = app.add_subcommand("bench", "theoretical vs realistic speedup table");
  bench->add_option("model", ba.model, "checkpoint, or preset:<name>")->required();
  bench->add_option("--reps", ba.reps)->check(CLI::PositiveNumber);
  bench->add_option("--warmup", ba.warmup)->check(CLI::NonNegativeNumber);
  bench->add_option("--workers", ba.workers)->check(CLI::PositiveNumber);
  bench->add_option("--batch", ba.batch)->check(CLI::PositiveNumber);
  bench->add_option("--force-kept", ba.force_kept, "override masks with this kept fraction")
      ->check(CLI::Range(0.0, 1.0));
  bench->add_option("--target-speedup", ba.target_speedup,
                    "force the uniform kept fraction implying this theoretical speedup");
  bench->add_option("--csv", ba.csv);
  bench->add_option("--input", ba.input);
  bench->add_option("--seed", ba.seed);
  bench->add_flag("--formula-only", ba.formula_only, "skip timing");

  int bl_size = 56, bl_channels = 128, bl_k = 3, bl_reps = 20, bl_workers = workers;
  double bl_kept = 0.1;
  std::string bl_csv;
  auto* bench_layer = app.add_subcommand("bench-layer", "single-layer forced-mask benchmark");
  bench_layer->add_option("--size", bl_size)->check(CLI::PositiveNumber);
  bench_layer->add_option("--channels", bl_channels)->check(CLI::PositiveNumber);
  bench_layer->add_option("--k", bl_k)->check(CLI::PositiveNumber);
  bench_layer->add_option("--kept", bl_kept)->check(CLI::Range(0.0, 1.0));
  bench_layer->add_option("--reps", bl_reps)->check(CLI::PositiveNumber);
  bench_layer->add_option("--workers", bl_workers)->check(CLI::PositiveNumber);
  bench_layer->add_option("--csv", bl_csv);

  std::string sp_model, sp_data, sp_csv, sp_masks;
  int sp_limit = 4, sp_workers = workers;
  auto* sparsity = app.add_subcommand("sparsity", "per-layer collaborative-map sparsity");
  sparsity->add_option("model", sp_model)->required();
  sparsity->add_option("dataset", sp_data)->required();
  sparsity->add_option("--csv", sp_csv);
  sparsity->add_option("--masks", sp_masks, "directory for PGM gate images");
  sparsity->add_option("--limit", sp_limit, "images to dump masks for");
  sparsity->add_option("--workers", sp_workers)->check(CLI::PositiveNumber);

  std::string ds_out, ds_split = "train";
  lccn::DatasetConfig ds;
  auto* dataset = app.add_subcommand("dataset", "write the synthetic dataset as a tensors file");
  dataset->add_option("-o,--out", ds_out)->required();
  dataset->add_option("--size", ds.size);
  dataset->add_option("--channels", ds.channels);
  dataset->add_option("--classes", ds.classes);
  dataset->add_option("--train", ds.train);
  dataset->add_option("--val", ds.val);
  dataset->add_option("--noise", ds.noise);
  dataset->add_option("--seed", ds.seed);
  dataset->add_option("--split", ds_split, "train | val");

  auto* presets = app.add_subcommand("presets", "list preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*init) return cmd_init(init_preset, init_out, init_seed, zero_lccl, init_strategy);
    if (*infer) return cmd_infer(im_model, im_input, im_stats, im_path, im_skip, im_workers);
    if (*bench) return cmd_bench(ba);
    if (*bench_layer)
      return cmd_bench_layer(bl_size, bl_channels, bl_k, bl_kept, bl_reps, bl_workers, bl_csv);
    if (*sparsity) return cmd_sparsity(sp_model, sp_data, sp_csv, sp_masks, sp_limit, sp_workers);
    if (*dataset) return cmd_dataset(ds_out, ds, ds_split);
    if (*presets) {
      for (const auto& p : lccn::preset_list())
        std::printf("%-22s %s\n", p.name.c_str(), p.description.c_str());
      return 0;
    }
  } catch (const lccn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
