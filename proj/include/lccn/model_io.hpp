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

// On-disk format: `<base>.manifest` is JSON
//   { "format_version": 1, "kind": "model"|"tensors", "architecture": {...},
//     "tensors": [ {"name", "shape", "offset", "length"} ... ], "metadata": {...},
//     "blob_bytes": N, "blob_checksum": "<fnv1a-64 hex>" }
// and `<base>.weights` is the little-endian float32 payload the directory
// points into. Entries are looked up by name, so their order is irrelevant.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include "lccn/graph.hpp"
#include "lccn/presets.hpp"
#include "lccn/tensor.hpp"

namespace lccn {

static_assert(std::endian::native == std::endian::little,
              "weight blobs are little-endian float32; big-endian hosts are unsupported");

inline constexpr int kFormatVersion = 1;

/// File system failure, with the path involved.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Manifest or blob contents that cannot be trusted.
class FormatError : public Error {
 public:
  using Error::Error;
};

struct ModelFiles {
  std::string manifest;
  std::string weights;

  /// Accepts a base path or either file of the pair.
  static ModelFiles of(std::string base) {
    for (const char* ext : {".manifest", ".weights"}) {
      const std::string e(ext);
      if (base.size() > e.size() && base.compare(base.size() - e.size(), e.size(), e) == 0) {
        base.resize(base.size() - e.size());
        break;
      }
    }
    return {base + ".manifest", base + ".weights"};
  }
};

// ---------------------------------------------------------------------------
// Architecture descriptors

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  using nlohmann::json;
  json stages = json::array();
  for (const auto& s : a.stages)
    stages.push_back({{"width", s.width}, {"blocks", s.blocks}, {"stride", s.stride}});
  json strategy = json::array();
  for (const auto& block : a.strategy) {
    json row = json::array();
    for (auto c : block) row.push_back(to_string(c));
    strategy.push_back(row);
  }
  return {{"name", a.name},
          {"input", {a.input_x, a.input_y, a.input_c}},
          {"classes", a.classes},
          {"stem",
           {{"k", a.stem.k},
            {"stride", a.stem.stride},
            {"pad", a.stem.pad},
            {"out_channels", a.stem.out_channels},
            {"bn_relu_pool", a.stem.bn_relu_pool}}},
          {"block", a.kind == BlockKind::kBasic ? "basic" : "bottleneck"},
          {"stages", stages},
          {"lccl_form", to_string(a.lccl_form)},
          {"lccl_bn", a.lccl_bn},
          {"accelerate", a.accelerate},
          {"strategy", strategy}};
}

/// Reads either a full descriptor (as written by arch_to_json) or a preset
/// reference: {"preset": {"family": "cifar"|"imagenet"|"toy", "depth", "widen",
/// "accel", "classes", "input", "widths"}} plus optional "strategy" (pattern
/// string like "bef-aft"), "lccl_form" and "lccl_bn" overrides.
inline ArchConfig arch_from_json(const nlohmann::json& j) {
  try {
    ArchConfig a;
    if (j.contains("preset") && j.at("preset").is_string()) {
      const auto name = j.at("preset").get<std::string>();
      auto named = named_preset(name);
      if (!named) throw ConfigError("unknown preset '" + name + "'");
      a = *named;
    } else if (j.contains("preset")) {
      const auto& p = j.at("preset");
      const std::string family = p.value("family", "toy");
      const auto preset = parse_accel_preset(p.value("accel", std::string("all")));
      if (family == "cifar") {
        const int depth = p.value("depth", 20);
        a = cifar_resnet_config(depth, p.value("widen", 1), preset,
                                p.value("block", std::string("basic")) == "bottleneck"
                                    ? BlockKind::kBottleneck
                                    : BlockKind::kBasic,
                                p.value("classes", 10));
      } else if (family == "imagenet") {
        a = imagenet_resnet_config(p.value("depth", 18), preset);
      } else if (family == "toy") {
        a = toy_resnet_config(p.value("depth", 8), p.value("input", 8), p.value("classes", 4),
                              p.value("widths", std::vector<int>{8, 16, 32}), preset);
      } else {
        throw ConfigError("unknown architecture family '" + family + "'");
      }
      if (j.contains("name")) a.name = j.at("name").get<std::string>();
    } else {
      a.name = j.value("name", std::string("custom"));
      const auto in = j.at("input").get<std::vector<int>>();
      if (in.size() != 3) throw ConfigError("architecture input must be [x, y, c]");
      a.input_x = in[0];
      a.input_y = in[1];
      a.input_c = in[2];
      a.classes = j.at("classes").get<int>();
      const auto& s = j.at("stem");
      a.stem = StemConfig{s.at("k").get<int>(), s.at("stride").get<int>(), s.at("pad").get<int>(),
                          s.at("out_channels").get<int>(), s.value("bn_relu_pool", false)};
      const std::string block = j.value("block", std::string("basic"));
      if (block != "basic" && block != "bottleneck") {
        throw ConfigError("unknown block kind '" + block + "'");
      }
      a.kind = block == "basic" ? BlockKind::kBasic : BlockKind::kBottleneck;
      for (const auto& st : j.at("stages"))
        a.stages.push_back({st.at("width").get<int>(), st.at("blocks").get<int>(),
                            st.value("stride", 1)});
      if (j.contains("accelerate")) {
        a.accelerate = j.at("accelerate").get<std::vector<std::vector<bool>>>();
      }
      if (j.contains("strategy") && j.at("strategy").is_array()) {
        for (const auto& row : j.at("strategy")) {
          std::vector<Connection> r;
          for (const auto& c : row) r.push_back(parse_connection(c.get<std::string>()));
          a.strategy.push_back(std::move(r));
        }
      }
    }
    if (j.contains("lccl_form")) a.lccl_form = parse_lccl_form(j.at("lccl_form").get<std::string>());
    if (j.contains("lccl_bn")) a.lccl_bn = j.at("lccl_bn").get<bool>();
    a.normalize();
    if (j.contains("strategy") && j.at("strategy").is_string()) {
      a.set_strategy(j.at("strategy").get<std::string>());
    }
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed architecture descriptor: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tensor bundles

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

/// Exclusive lock file beside the manifest, removed on scope exit.
class PathLock {
 public:
  explicit PathLock(std::string path) : path_(std::move(path) + ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw IoError("cannot lock '" + path_ + "': another save is in progress or the directory is not writable");
  }
  ~PathLock() {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  PathLock(const PathLock&) = delete;
  PathLock& operator=(const PathLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

inline void write_atomically(const std::string& path, const char* data, std::size_t bytes) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(data, static_cast<std::streamsize>(bytes));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError("write failed for '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// 64-bit FNV-1a over the blob, stored as 16 hex digits.
inline std::string blob_checksum(const char* data, std::size_t bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

template <class Visit>
void save_bundle(const std::string& base, const std::string& kind, const nlohmann::json* arch,
                 const nlohmann::json& metadata, Visit&& visit) {
  const auto files = ModelFiles::of(base);
  PathLock lock(files.manifest);
  nlohmann::json dir = nlohmann::json::array();
  std::vector<char> blob;
  visit([&](const std::string& name, const Tensor& t) {
    const std::size_t bytes = t.size() * sizeof(float);
    dir.push_back({{"name", name},
                   {"shape", t.shape().dims()},
                   {"offset", blob.size()},
                   {"length", bytes}});
    const auto* p = reinterpret_cast<const char*>(t.raw());
    blob.insert(blob.end(), p, p + bytes);
  });
  nlohmann::json m = {{"format_version", kFormatVersion}, {"kind", kind}, {"tensors", dir},
                      {"metadata", metadata.is_null() ? nlohmann::json::object() : metadata},
                      {"blob_bytes", blob.size()},
                      {"blob_checksum", blob_checksum(blob.data(), blob.size())}};
  if (arch) m["architecture"] = *arch;
  write_atomically(files.weights, blob.data(), blob.size());
  const std::string text = m.dump(2) + "\n";
  write_atomically(files.manifest, text.data(), text.size());
}

struct Bundle {
  nlohmann::json manifest;
  std::map<std::string, NamedTensor> tensors;
};

inline Bundle load_bundle(const std::string& base, const std::string& expected_kind) {
  const auto files = ModelFiles::of(base);
  const auto text = read_file(files.manifest);
  Bundle b;
  try {
    b.manifest = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + files.manifest + "' is not valid JSON: " + e.what());
  }
  const auto& m = b.manifest;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw FormatError("'" + files.manifest + "' has format_version " + std::to_string(version) +
                        ", this build reads " + std::to_string(kFormatVersion));
    }
    const std::string kind = m.value("kind", std::string("model"));
    if (kind != expected_kind) {
      throw FormatError("'" + files.manifest + "' holds '" + kind + "', expected '" +
                        expected_kind + "'");
    }
    const auto blob = read_file(files.weights);
    const auto expected_bytes = m.at("blob_bytes").get<std::size_t>();
    if (blob.size() != expected_bytes) {
      throw FormatError("'" + files.weights + "' has " + std::to_string(blob.size()) +
                        " bytes, manifest records " + std::to_string(expected_bytes));
    }
    if (m.at("blob_checksum").get<std::string>() != blob_checksum(blob.data(), blob.size())) {
      throw FormatError("'" + files.weights + "' fails its checksum (corrupted blob)");
    }
    std::vector<std::pair<std::size_t, std::size_t>> extents;
    for (const auto& e : m.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const auto dims = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      Shape shape;
      try {
        shape = Shape(dims);
      } catch (const ShapeError&) {
        throw FormatError("tensor '" + name + "' has an invalid shape");
      }
      if (length != shape.size() * sizeof(float)) {
        throw FormatError("tensor '" + name + "': length " + std::to_string(length) +
                          " bytes does not match shape " + shape.to_string());
      }
      if (offset > blob.size() || length > blob.size() - offset) {
        throw FormatError("tensor '" + name + "' [" + std::to_string(offset) + ", +" +
                          std::to_string(length) + ") lies outside the " +
                          std::to_string(blob.size()) + "-byte blob '" + files.weights + "'");
      }
      if (b.tensors.count(name)) throw FormatError("tensor '" + name + "' listed twice");
      extents.emplace_back(offset, length);
      std::vector<float> data(shape.size());
      std::memcpy(data.data(), blob.data() + offset, length);
      b.tensors.emplace(name, NamedTensor{name, Tensor(shape, std::move(data))});
    }
    std::sort(extents.begin(), extents.end());
    for (std::size_t i = 1; i < extents.size(); ++i)
      if (extents[i - 1].first + extents[i - 1].second > extents[i].first)
        throw FormatError("tensor extents overlap in '" + files.manifest + "'");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest '" + files.manifest + "': " + e.what());
  }
  return b;
}

}  // namespace detail

/// Writes any named tensors (inputs, datasets) in the model file format.
inline void save_tensors(const std::string& base, const std::vector<NamedTensor>& tensors,
                         const nlohmann::json& metadata = nlohmann::json::object()) {
  detail::save_bundle(base, "tensors", nullptr, metadata, [&](auto&& emit) {
    for (const auto& t : tensors) emit(t.name, t.tensor);
  });
}

inline std::map<std::string, NamedTensor> load_tensors(const std::string& base,
                                                       nlohmann::json* metadata = nullptr) {
  auto b = detail::load_bundle(base, "tensors");
  if (metadata) *metadata = b.manifest.value("metadata", nlohmann::json::object());
  return std::move(b.tensors);
}

/// Saves architecture, every parameter and buffer, and free-form metadata.
inline void save_model(const Graph<float>& g, const std::string& base,
                       const nlohmann::json& metadata = nlohmann::json::object()) {
  const auto arch = arch_to_json(g.config);
  nlohmann::json meta = metadata;
  meta["bn_eps"] = g.head_bn.eps;
  meta["bn_momentum"] = g.head_bn.momentum;
  detail::save_bundle(base, "model", &arch, meta, [&](auto&& emit) {
    visit_params(g, [&](const std::string& name, const Tensor& t, ParamKind) { emit(name, t); });
  });
}

struct LoadedModel {
  Graph<float> graph;
  nlohmann::json metadata;
};

/// Rebuilds the graph from the manifest's architecture and fills every tensor
/// by name. Missing, extra or mis-shaped tensors are errors; nothing partial is
/// returned.
inline LoadedModel load_model(const std::string& base) {
  auto b = detail::load_bundle(base, "model");
  const auto files = ModelFiles::of(base);
  if (!b.manifest.contains("architecture")) {
    throw FormatError("'" + files.manifest + "' has no architecture");
  }
  LoadedModel out;
  out.graph = build_graph<float>(arch_from_json(b.manifest.at("architecture")), 0);
  out.metadata = b.manifest.value("metadata", nlohmann::json::object());
  std::size_t used = 0;
  visit_params(out.graph, [&](const std::string& name, Tensor& t, ParamKind) {
    const auto it = b.tensors.find(name);
    if (it == b.tensors.end()) {
      throw FormatError("'" + files.manifest + "' is missing tensor '" + name + "'");
    }
    if (it->second.tensor.shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + it->second.tensor.shape().to_string() +
                        ", architecture expects " + t.shape().to_string());
    }
    t = std::move(it->second.tensor);
    ++used;
  });
  if (used != b.tensors.size()) {
    for (const auto& [name, nt] : b.tensors) {
      bool known = false;
      visit_params(out.graph, [&](const std::string& n, const Tensor&, ParamKind) {
        known = known || n == name;
      });
      if (!known) throw FormatError("'" + files.manifest + "' has unknown tensor '" + name + "'");
    }
  }
  const double eps = out.metadata.value("bn_eps", 1e-5);
  const double momentum = out.metadata.value("bn_momentum", 0.9);
  auto set = [&](BatchNorm<float>& bn) {
    bn.eps = eps;
    bn.momentum = momentum;
  };
  if (out.graph.stem_bn) set(*out.graph.stem_bn);
  for (auto& blk : out.graph.blocks)
    for (auto& u : blk.units) {
      set(u.pre_bn);
      if (auto* a = u.accel()) set(a->lccl.bn);
    }
  set(out.graph.head_bn);
  out.graph.validate();
  return out;
}

}  // namespace lccn
