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

// Named architectures shared by the command-line tool and the tests.

#include <optional>
#include <string>
#include <vector>

#include "lccn/graph.hpp"

namespace lccn {

struct NamedPreset {
  std::string name;
  std::string description;
};

inline const std::vector<NamedPreset>& preset_list() {
  static const std::vector<NamedPreset> list = {
      {"toy-resnet8-aftaft", "depth-8 toy net, 8x8x3 input, 4 classes, Aft-Aft"},
      {"toy-resnet8-aftbef", "toy net, Aft-Bef"},
      {"toy-resnet8-befbef", "toy net, Bef-Bef"},
      {"toy-resnet8-befaft", "toy net, Bef-Aft"},
      {"toy-resnet8-nobn", "toy net, Aft-Aft, collaborative layers without BN"},
      {"toy-resnet8-pointwise", "toy net, Aft-Aft, 1x1xCxT collaborative kernels"},
      {"toy-resnet8-dense", "toy net without collaborative layers"},
      {"resnet20-cifar", "ResNet-20, 18 accelerated convs"},
      {"resnet32-cifar", "ResNet-32"},
      {"resnet110-cifar", "ResNet-110"},
      {"resnet164-cifar10", "bottleneck ResNet-164, first and second conv accelerated"},
      {"resnet164-cifar100", "bottleneck ResNet-164, 100 classes, second conv accelerated"},
      {"wrn-40-4-cifar", "wide ResNet-40-4"},
      {"resnet18-imagenet", "ImageNet ResNet-18, all residual convs accelerated"},
      {"resnet34-imagenet", "ImageNet ResNet-34, first block of each stage dense"},
  };
  return list;
}

inline std::optional<ArchConfig> named_preset(const std::string& name) {
  std::optional<ArchConfig> a;
  if (name.rfind("toy-resnet8-", 0) == 0) {
    const std::string v = name.substr(12);
    static const std::vector<std::pair<std::string, std::string>> toy = {
        {"aftaft", "aft-aft"}, {"aftbef", "aft-bef"}, {"befbef", "bef-bef"},
        {"befaft", "bef-aft"}, {"nobn", "aft-aft"},   {"pointwise", "aft-aft"},
        {"dense", "aft-aft"}};
    for (const auto& [key, strategy] : toy) {
      if (key != v) continue;
      a = toy_resnet_config(8, 8, 4, {8, 16, 32},
                            v == "dense" ? AccelPreset::kDense : AccelPreset::kAll);
      a->lccl_bn = v != "nobn";
      if (v == "pointwise") a->lccl_form = LcclForm::kPointwiseFull;
      a->set_strategy(strategy);
    }
  } else if (name == "resnet20-cifar") {
    a = cifar_resnet_config(20, 1, AccelPreset::kStandard);
  } else if (name == "resnet32-cifar") {
    a = cifar_resnet_config(32, 1, AccelPreset::kStandard);
  } else if (name == "resnet110-cifar") {
    a = cifar_resnet_config(110, 1, AccelPreset::kStandard);
  } else if (name == "resnet164-cifar10") {
    a = cifar_resnet_config(164, 1, AccelPreset::kStandard, BlockKind::kBottleneck);
  } else if (name == "resnet164-cifar100") {
    a = cifar_resnet_config(164, 1, AccelPreset::kStandardCifar100, BlockKind::kBottleneck, 100);
  } else if (name == "wrn-40-4-cifar") {
    // Wide-ResNet depth counts the projection convs: 40 = 6n + 4, n = 6.
    a = cifar_resnet_config(38, 4, AccelPreset::kStandard);
  } else if (name == "resnet18-imagenet") {
    a = imagenet_resnet_config(18, AccelPreset::kStandard);
  } else if (name == "resnet34-imagenet") {
    a = imagenet_resnet_config(34, AccelPreset::kStandard);
  }
  if (a) a->name = name;
  return a;
}

}  // namespace lccn
