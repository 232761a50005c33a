// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
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

// JSON model configs. Keys:
//
//   variant        "S" | "M" | "L" | "XL" | "custom"   (required)
//   num_streams    1..4
//   stream_widths  one width per stream
//   stem_width     first stem width (custom ImageNet models only)
//   final_width    last Downsampling width (ImageNet) or 1x1 head width (CIFAR)
//   resolution     [height, width] or a single square size
//   num_classes
//   dataset_shape  "imagenet" | "cifar"
//
// Named variants fill the rest; any width they are given must agree with the
// preset. Unknown keys are rejected.

#pragma once

#include <string>

#include "parnet/graph.hpp"

namespace parnet {

ModelConfig parse_config(const std::string& json_text);
std::string config_to_json(const ModelConfig& cfg);

ModelConfig load_config(const std::string& path);
void save_config(const ModelConfig& cfg, const std::string& path);

Variant parse_variant(const std::string& s);

}  // namespace parnet
