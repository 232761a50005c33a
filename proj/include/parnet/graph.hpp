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

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "parnet/blocks.hpp"

namespace parnet {

enum class Variant { kS, kM, kL, kXL, kCustom };
enum class DatasetShape { kImageNet, kCifar };

const char* to_string(Variant v);
const char* to_string(DatasetShape d);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  Variant variant = Variant::kCustom;
  int num_streams = 3;
  std::vector<std::int64_t> stream_widths;  // one per stream, lowest resolution last
  std::int64_t stem_width = 64;
  std::int64_t final_width = 0;  // ImageNet: last Downsampling width. CIFAR: 1x1 head width.
  std::int64_t height = 224;
  std::int64_t width = 224;
  std::int64_t num_classes = 1000;
  DatasetShape dataset = DatasetShape::kImageNet;

  /// The S/M/L/XL ImageNet models at 224x224 with 1000 classes.
  static ModelConfig named(Variant v);

  bool operator==(const ModelConfig&) const = default;
};

enum class NodeRole { kStem, kStream, kFusion, kTail };
const char* to_string(NodeRole r);

struct Node {
  int id = 0;
  std::string name;  // unique; prefixes every checkpoint tensor of this node
  BlockSpec spec;
  NodeRole role = NodeRole::kStem;
  int stream = 0;  // 1-based stream index for stream/fusion nodes, 0 otherwise
  int lane = 1;    // 1-based worker lane when every stream has its own worker
  std::vector<int> inputs;  // empty: reads the network input
  std::optional<BlockWeights> weights;
};

enum class GraphForm { kTrainable, kDeployed, kMixed };
const char* to_string(GraphForm f);

struct ModelGraph {
  ModelConfig config;
  std::vector<Node> nodes;  // node.id == index
  int output = -1;
  bool fused = false;  // set by the reparameterization pass

  const Node& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  Node& node(int id) { return nodes.at(static_cast<size_t>(id)); }
  bool has_weights() const;
  GraphForm form() const;
  std::vector<std::pair<int, int>> edges() const;
  /// Kahn order; throws GraphError on a cycle or dangling edge.
  std::vector<int> topological_order() const;
  /// Consumers of each node.
  std::vector<std::vector<int>> successors() const;
};

}  // namespace parnet
