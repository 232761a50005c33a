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

#include "parnet/graph.hpp"

#include <deque>

namespace parnet {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kS: return "S";
    case Variant::kM: return "M";
    case Variant::kL: return "L";
    case Variant::kXL: return "XL";
    case Variant::kCustom: return "custom";
  }
  return "?";
}

const char* to_string(DatasetShape d) { return d == DatasetShape::kImageNet ? "imagenet" : "cifar"; }

const char* to_string(NodeRole r) {
  switch (r) {
    case NodeRole::kStem: return "stem";
    case NodeRole::kStream: return "stream";
    case NodeRole::kFusion: return "fusion";
    case NodeRole::kTail: return "tail";
  }
  return "?";
}

const char* to_string(GraphForm f) {
  switch (f) {
    case GraphForm::kTrainable: return "trainable";
    case GraphForm::kDeployed: return "deployed";
    case GraphForm::kMixed: return "mixed";
  }
  return "?";
}

ModelConfig ModelConfig::named(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.num_streams = 3;
  c.dataset = DatasetShape::kImageNet;
  switch (v) {
    case Variant::kS: c.stream_widths = {96, 192, 384}; c.final_width = 1280; break;
    case Variant::kM: c.stream_widths = {128, 256, 512}; c.final_width = 2048; break;
    case Variant::kL: c.stream_widths = {160, 320, 640}; c.final_width = 2560; break;
    case Variant::kXL: c.stream_widths = {200, 400, 800}; c.final_width = 3200; break;
    case Variant::kCustom: throw ConfigError("custom configs have no preset widths");
  }
  return c;
}

bool ModelGraph::has_weights() const {
  for (const auto& n : nodes) {
    if (!n.weights) return false;
  }
  return !nodes.empty();
}

GraphForm ModelGraph::form() const {
  bool trainable = false, deployed = false;
  for (const auto& n : nodes) {
    if (n.spec.kind != BlockKind::kRepVggSse) continue;
    (n.spec.form == BlockForm::kTrainable ? trainable : deployed) = true;
  }
  if (trainable && deployed) return GraphForm::kMixed;
  return deployed ? GraphForm::kDeployed : GraphForm::kTrainable;
}

std::vector<std::pair<int, int>> ModelGraph::edges() const {
  std::vector<std::pair<int, int>> e;
  for (const auto& n : nodes) {
    for (int src : n.inputs) e.emplace_back(src, n.id);
  }
  return e;
}

std::vector<std::vector<int>> ModelGraph::successors() const {
  std::vector<std::vector<int>> succ(nodes.size());
  for (const auto& n : nodes) {
    for (int src : n.inputs) {
      if (src < 0 || src >= static_cast<int>(nodes.size())) {
        throw GraphError("node " + n.name + " reads missing node " + std::to_string(src));
      }
      succ[static_cast<size_t>(src)].push_back(n.id);
    }
  }
  return succ;
}

std::vector<int> ModelGraph::topological_order() const {
  const auto succ = successors();
  std::vector<int> indegree(nodes.size(), 0);
  for (const auto& n : nodes) indegree[static_cast<size_t>(n.id)] = static_cast<int>(n.inputs.size());
  std::deque<int> ready;
  for (const auto& n : nodes) {
    if (n.inputs.empty()) ready.push_back(n.id);
  }
  std::vector<int> order;
  order.reserve(nodes.size());
  while (!ready.empty()) {
    const int id = ready.front();
    ready.pop_front();
    order.push_back(id);
    for (int s : succ[static_cast<size_t>(id)]) {
      if (--indegree[static_cast<size_t>(s)] == 0) ready.push_back(s);
    }
  }
  if (order.size() != nodes.size()) throw GraphError("graph contains a cycle");
  return order;
}

}  // namespace parnet
