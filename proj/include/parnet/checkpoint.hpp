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

// Binary checkpoint, little-endian throughout:
//
//   "PNW1" | u8 flags (bit 0: fused) | u32 tensor count |
//   count x ( u16 name length | UTF-8 name | u8 rank | rank x u32 dim | f32 payload )
//
// Tensor names are "<node name>.<tensor name>", e.g. "stream2.3.bn1.running_var".

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parnet/graph.hpp"

namespace parnet {

enum class CheckpointErrorKind {
  kIo,
  kBadMagic,
  kFormat,  // truncated or malformed body
  kFormMismatch,
  kMissingTensor,
  kUnexpectedTensor,
  kDimMismatch,
  kInvalidName,
};

const char* to_string(CheckpointErrorKind k);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointContents {
  bool fused = false;
  std::vector<NamedTensor> tensors;
};

/// Every stored tensor of a weighted graph, in node order.
std::vector<NamedTensor> collect_tensors(const ModelGraph& g);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& c);
CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ModelGraph& g, const std::string& path);

/// Reads `path` and binds its tensors to a copy of `g` (weighted or not).
/// The graph's form must match the fused flag, and names and dims must match exactly.
ModelGraph load_checkpoint(const std::string& path, const ModelGraph& g);

/// Fused flag of a checkpoint file, read from its header only.
bool checkpoint_is_fused(const std::string& path);

/// Binding step of load_checkpoint, for in-memory contents.
ModelGraph bind_checkpoint(const CheckpointContents& c, const ModelGraph& g);

}  // namespace parnet
