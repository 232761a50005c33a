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

#include "parnet/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

namespace parnet {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'W', '1'};
constexpr std::uint8_t kFusedFlag = 1;

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::kFormat,
                           std::string("truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return b_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v = static_cast<std::uint16_t>(v | b_[pos_++] << (8 * i));
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  size_t pos_ = 0;
};

}  // namespace

const char* to_string(CheckpointErrorKind k) {
  switch (k) {
    case CheckpointErrorKind::kIo: return "io";
    case CheckpointErrorKind::kBadMagic: return "bad-magic";
    case CheckpointErrorKind::kFormat: return "format";
    case CheckpointErrorKind::kFormMismatch: return "form-mismatch";
    case CheckpointErrorKind::kMissingTensor: return "missing-tensor";
    case CheckpointErrorKind::kUnexpectedTensor: return "unexpected-tensor";
    case CheckpointErrorKind::kDimMismatch: return "dim-mismatch";
    case CheckpointErrorKind::kInvalidName: return "invalid-name";
  }
  return "?";
}

std::vector<NamedTensor> collect_tensors(const ModelGraph& g) {
  std::vector<NamedTensor> out;
  for (const auto& n : g.nodes) {
    if (!n.weights) throw CheckpointError(CheckpointErrorKind::kMissingTensor, "node " + n.name + " has no weights");
    BlockWeights copy = *n.weights;
    for (const auto& r : weight_refs(copy)) {
      out.push_back({n.name + "." + r.name, r.shape, std::vector<float>(r.data, r.data + r.shape.numel())});
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& c) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u8(c.fused ? kFusedFlag : 0);
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.empty() || t.name.size() > 0xffff) {
      throw CheckpointError(CheckpointErrorKind::kInvalidName, "tensor name must have 1..65535 bytes");
    }
    if (static_cast<std::int64_t>(t.data.size()) != t.shape.numel()) {
      throw CheckpointError(CheckpointErrorKind::kDimMismatch, t.name + ": payload does not match dims");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.shape.rank()));
    for (int i = 0; i < t.shape.rank(); ++i) w.u32(static_cast<std::uint32_t>(t.shape[i]));
    for (float v : t.data) w.u32(std::bit_cast<std::uint32_t>(v));
  }
  return std::move(w.out);
}

CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw CheckpointError(CheckpointErrorKind::kBadMagic, "file does not start with PNW1");
  }
  Reader r(bytes);
  r.str(4, "magic");
  CheckpointContents c;
  const auto flags = r.u8("flags");
  if ((flags & ~kFusedFlag) != 0) throw CheckpointError(CheckpointErrorKind::kFormat, "unknown flag bits");
  c.fused = (flags & kFusedFlag) != 0;
  const auto count = r.u32("tensor count");
  std::map<std::string, int> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto len = r.u16("name length");
    if (len == 0) throw CheckpointError(CheckpointErrorKind::kInvalidName, "empty tensor name");
    t.name = r.str(len, "name");
    if (seen[t.name]++ > 0) throw CheckpointError(CheckpointErrorKind::kFormat, "duplicate tensor " + t.name);
    const auto rank = r.u8("rank");
    if (rank < 1 || rank > 4) throw CheckpointError(CheckpointErrorKind::kFormat, t.name + ": rank must be 1..4");
    std::vector<std::int64_t> dims;
    std::uint64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      dims.push_back(r.u32("dims"));
      if (dims.back() == 0) throw CheckpointError(CheckpointErrorKind::kFormat, t.name + ": zero extent");
      numel *= static_cast<std::uint64_t>(dims.back());
    }
    if (numel * 4 > r.remaining()) {
      throw CheckpointError(CheckpointErrorKind::kFormat, "truncated payload of " + t.name);
    }
    t.shape = Shape(std::span<const std::int64_t>(dims));
    t.data.resize(numel);
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32("payload"));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(CheckpointErrorKind::kFormat, "trailing bytes after last tensor");
  return c;
}

void save_checkpoint(const ModelGraph& g, const std::string& path) {
  if (g.form() == GraphForm::kMixed) {
    throw CheckpointError(CheckpointErrorKind::kFormMismatch, "cannot save a mixed-form graph");
  }
  const auto bytes = encode_checkpoint({g.form() == GraphForm::kDeployed, collect_tensors(g)});
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "write failed for " + path);
}

ModelGraph bind_checkpoint(const CheckpointContents& c, const ModelGraph& g) {
  const GraphForm form = g.form();
  if (form == GraphForm::kMixed) throw CheckpointError(CheckpointErrorKind::kFormMismatch, "graph has mixed form");
  if (c.fused != (form == GraphForm::kDeployed)) {
    throw CheckpointError(CheckpointErrorKind::kFormMismatch,
                          std::string("checkpoint is ") + (c.fused ? "fused" : "unfused") + " but the graph is " +
                              to_string(form));
  }
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : c.tensors) by_name[t.name] = &t;
  size_t used = 0;
  ModelGraph out = g;
  for (auto& n : out.nodes) {
    BlockWeights w = make_block_weights(n.spec);
    for (auto& r : weight_refs(w)) {
      const std::string name = n.name + "." + r.name;
      auto it = by_name.find(name);
      if (it == by_name.end()) throw CheckpointError(CheckpointErrorKind::kMissingTensor, name);
      if (it->second->shape != r.shape) {
        throw CheckpointError(CheckpointErrorKind::kDimMismatch,
                              name + ": checkpoint " + it->second->shape.str() + ", graph " + r.shape.str());
      }
      std::copy(it->second->data.begin(), it->second->data.end(), r.data);
      ++used;
    }
    n.weights = std::move(w);
  }
  if (used != c.tensors.size()) {
    // Report the first tensor the graph did not ask for.
    std::map<std::string, bool> expected;
    for (auto& n : out.nodes) {
      for (const auto& r : weight_refs(*n.weights)) expected[n.name + "." + r.name] = true;
    }
    for (const auto& t : c.tensors) {
      if (!expected.count(t.name)) throw CheckpointError(CheckpointErrorKind::kUnexpectedTensor, t.name);
    }
  }
  return out;
}

ModelGraph load_checkpoint(const std::string& path, const ModelGraph& g) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bind_checkpoint(decode_checkpoint(bytes), g);
}

bool checkpoint_is_fused(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path);
  char head[5] = {};
  f.read(head, 5);
  if (f.gcount() < 4 || !std::equal(kMagic, kMagic + 4, head)) {
    throw CheckpointError(CheckpointErrorKind::kBadMagic, path + " does not start with PNW1");
  }
  if (f.gcount() < 5) throw CheckpointError(CheckpointErrorKind::kFormat, "truncated while reading flags");
  return (static_cast<std::uint8_t>(head[4]) & kFusedFlag) != 0;
}

}  // namespace parnet
