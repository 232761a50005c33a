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

#include "parnet/builder.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "parnet/analysis.hpp"

namespace parnet {

namespace {

constexpr int kStemLevels = 4;
// RepVggSse blocks per stream, indexed by the stem level the stream hangs off.
constexpr int kImageNetStreamLength[kStemLevels + 1] = {0, 4, 4, 5, 5};

std::int64_t round_to_8(double v) {
  const auto r = static_cast<std::int64_t>(std::llround(v / 8.0)) * 8;
  return r < 8 ? 8 : r;
}

class GraphAssembler {
 public:
  explicit GraphAssembler(ModelGraph& g) : g_(g) {}

  int add(std::string name, BlockSpec spec, NodeRole role, int stream, int lane, std::vector<int> inputs) {
    spec.validate();
    Node n;
    n.id = static_cast<int>(g_.nodes.size());
    n.name = std::move(name);
    n.spec = spec;
    n.role = role;
    n.stream = stream;
    n.lane = lane;
    n.inputs = std::move(inputs);
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back().id;
  }

  int chain(const std::string& prefix, int count, std::int64_t width, int stream, int from) {
    int prev = from;
    for (int i = 0; i < count; ++i) {
      prev = add(prefix + "." + std::to_string(i), rep(width, width), NodeRole::kStream, stream, stream, {prev});
    }
    return prev;
  }

  static BlockSpec rep(std::int64_t ci, std::int64_t co) { return {BlockKind::kRepVggSse, ci, co, 1, 1}; }
  static BlockSpec down(std::int64_t ci, std::int64_t co) { return {BlockKind::kDownsampling, ci, co, 2, 1}; }
  static BlockSpec fusion(std::int64_t ci, std::int64_t co, int stride) {
    return {BlockKind::kFusionBlock, ci, co, stride, 2};
  }

 private:
  ModelGraph& g_;
};

void validate_common(const ModelConfig& cfg) {
  if (cfg.num_streams < 1) throw ConfigError("num_streams must be >= 1");
  if (static_cast<int>(cfg.stream_widths.size()) != cfg.num_streams) {
    throw ConfigError("stream_widths must list one width per stream");
  }
  for (auto w : cfg.stream_widths) {
    if (w <= 0 || w % 2 != 0) throw ConfigError("stream widths must be positive and even");
  }
  if (cfg.final_width <= 0) throw ConfigError("final_width must be positive");
  if (cfg.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (cfg.height <= 0 || cfg.width <= 0) throw ConfigError("resolution must be positive");
}

// Builds the fusion chain from the stream outputs (highest resolution first) and
// returns the last fusion node. Stream 1 is brought down one level first; each
// later fusion halves resolution except the one absorbing the last stream.
int fuse_streams(GraphAssembler& a, const ModelConfig& cfg, const std::vector<int>& stream_out) {
  const int s = cfg.num_streams;
  const auto& w = cfg.stream_widths;
  if (s == 1) return stream_out[0];
  int cur = a.add("stream1.down", GraphAssembler::down(w[0], w[1]), NodeRole::kStream, 1, 1, {stream_out[0]});
  for (int j = 2; j <= s; ++j) {
    const bool last = j == s;
    const auto out = last ? w[static_cast<size_t>(j - 1)] : w[static_cast<size_t>(j)];
    cur = a.add("fusion" + std::to_string(j), GraphAssembler::fusion(2 * w[static_cast<size_t>(j - 1)], out, last ? 1 : 2),
                NodeRole::kFusion, j, j, {cur, stream_out[static_cast<size_t>(j - 1)]});
  }
  return cur;
}

}  // namespace

ModelGraph build_imagenet(const ModelConfig& cfg) {
  if (cfg.dataset != DatasetShape::kImageNet) throw ConfigError("build_imagenet needs an imagenet-shaped config");
  validate_common(cfg);
  if (cfg.variant != Variant::kCustom) {
    const auto ref = ModelConfig::named(cfg.variant);
    if (cfg.num_streams != 3) throw ConfigError("named variants have exactly 3 streams");
    if (cfg.stream_widths != ref.stream_widths || cfg.final_width != ref.final_width) {
      throw ConfigError(std::string("widths do not match variant ") + to_string(cfg.variant));
    }
  }
  if (cfg.num_streams > kStemLevels) {
    throw ConfigError("at most " + std::to_string(kStemLevels) + " streams (one per stem level)");
  }
  if (cfg.height % 32 != 0 || cfg.width % 32 != 0) {
    throw ConfigError("imagenet resolution must be divisible by 32, got " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width));
  }

  ModelGraph g;
  g.config = cfg;
  GraphAssembler a(g);
  const int s = cfg.num_streams;
  const int first_level = kStemLevels - s + 1;

  // Width of each stem level: stream widths where streams attach, the stem
  // width at level 1, halving ladders in between.
  std::vector<std::int64_t> level_width(kStemLevels + 1, 0);
  for (int l = 1; l <= kStemLevels; ++l) {
    if (l >= first_level) {
      level_width[l] = cfg.stream_widths[static_cast<size_t>(l - first_level)];
    } else if (l == 1) {
      level_width[l] = cfg.stem_width;
    } else {
      level_width[l] = round_to_8(static_cast<double>(cfg.stream_widths[0]) / std::pow(2.0, first_level - l));
    }
  }

  std::vector<int> stem(kStemLevels + 1, -1);
  std::int64_t prev_width = 3;
  for (int l = 1; l <= kStemLevels; ++l) {
    const int lane = l <= first_level ? 1 : l - first_level + 1;
    stem[l] = a.add("stem.down" + std::to_string(l), GraphAssembler::down(prev_width, level_width[l]), NodeRole::kStem,
                    0, lane, l == 1 ? std::vector<int>{} : std::vector<int>{stem[l - 1]});
    prev_width = level_width[l];
  }

  // A lone stream has no fusion after it; one extra block keeps the depth at 12.
  const int extra = s == 1 ? 1 : 0;
  std::vector<int> stream_out;
  for (int j = 1; j <= s; ++j) {
    const int level = first_level + j - 1;
    stream_out.push_back(a.chain("stream" + std::to_string(j), kImageNetStreamLength[level] + extra,
                                 cfg.stream_widths[static_cast<size_t>(j - 1)], j, stem[level]));
  }
  const int fused = fuse_streams(a, cfg, stream_out);
  const int tail = a.add("tail.down", GraphAssembler::down(cfg.stream_widths.back(), cfg.final_width), NodeRole::kTail,
                         0, s, {fused});
  g.output = a.add("head", {BlockKind::kFinalHead, cfg.final_width, cfg.num_classes, 1, 1}, NodeRole::kTail, 0, s,
                   {tail});
  return g;
}

ModelGraph build_cifar(const ModelConfig& cfg) {
  if (cfg.dataset != DatasetShape::kCifar) throw ConfigError("build_cifar needs a cifar-shaped config");
  validate_common(cfg);
  if (cfg.num_streams != 3) throw ConfigError("cifar networks have exactly 3 streams");
  if (cfg.height != 32 || cfg.width != 32) throw ConfigError("cifar networks take 32x32 input");

  ModelGraph g;
  g.config = cfg;
  GraphAssembler a(g);
  const auto& w = cfg.stream_widths;

  // Depths 1-3 stay at full resolution; the depth-3 block feeds stream 1.
  int prev = a.add("stem.rep1", GraphAssembler::rep(3, w[0]), NodeRole::kStem, 0, 1, {});
  prev = a.add("stem.rep2", GraphAssembler::rep(w[0], w[0]), NodeRole::kStem, 0, 1, {prev});
  const int stem3 = a.add("stem.rep3", GraphAssembler::rep(w[0], w[0]), NodeRole::kStem, 0, 1, {prev});
  const int stem_down2 = a.add("stem.down2", GraphAssembler::down(w[0], w[1]), NodeRole::kStem, 0, 2, {stem3});
  const int stem_down3 = a.add("stem.down3", GraphAssembler::down(w[1], w[2]), NodeRole::kStem, 0, 3, {stem_down2});

  std::vector<int> stream_out = {a.chain("stream1", 3, w[0], 1, stem3), a.chain("stream2", 4, w[1], 2, stem_down2),
                                 a.chain("stream3", 4, w[2], 3, stem_down3)};
  const int fused = fuse_streams(a, cfg, stream_out);
  const int tail = a.add("tail.conv1x1", {BlockKind::kConv1x1Head, w[2], cfg.final_width, 1, 1}, NodeRole::kTail, 0,
                         3, {fused});
  g.output = a.add("head", {BlockKind::kFinalHead, cfg.final_width, cfg.num_classes, 1, 1}, NodeRole::kTail, 0, 3,
                   {tail});
  return g;
}

ModelGraph build_model(const ModelConfig& cfg) {
  return cfg.dataset == DatasetShape::kImageNet ? build_imagenet(cfg) : build_cifar(cfg);
}

ModelConfig scale_config(const ModelConfig& base, int streams, double width_mult, std::int64_t height,
                         std::int64_t width) {
  if (streams < 1) throw ConfigError("streams must be >= 1");
  if (streams > kStemLevels) throw ConfigError("streams > available stem levels (4)");
  if (!(width_mult > 0)) throw ConfigError("width multiplier must be positive");
  if (base.dataset != DatasetShape::kImageNet || base.num_streams != 3) {
    throw ConfigError("scale_config expects a 3-stream imagenet base config");
  }
  // Per-level widths of the base: level 1 hosts a stream only when scaled to 4.
  const std::vector<double> level = {static_cast<double>(base.stream_widths[0]) / 2.0,
                                     static_cast<double>(base.stream_widths[0]),
                                     static_cast<double>(base.stream_widths[1]),
                                     static_cast<double>(base.stream_widths[2])};
  ModelConfig c = base;
  c.variant = Variant::kCustom;
  c.num_streams = streams;
  c.stream_widths.clear();
  for (int l = kStemLevels - streams; l < kStemLevels; ++l) c.stream_widths.push_back(round_to_8(level[l] * width_mult));
  c.final_width = round_to_8(static_cast<double>(base.final_width) * width_mult);
  c.height = height;
  c.width = width;
  return c;
}

ModelConfig match_param_budget(const ModelConfig& base, int streams, std::int64_t budget, std::int64_t height,
                               std::int64_t width) {
  if (budget <= 0) throw ConfigError("parameter budget must be positive");
  ModelConfig best;
  double best_err = std::numeric_limits<double>::infinity();
  // Params grow ~quadratically in the multiplier; a fine linear sweep over a
  // bracket is cheap since counting needs no weights.
  for (int i = 1; i <= 4000; ++i) {
    const double mult = 0.001 * i;
    const ModelConfig c = scale_config(base, streams, mult, height, width);
    const double err = std::abs(static_cast<double>(count_params(build_imagenet(c)) - budget));
    if (err < best_err) {
      best_err = err;
      best = c;
    }
  }
  return best;
}

ModelConfig cifar_config(int size_index, std::int64_t num_classes) {
  ModelConfig c;
  c.variant = Variant::kCustom;
  c.dataset = DatasetShape::kCifar;
  c.num_streams = 3;
  c.height = 32;
  c.width = 32;
  c.num_classes = num_classes;
  switch (size_index) {
    case 0: c.stream_widths = {32, 64, 120}; c.final_width = 256; break;
    case 1: c.stream_widths = {104, 208, 416}; c.final_width = 2048; break;
    case 2: c.stream_widths = {160, 320, 640}; c.final_width = 1280; break;
    default: throw ConfigError("cifar size index must be 0, 1 or 2");
  }
  return c;
}

ModelConfig toy_config() {
  ModelConfig c;
  c.variant = Variant::kCustom;
  c.dataset = DatasetShape::kCifar;
  c.num_streams = 3;
  c.stream_widths = {8, 16, 32};
  c.final_width = 64;
  c.height = 32;
  c.width = 32;
  c.num_classes = 2;
  return c;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.data()) v = static_cast<float>(d(rng));
}

void he_init(ConvParams& p, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(p.weight.dim(1) * p.weight.dim(2) * p.weight.dim(3));
  fill_normal(p.weight, std::sqrt(2.0 / fan_in), rng);
}

void randomize_bn(BatchNormParams& bn, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> gain(0.5, 1.5), shift(-0.2, 0.2);
  for (size_t c = 0; c < bn.gamma.size(); ++c) {
    bn.gamma[c] = static_cast<float>(gain(rng));
    bn.beta[c] = static_cast<float>(shift(rng));
    bn.running_mean[c] = static_cast<float>(shift(rng));
    bn.running_var[c] = static_cast<float>(gain(rng));
  }
}

void randomize_fc(ConvParams& p, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(p.weight.dim(1));
  fill_normal(p.weight, 1.0 / std::sqrt(fan_in), rng);
  std::uniform_real_distribution<double> b(-0.5, 0.5);
  for (auto& v : p.bias->data()) v = static_cast<float>(b(rng));
}

}  // namespace

void init_block_weights(const BlockSpec& spec, BlockWeights& w, std::uint64_t seed, InitStyle style) {
  w = make_block_weights(spec);
  std::mt19937_64 rng(seed);
  const bool randomized = style == InitStyle::kRandomized;
  if (w.conv3) he_init(w.conv3->conv, rng);
  if (w.conv1) he_init(w.conv1->conv, rng);
  if (w.fused) {
    he_init(*w.fused, rng);
    if (randomized) fill_normal(*w.fused->bias, 0.1, rng);
  }
  if (randomized) {
    if (w.conv3) randomize_bn(w.conv3->bn, rng);
    if (w.conv1) randomize_bn(w.conv1->bn, rng);
    if (w.skip_bn) randomize_bn(*w.skip_bn, rng);
    if (w.skip_affine) {
      std::uniform_real_distribution<double> gain(0.5, 1.5), shift(-0.2, 0.2);
      for (auto& v : w.skip_affine->scale) v = static_cast<float>(gain(rng));
      for (auto& v : w.skip_affine->shift) v = static_cast<float>(shift(rng));
    }
    if (w.se_fc) randomize_fc(*w.se_fc, rng);
    if (w.fc_weight) {
      fill_normal(*w.fc_weight, 1.0 / std::sqrt(static_cast<double>(w.fc_weight->dim(1))), rng);
      fill_normal(*w.fc_bias, 0.1, rng);
    }
  }
}

ModelGraph init_weights(ModelGraph g, std::uint64_t seed, InitStyle style) {
  for (auto& n : g.nodes) {
    BlockWeights w;
    init_block_weights(n.spec, w, mix_seed(seed, static_cast<std::uint64_t>(n.id)), style);
    n.weights = std::move(w);
  }
  return g;
}

}  // namespace parnet
