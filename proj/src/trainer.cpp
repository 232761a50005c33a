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

#include "parnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "parnet/builder.hpp"
#include "parnet/executor.hpp"

namespace parnet {

namespace {

using ad::Tape;
using ad::Var;

template <typename T>
BasicTensor<T> ref_tensor(const WeightRef& r) {
  BasicTensor<T> t(r.shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(r.data[i]);
  return t;
}

template <typename T>
std::vector<T> to_vector(const std::vector<float>& v) {
  return std::vector<T>(v.begin(), v.end());
}

// Evaluates one block on the tape. `p` maps tensor names ("conv3.weight", ...)
// to tape variables; `layout` supplies strides, groups and running statistics.
template <typename T>
class BlockTape {
 public:
  BlockTape(Tape<T>& tape, const BlockSpec& spec, const BlockWeights& layout, const std::map<std::string, Var>& p,
            BnMode mode)
      : tape_(tape), spec_(spec), w_(layout), p_(p), mode_(mode) {}

  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> stats;

  Var run(Var x, Var x2) {
    switch (spec_.kind) {
      case BlockKind::kRepVggSse: {
        if (spec_.form != BlockForm::kTrainable) throw TrainingError("graph not in trainable form");
        Var sum = tape_.add(conv_bn(x, "conv3", "bn3", w_.conv3->conv, w_.conv3->bn),
                            conv_bn(x, "conv1", "bn1", w_.conv1->conv, w_.conv1->bn));
        if (spec_.has_skip()) {
          const Var skip = bn(x, "skip_bn", *w_.skip_bn);
          sum = tape_.add(sum, tape_.mul(skip, gate(x)));
        }
        return tape_.activation(Activation::kSilu, sum);
      }
      case BlockKind::kDownsampling:
      case BlockKind::kFusionBlock: {
        const Var in = spec_.kind == BlockKind::kFusionBlock ? tape_.concat_channels(x, x2) : x;
        const Var a = conv_bn(in, "conv3", "bn3", w_.conv3->conv, w_.conv3->bn);
        const Var pooled = spec_.stride == 2 ? tape_.avg_pool2d(in) : in;
        const Var b = conv_bn(pooled, "conv1", "bn1", w_.conv1->conv, w_.conv1->bn);
        return tape_.mul(tape_.activation(Activation::kSilu, tape_.add(a, b)), gate(in));
      }
      case BlockKind::kConv1x1Head:
        return tape_.activation(Activation::kSilu, conv_bn(x, "conv1", "bn1", w_.conv1->conv, w_.conv1->bn));
      case BlockKind::kFinalHead:
        return tape_.linear(tape_.global_avg_pool(x), at("fc.weight"), at("fc.bias"));
    }
    throw TrainingError("unknown block kind");
  }

 private:
  Var at(const std::string& name) const {
    auto it = p_.find(name);
    if (it == p_.end()) throw TrainingError(std::string(to_string(spec_.kind)) + " block lacks tensor " + name);
    return it->second;
  }
  Var at_or(const std::string& name) const {
    auto it = p_.find(name);
    return it == p_.end() ? -1 : it->second;
  }

  Var bn(Var x, const std::string& prefix, const BatchNormParams& layout) {
    const Var gamma = at(prefix + ".gamma"), beta = at(prefix + ".beta");
    const T eps = static_cast<T>(layout.epsilon);
    if (mode_ == BnMode::kRunning) {
      return tape_.batchnorm_eval(x, gamma, beta, to_vector<T>(layout.running_mean), to_vector<T>(layout.running_var),
                                  eps);
    }
    auto& s = stats[prefix];
    return tape_.batchnorm_train(x, gamma, beta, eps, &s.first, &s.second);
  }

  Var conv_bn(Var x, const std::string& conv, const std::string& bn_name, const ConvParams& c,
              const BatchNormParams& b) {
    const Var y = tape_.conv2d(x, at(conv + ".weight"), c.stride, c.padding, c.groups, at_or(conv + ".bias"));
    return bn(y, bn_name, b);
  }

  Var gate(Var x) {
    const ConvParams& fc = *w_.se_fc;
    const Var z = tape_.conv2d(tape_.global_avg_pool(x), at("se_fc.weight"), 1, 0, fc.groups, at("se_fc.bias"));
    return tape_.activation(Activation::kSigmoid, z);
  }

  Tape<T>& tape_;
  const BlockSpec& spec_;
  const BlockWeights& w_;
  const std::map<std::string, Var>& p_;
  BnMode mode_;
};

std::vector<WeightRef> refs_of(const Node& n) {
  if (!n.weights) throw TrainingError("node " + n.name + " has no weights");
  // weight_refs only hands out pointers; nothing below writes through them.
  return weight_refs(const_cast<BlockWeights&>(*n.weights));
}

}  // namespace

template <typename T>
BasicGradients<T> backward(const ModelGraph& g, const BasicTensor<T>& x, const std::vector<int>& labels, double eps,
                           BnMode mode, double loss_scale) {
  if (g.form() != GraphForm::kTrainable) throw TrainingError("graph not in trainable form");
  Tape<T> tape;
  const Var input = tape.leaf(x, true);
  std::map<std::string, Var> all_params;
  std::vector<Var> out(g.nodes.size(), -1);
  BasicGradients<T> result;

  for (int id : g.topological_order()) {
    const Node& n = g.node(id);
    std::map<std::string, Var> p;
    for (const auto& r : refs_of(n)) {
      if (!r.trainable) continue;
      p[r.name] = tape.leaf(ref_tensor<T>(r), true);
      all_params[n.name + "." + r.name] = p[r.name];
    }
    BlockTape<T> bt(tape, n.spec, *n.weights, p, mode);
    const Var a = n.inputs.empty() ? input : out[static_cast<size_t>(n.inputs[0])];
    const Var b = n.inputs.size() > 1 ? out[static_cast<size_t>(n.inputs[1])] : -1;
    out[static_cast<size_t>(id)] = bt.run(a, b);
    for (auto& [k, v] : bt.stats) result.batch_stats[n.name + "." + k] = std::move(v);
  }

  const Var logits = out[static_cast<size_t>(g.output)];
  Var loss = tape.label_smooth_ce(logits, labels, static_cast<T>(eps));
  if (loss_scale != 1.0) loss = tape.scale(loss, static_cast<T>(loss_scale));
  tape.backward(loss);

  result.loss = static_cast<double>(tape.value(loss)[0]);
  result.logits = tape.value(logits);
  result.input = tape.grad(input);
  for (const auto& [name, v] : all_params) result.params[name] = tape.grad(v);
  return result;
}

template BasicGradients<float> backward(const ModelGraph&, const Tensor&, const std::vector<int>&, double, BnMode,
                                        double);
template BasicGradients<double> backward(const ModelGraph&, const TensorD&, const std::vector<int>&, double, BnMode,
                                         double);

void update_running_stats(ModelGraph& g, const Gradients& grads, double momentum) {
  for (auto& n : g.nodes) {
    if (!n.weights) continue;
    auto blend = [&](const std::string& key, BatchNormParams& bn) {
      auto it = grads.batch_stats.find(n.name + "." + key);
      if (it == grads.batch_stats.end()) return;
      for (size_t c = 0; c < bn.gamma.size(); ++c) {
        bn.running_mean[c] = static_cast<float>((1 - momentum) * bn.running_mean[c] + momentum * it->second.first[c]);
        bn.running_var[c] = static_cast<float>((1 - momentum) * bn.running_var[c] + momentum * it->second.second[c]);
      }
    };
    auto& w = *n.weights;
    if (w.conv3) blend("bn3", w.conv3->bn);
    if (w.conv1) blend("bn1", w.conv1->bn);
    if (w.skip_bn) blend("skip_bn", *w.skip_bn);
  }
}

double label_smooth_ce(const Tensor& logits, const std::vector<int>& labels, double eps) {
  Tape<double> tape;
  const Var z = tape.leaf(logits.cast<double>(), false);
  return tape.value(tape.label_smooth_ce(z, labels, eps))[0];
}

void SgdState::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw TrainingError("momentum must lie in [0, 1)");
  if (!(lr_base >= 0.0)) throw TrainingError("learning rate must be >= 0");
  if (weight_decay < 0.0) throw TrainingError("weight decay must be >= 0");
  if (warmup_epochs < 0.0) throw TrainingError("warmup must be >= 0");
}

double lr_schedule(const SgdState& s, double epoch) {
  if (epoch < 0.0) throw TrainingError("epoch must be >= 0");
  if (epoch < s.warmup_epochs) return s.lr_base * std::min(1.0, (epoch + 1.0) / s.warmup_epochs);
  if (s.schedule == LrSchedule::kCosine) {
    const double span = s.total_epochs - s.warmup_epochs;
    const double t = span > 0 ? std::min(1.0, (epoch - s.warmup_epochs) / span) : 1.0;
    return 0.5 * s.lr_base * (1.0 + std::cos(std::numbers::pi * t));
  }
  if (s.recipe == StepRecipe::kImageNet) return s.lr_base * std::pow(0.1, std::floor(epoch / 30.0));
  int passed = 0;
  for (double m : {0.3, 0.6, 0.8}) passed += epoch >= m * s.total_epochs ? 1 : 0;
  return s.lr_base / std::pow(5.0, passed);
}

void sgd_update(SgdState& s, const std::string& name, std::span<float> param, std::span<const float> grad,
                double lr) {
  if (param.size() != grad.size()) {
    throw ShapeError("sgd: " + name + " has " + std::to_string(param.size()) + " values but " +
                     std::to_string(grad.size()) + " gradients");
  }
  auto& v = s.velocity[name];
  if (v.empty()) v.assign(param.size(), 0.f);
  if (v.size() != param.size()) throw ShapeError("sgd: velocity of " + name + " changed size");
  const float m = static_cast<float>(s.momentum), wd = static_cast<float>(s.weight_decay), step = static_cast<float>(lr);
  for (size_t i = 0; i < param.size(); ++i) {
    v[i] = m * v[i] + grad[i] + wd * param[i];
    param[i] -= step * v[i];
  }
}

double sgd_step(SgdState& s, ModelGraph& g, const Gradients& grads, double epoch) {
  s.validate();
  const double lr = lr_schedule(s, epoch);
  for (auto& n : g.nodes) {
    if (!n.weights) continue;
    for (auto& r : weight_refs(*n.weights)) {
      if (!r.trainable) continue;
      const std::string key = n.name + "." + r.name;
      auto it = grads.params.find(key);
      if (it == grads.params.end()) continue;
      if (it->second.shape() != r.shape) throw ShapeError("sgd: gradient shape mismatch for " + key);
      sgd_update(s, key, std::span<float>(r.data, static_cast<size_t>(r.shape.numel())), it->second.data(), lr);
    }
  }
  return lr;
}

FiniteDiffResult finite_diff_check(const TapeFunction& f, const std::vector<TensorD>& point, double delta,
                                   int coords_per_tensor, std::uint64_t seed) {
  if (!(delta > 0)) throw std::invalid_argument("finite_diff_check needs delta > 0");
  auto evaluate = [&f](const std::vector<TensorD>& at, std::vector<TensorD>* grads) {
    Tape<double> tape;
    std::vector<Var> leaves;
    for (const auto& t : at) leaves.push_back(tape.leaf(t, true));
    const Var root = f(tape, leaves);
    if (grads) {
      tape.backward(root);
      for (Var v : leaves) grads->push_back(tape.grad(v));
    }
    return tape.value(root)[0];
  };
  std::vector<TensorD> analytic;
  evaluate(point, &analytic);

  FiniteDiffResult res;
  std::mt19937_64 rng(seed);
  std::vector<TensorD> probe = point;
  for (size_t t = 0; t < point.size(); ++t) {
    const auto numel = point[t].numel();
    std::vector<std::int64_t> coords(static_cast<size_t>(numel));
    for (std::int64_t i = 0; i < numel; ++i) coords[static_cast<size_t>(i)] = i;
    if (numel > coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(coords_per_tensor));
    }
    for (auto i : coords) {
      const double orig = point[t][i];
      probe[t][i] = orig + delta;
      const double up = evaluate(probe, nullptr);
      probe[t][i] = orig - delta;
      const double down = evaluate(probe, nullptr);
      probe[t][i] = orig;
      const double numeric = (up - down) / (2 * delta);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-2});
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.coordinates;
    }
  }
  return res;
}

namespace {

TensorD random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  TensorD t(s);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// sum(op(...) * R) for a fixed random R: a scalar whose gradient reaches every output entry.
ad::Var project(ad::Tape<double>& tape, ad::Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Var r = tape.leaf(random_tensor(tape.value(y).shape(), rng), false);
  return tape.sum(tape.mul(y, r));
}

// Block + random linear probe + cross-entropy, with every block tensor a leaf.
GradcheckCase block_case(const std::string& name, const BlockSpec& spec, std::vector<Shape> inputs,
                         std::uint64_t seed, double delta, double threshold) {
  BlockWeights w;
  init_block_weights(spec, w, seed, InitStyle::kRandomized);
  std::vector<WeightRef> refs;
  for (auto& r : weight_refs(w)) {
    if (r.trainable) refs.push_back(r);
  }
  std::mt19937_64 rng(seed + 17);
  std::vector<TensorD> point;
  for (const auto& s : inputs) point.push_back(random_tensor(s, rng));
  for (const auto& r : refs) point.push_back(ref_tensor<double>(r));
  const std::int64_t n = inputs[0][0];
  const std::vector<int> labels = [&] {
    std::vector<int> l;
    for (std::int64_t i = 0; i < n; ++i) l.push_back(static_cast<int>(i % 3));
    return l;
  }();
  const bool head = spec.kind == BlockKind::kFinalHead;
  TensorD probe_w = random_tensor(Shape{3, spec.c_out}, rng), probe_b = random_tensor(Shape{3}, rng);

  TapeFunction f = [&, n_inputs = inputs.size()](ad::Tape<double>& tape, const std::vector<Var>& leaves) {
    std::map<std::string, Var> p;
    for (size_t i = 0; i < refs.size(); ++i) p[refs[i].name] = leaves[n_inputs + i];
    BlockTape<double> bt(tape, spec, w, p, BnMode::kBatch);
    Var y = bt.run(leaves[0], n_inputs > 1 ? leaves[1] : -1);
    if (!head) {
      y = tape.linear(tape.global_avg_pool(y), tape.leaf(probe_w, false), tape.leaf(probe_b, false));
    }
    return tape.label_smooth_ce(y, labels, kLabelSmoothing);
  };
  GradcheckCase c{name, finite_diff_check(f, point, delta, 12, seed), false};
  c.pass = c.result.max_rel_error < threshold;
  return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(double delta, double threshold, std::uint64_t seed) {
  std::vector<GradcheckCase> out;
  std::mt19937_64 rng(seed);
  auto op_case = [&](const std::string& name, std::vector<TensorD> point,
                     std::function<Var(ad::Tape<double>&, const std::vector<Var>&)> op) {
    const std::uint64_t proj_seed = rng();
    TapeFunction f = [op, proj_seed](ad::Tape<double>& tape, const std::vector<Var>& v) {
      return project(tape, op(tape, v), proj_seed);
    };
    GradcheckCase c{name, finite_diff_check(f, point, delta, 24, rng()), false};
    c.pass = c.result.max_rel_error < threshold;
    out.push_back(std::move(c));
  };
  auto t = [&](Shape s) { return random_tensor(s, rng); };

  op_case("conv2d 3x3 stride1 pad1 bias", {t({2, 3, 5, 5}), t({4, 3, 3, 3}), t({4})},
          [](auto& tp, const auto& v) { return tp.conv2d(v[0], v[1], 1, 1, 1, v[2]); });
  op_case("conv2d 3x3 stride2 pad1 groups2", {t({2, 4, 6, 6}), t({4, 2, 3, 3})},
          [](auto& tp, const auto& v) { return tp.conv2d(v[0], v[1], 2, 1, 2); });
  op_case("conv2d 1x1 groups2", {t({2, 4, 3, 3}), t({6, 2, 1, 1})},
          [](auto& tp, const auto& v) { return tp.conv2d(v[0], v[1], 1, 0, 2); });
  op_case("batchnorm_train", {t({3, 2, 3, 3}), t({2}), t({2})},
          [](auto& tp, const auto& v) { return tp.batchnorm_train(v[0], v[1], v[2], 1e-5); });
  op_case("batchnorm_eval", {t({2, 2, 3, 3}), t({2}), t({2})}, [](auto& tp, const auto& v) {
    return tp.batchnorm_eval(v[0], v[1], v[2], {0.3, -0.2}, {0.8, 1.7}, 1e-5);
  });
  op_case("silu", {t({2, 3, 4, 4})}, [](auto& tp, const auto& v) { return tp.activation(Activation::kSilu, v[0]); });
  op_case("sigmoid", {t({2, 3, 4, 4})},
          [](auto& tp, const auto& v) { return tp.activation(Activation::kSigmoid, v[0]); });
  {
    // Keep relu inputs away from the kink so central differences are valid.
    TensorD x = t({2, 3, 4, 4});
    for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
    op_case("relu", {x}, [](auto& tp, const auto& v) { return tp.activation(Activation::kRelu, v[0]); });
  }
  op_case("avg_pool2d", {t({2, 3, 4, 6})}, [](auto& tp, const auto& v) { return tp.avg_pool2d(v[0]); });
  op_case("global_avg_pool", {t({2, 3, 4, 5})}, [](auto& tp, const auto& v) { return tp.global_avg_pool(v[0]); });
  op_case("linear", {t({3, 5}), t({4, 5}), t({4})},
          [](auto& tp, const auto& v) { return tp.linear(v[0], v[1], v[2]); });
  op_case("concat_channels", {t({2, 2, 3, 3}), t({2, 3, 3, 3})},
          [](auto& tp, const auto& v) { return tp.concat_channels(v[0], v[1]); });
  op_case("add", {t({2, 3, 3, 3}), t({2, 3, 3, 3})}, [](auto& tp, const auto& v) { return tp.add(v[0], v[1]); });
  op_case("add broadcast", {t({2, 3, 3, 3}), t({2, 3, 1, 1})},
          [](auto& tp, const auto& v) { return tp.add(v[0], v[1]); });
  op_case("mul", {t({2, 3, 3, 3}), t({2, 3, 3, 3})}, [](auto& tp, const auto& v) { return tp.mul(v[0], v[1]); });
  op_case("mul broadcast", {t({2, 3, 3, 3}), t({2, 3, 1, 1})},
          [](auto& tp, const auto& v) { return tp.mul(v[0], v[1]); });
  {
    GradcheckCase c{"label_smooth_ce",
                    finite_diff_check(
                        [](ad::Tape<double>& tp, const std::vector<Var>& v) {
                          return tp.label_smooth_ce(v[0], {0, 2, 1, 4}, kLabelSmoothing);
                        },
                        {t({4, 5})}, delta, 24, rng()),
                    false};
    c.pass = c.result.max_rel_error < threshold;
    out.push_back(std::move(c));
  }

  const std::uint64_t s = rng();
  out.push_back(block_case("RepVggSse block", {BlockKind::kRepVggSse, 4, 4, 1, 1}, {Shape{2, 4, 4, 4}}, s, delta,
                           threshold));
  out.push_back(block_case("RepVggSse entry block (c_in != c_out)", {BlockKind::kRepVggSse, 3, 4, 1, 1},
                           {Shape{2, 3, 4, 4}}, s + 1, delta, threshold));
  out.push_back(block_case("Downsampling block", {BlockKind::kDownsampling, 4, 6, 2, 1}, {Shape{2, 4, 4, 4}}, s + 2,
                           delta, threshold));
  out.push_back(block_case("FusionBlock stride 2", {BlockKind::kFusionBlock, 8, 6, 2, 2},
                           {Shape{2, 4, 4, 4}, Shape{2, 4, 4, 4}}, s + 3, delta, threshold));
  out.push_back(block_case("FusionBlock stride 1", {BlockKind::kFusionBlock, 8, 4, 1, 2},
                           {Shape{2, 4, 4, 4}, Shape{2, 4, 4, 4}}, s + 4, delta, threshold));
  out.push_back(block_case("Conv1x1Head block", {BlockKind::kConv1x1Head, 4, 6, 1, 1}, {Shape{2, 4, 3, 3}}, s + 5,
                           delta, threshold));
  out.push_back(block_case("FinalHead block", {BlockKind::kFinalHead, 4, 3, 1, 1}, {Shape{3, 4, 3, 3}}, s + 6,
                           delta, threshold));
  return out;
}

ToyDataset make_toy_dataset(std::int64_t count, std::uint64_t seed) {
  if (count < 2) throw TrainingError("toy dataset needs at least 2 images");
  constexpr std::int64_t kSize = 32;
  ToyDataset d{Tensor(Shape{count, 3, kSize, kSize}), {}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.1);
  for (std::int64_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % 2);
    d.labels.push_back(label);
    double color[3];
    for (double& c : color) c = 0.4 + 0.6 * u(rng);
    std::vector<double> img(kSize * kSize, 0.0);
    if (label == 0) {
      // Oriented bars: a square-wave grating at one of four orientations.
      const double theta = std::numbers::pi / 4.0 * std::floor(4.0 * u(rng));
      const double period = 6.0 + 4.0 * u(rng), phase = period * u(rng);
      for (std::int64_t y = 0; y < kSize; ++y) {
        for (std::int64_t x = 0; x < kSize; ++x) {
          const double t = x * std::cos(theta) + y * std::sin(theta) + phase;
          img[static_cast<size_t>(y * kSize + x)] = std::fmod(t + 1000.0 * period, period) < period / 2 ? 1.0 : 0.0;
        }
      }
    } else {
      const int blobs = 1 + static_cast<int>(3.0 * u(rng));
      for (int b = 0; b < blobs; ++b) {
        const double cx = 4 + 24 * u(rng), cy = 4 + 24 * u(rng), sigma = 2.5 + 3.0 * u(rng);
        for (std::int64_t y = 0; y < kSize; ++y) {
          for (std::int64_t x = 0; x < kSize; ++x) {
            const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            auto& px = img[static_cast<size_t>(y * kSize + x)];
            px = std::min(1.0, px + std::exp(-r2 / (2 * sigma * sigma)));
          }
        }
      }
    }
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t p = 0; p < kSize * kSize; ++p) {
        d.images[(i * 3 + c) * kSize * kSize + p] =
            static_cast<float>(color[c] * img[static_cast<size_t>(p)] - 0.5 + noise(rng));
      }
    }
  }
  return d;
}

double evaluate_accuracy(const ModelGraph& g, const Tensor& images, const std::vector<int>& labels,
                         std::int64_t batch) {
  const std::int64_t n = images.dim(0);
  const std::int64_t per = images.numel() / n;
  std::int64_t correct = 0;
  for (std::int64_t start = 0; start < n; start += batch) {
    const std::int64_t m = std::min(batch, n - start);
    Tensor x(Shape{m, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.ptr() + start * per, m * per, x.ptr());
    const Tensor logits = run_sequential(g, x);
    const std::int64_t k = logits.dim(1);
    for (std::int64_t r = 0; r < m; ++r) {
      const float* row = logits.ptr() + r * k;
      const auto pred = std::max_element(row, row + k) - row;
      correct += pred == labels[static_cast<size_t>(start + r)] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

ToyResult train_toy(const ModelConfig& cfg, const ToyOptions& opts) {
  if (opts.steps < 0 || opts.batch < 2 || opts.dataset_size < opts.batch) {
    throw TrainingError("toy training needs steps >= 0 and 2 <= batch <= dataset size");
  }
  ToyResult res;
  res.model = init_weights(build_model(cfg), opts.seed, InitStyle::kTraining);
  if (res.model.config.num_classes != 2) throw TrainingError("the toy task has 2 classes");
  const ToyDataset data = make_toy_dataset(opts.dataset_size, opts.seed ^ 0x5eedda7aULL);
  const std::int64_t per = data.images.numel() / opts.dataset_size;

  SgdState sgd;
  sgd.lr_base = opts.lr;
  sgd.momentum = opts.momentum;
  sgd.weight_decay = opts.weight_decay;
  sgd.recipe = StepRecipe::kCifar;
  sgd.warmup_epochs = opts.warmup_epochs;
  sgd.total_epochs = static_cast<double>(opts.steps) * opts.batch / static_cast<double>(opts.dataset_size);
  sgd.validate();

  std::mt19937_64 rng(opts.seed);
  std::vector<std::int64_t> order(static_cast<size_t>(opts.dataset_size));
  size_t cursor = order.size();
  for (int step = 1; step <= opts.steps; ++step) {
    Tensor x(Shape{opts.batch, 3, 32, 32});
    std::vector<int> y;
    for (std::int64_t b = 0; b < opts.batch; ++b) {
      if (cursor == order.size()) {
        for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const auto idx = order[cursor++];
      std::copy_n(data.images.ptr() + idx * per, per, x.ptr() + b * per);
      y.push_back(data.labels[static_cast<size_t>(idx)]);
    }
    const double epoch = static_cast<double>(step - 1) * opts.batch / static_cast<double>(opts.dataset_size);
    const Gradients grads = backward(res.model, x, y, kLabelSmoothing, BnMode::kBatch);
    if (!std::isfinite(grads.loss)) {
      throw TrainingError("loss diverged (non-finite) at step " + std::to_string(step));
    }
    TrainLogRow row{step, grads.loss, -1.0, sgd_step(sgd, res.model, grads, epoch)};
    update_running_stats(res.model, grads, kBnMomentum);
    if ((opts.eval_every > 0 && step % opts.eval_every == 0) || step == opts.steps) {
      row.accuracy = evaluate_accuracy(res.model, data.images, data.labels);
    }
    res.log.push_back(row);
  }
  res.final_accuracy = opts.steps > 0 ? res.log.back().accuracy
                                      : evaluate_accuracy(res.model, data.images, data.labels);
  return res;
}

std::string train_csv_header() { return "step,loss,accuracy,lr"; }

std::string train_csv_row(const TrainLogRow& r) {
  std::ostringstream os;
  os.precision(6);
  os << r.step << ',' << r.loss << ',';
  if (r.accuracy >= 0) os << r.accuracy;
  os << ',' << r.lr;
  return os.str();
}

}  // namespace parnet
