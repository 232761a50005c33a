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

// Training: graph forward on an autodiff tape, label-smoothed cross-entropy,
// SGD with warmup and step/cosine decay, a finite-difference checker and the
// synthetic toy task used to show the mini network learns.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "parnet/autograd.hpp"
#include "parnet/graph.hpp"

namespace parnet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kLabelSmoothing = 0.1;
inline constexpr double kBnMomentum = 0.1;

enum class BnMode {
  kBatch,    // batch statistics, as during training
  kRunning,  // stored running statistics
};

template <typename T>
struct BasicGradients {
  double loss = 0.0;
  BasicTensor<T> logits;
  BasicTensor<T> input;  // d loss / d x
  std::map<std::string, BasicTensor<T>> params;  // "<node>.<tensor>" -> gradient
  /// Batch statistics per BN ("<node>.bn3"), filled in kBatch mode.
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> batch_stats;
};
using Gradients = BasicGradients<float>;

/// Loss, logits and gradients of every trainable tensor of a trainable-form graph.
/// T = double evaluates a float graph in 64-bit.
template <typename T>
BasicGradients<T> backward(const ModelGraph& g, const BasicTensor<T>& x, const std::vector<int>& labels,
                           double eps = kLabelSmoothing, BnMode mode = BnMode::kBatch, double loss_scale = 1.0);

/// Blends batch statistics into the graph's running statistics.
void update_running_stats(ModelGraph& g, const Gradients& grads, double momentum = kBnMomentum);

/// Plain cross-entropy value with smoothed targets.
double label_smooth_ce(const Tensor& logits, const std::vector<int>& labels, double eps = kLabelSmoothing);

enum class LrSchedule { kStep, kCosine };
enum class StepRecipe {
  kImageNet,  // x0.1 every 30 epochs
  kCifar,     // /5 at 30%, 60% and 80% of total_epochs
};

struct SgdState {
  double lr_base = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::kStep;
  StepRecipe recipe = StepRecipe::kImageNet;
  double warmup_epochs = 0.0;
  double total_epochs = 0.0;  // CIFAR milestones and cosine horizon
  std::map<std::string, std::vector<float>> velocity;

  void validate() const;
};

double lr_schedule(const SgdState& s, double epoch);

/// v <- momentum * v + grad + wd * param; param <- param - lr * v.
void sgd_update(SgdState& s, const std::string& name, std::span<float> param, std::span<const float> grad,
                double lr);

/// One step over every trainable tensor of g that has a gradient. Returns the lr used.
double sgd_step(SgdState& s, ModelGraph& g, const Gradients& grads, double epoch);

/// Scalar function built on a 64-bit tape from leaves holding `point`.
using TapeFunction = std::function<ad::Var(ad::Tape<double>&, const std::vector<ad::Var>&)>;

struct FiniteDiffResult {
  double max_rel_error = 0.0;
  int coordinates = 0;
};

/// Central differences vs. the tape gradient on up to `coords_per_tensor`
/// sampled coordinates of each leaf. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-2).
FiniteDiffResult finite_diff_check(const TapeFunction& f, const std::vector<TensorD>& point, double delta = 1e-3,
                                   int coords_per_tensor = 24, std::uint64_t seed = 0);

struct GradcheckCase {
  std::string name;
  FiniteDiffResult result;
  bool pass = false;
};

/// Every differentiable op and every block kind, with the given threshold.
std::vector<GradcheckCase> run_gradcheck_suite(double delta = 1e-3, double threshold = 1e-3, std::uint64_t seed = 1);

// Toy task: 32x32 RGB images of oriented bars (label 0) or soft blobs (label 1).
struct ToyDataset {
  Tensor images;  // [n, 3, 32, 32]
  std::vector<int> labels;
};
ToyDataset make_toy_dataset(std::int64_t count, std::uint64_t seed);

struct ToyOptions {
  int steps = 200;
  std::int64_t batch = 32;
  std::int64_t dataset_size = 512;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double warmup_epochs = 1.0;
  int eval_every = 25;
  std::uint64_t seed = 0;
};

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double accuracy = -1.0;  // eval-mode accuracy on the full training set; -1 if not evaluated
  double lr = 0.0;
};

struct ToyResult {
  std::vector<TrainLogRow> log;
  double final_accuracy = 0.0;
  ModelGraph model;
};

/// Trains cfg (default: toy_config()) on the seeded synthetic set. Throws
/// TrainingError if the loss becomes non-finite.
ToyResult train_toy(const ModelConfig& cfg, const ToyOptions& opts);

/// Eval-mode accuracy of g on (images, labels).
double evaluate_accuracy(const ModelGraph& g, const Tensor& images, const std::vector<int>& labels,
                         std::int64_t batch = 128);

std::string train_csv_header();
std::string train_csv_row(const TrainLogRow& r);

}  // namespace parnet
