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

#include "parnet/blocks.hpp"

namespace parnet {

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::kRepVggSse: return "RepVggSse";
    case BlockKind::kDownsampling: return "Downsampling";
    case BlockKind::kFusionBlock: return "FusionBlock";
    case BlockKind::kFinalHead: return "FinalHead";
    case BlockKind::kConv1x1Head: return "Conv1x1Head";
  }
  return "?";
}

const char* to_string(BlockForm form) { return form == BlockForm::kTrainable ? "trainable" : "deployed"; }

void BlockSpec::validate() const {
  auto fail = [this](const std::string& why) {
    throw BlockError(std::string(to_string(kind)) + " block: " + why);
  };
  if (c_in <= 0 || c_out <= 0) fail("channel counts must be positive");
  if (form == BlockForm::kDeployed && kind != BlockKind::kRepVggSse) fail("only RepVggSse has a deployed form");
  switch (kind) {
    case BlockKind::kRepVggSse:
      if (stride != 1 || groups != 1) fail("requires stride 1, groups 1");
      break;
    case BlockKind::kDownsampling:
      if (stride != 2) fail("requires stride 2");
      if (groups != 1 && groups != 2) fail("groups must be 1 or 2");
      break;
    case BlockKind::kFusionBlock:
      if (groups != 2) fail("requires groups 2");
      if (stride != 1 && stride != 2) fail("stride must be 1 or 2");
      break;
    case BlockKind::kFinalHead:
    case BlockKind::kConv1x1Head:
      if (stride != 1 || groups != 1) fail("requires stride 1, groups 1");
      break;
  }
  if (c_in % groups != 0 || c_out % groups != 0) fail("channels not divisible by groups");
}

namespace {

ConvParams zero_conv(std::int64_t c_out, std::int64_t c_in, std::int64_t k, int stride, int groups, bool bias) {
  ConvParams p;
  p.weight = Tensor(Shape{c_out, c_in / groups, k, k});
  if (bias) p.bias = Tensor(Shape{c_out});
  p.stride = stride;
  p.padding = k == 3 ? 1 : 0;
  p.groups = groups;
  return p;
}

int gate_groups(const BlockSpec& spec) { return spec.kind == BlockKind::kFusionBlock ? 2 : 1; }

void require(bool cond, const BlockSpec& spec, const char* what) {
  if (!cond) throw BlockError(std::string(to_string(spec.kind)) + " block (" + to_string(spec.form) + "): " + what);
}

void check_conv(const ConvParams& p, std::int64_t c_out, std::int64_t c_in, std::int64_t k, int groups,
                const BlockSpec& spec, const char* what) {
  require(p.weight.rank() == 4 && p.weight.dim(0) == c_out && p.weight.dim(1) == c_in / groups &&
              p.weight.dim(2) == k && p.weight.dim(3) == k && p.groups == groups,
          spec, what);
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, a, b); }

Tensor conv_bn(const Tensor& x, const ConvBn& cb) { return batchnorm_eval(conv2d(x, cb.conv), cb.bn); }

Tensor affine_channels(const Tensor& x, const ChannelAffine& a) {
  Tensor y(x.shape());
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float k = a.scale[ch], m = a.shift[ch];
      const float* src = x.ptr() + (b * c + ch) * hw;
      float* dst = y.ptr() + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = k * src[i] + m;
    }
  }
  return y;
}

void require_input(const Tensor& x, const BlockSpec& spec) {
  if (x.rank() != 4 || x.dim(1) != spec.c_in) {
    throw ShapeError(std::string(to_string(spec.kind)) + " block expects " + std::to_string(spec.c_in) +
                     " input channels, got " + x.shape().str());
  }
}

// Shared body of Downsampling and Fusion blocks.
Tensor pooled_branch_block(const Tensor& x, const BlockWeights& w, const BlockSpec& spec) {
  if (spec.stride == 2 && (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)) {
    throw ShapeError(std::string(to_string(spec.kind)) + " block needs even spatial dims, got " + x.shape().str());
  }
  const Tensor a = conv_bn(x, *w.conv3);
  const Tensor pooled = spec.stride == 2 ? avg_pool2d(x) : x;
  const Tensor b = conv_bn(pooled, *w.conv1);
  return gated_activation(add(a, b), se_gate(x, *w.se_fc));
}

}  // namespace

BlockWeights make_block_weights(const BlockSpec& spec) {
  spec.validate();
  BlockWeights w;
  const auto ci = spec.c_in, co = spec.c_out;
  switch (spec.kind) {
    case BlockKind::kRepVggSse:
      if (spec.form == BlockForm::kTrainable) {
        w.conv3 = ConvBn{zero_conv(co, ci, 3, 1, 1, false), BatchNormParams::identity(co)};
        w.conv1 = ConvBn{zero_conv(co, ci, 1, 1, 1, false), BatchNormParams::identity(co)};
        if (spec.has_skip()) w.skip_bn = BatchNormParams::identity(co);
      } else {
        w.fused = zero_conv(co, ci, 3, 1, 1, true);
        if (spec.has_skip()) {
          w.skip_affine = ChannelAffine{std::vector<float>(co, 1.f), std::vector<float>(co, 0.f)};
        }
      }
      if (spec.has_skip()) w.se_fc = zero_conv(co, ci, 1, 1, 1, true);
      break;
    case BlockKind::kDownsampling:
    case BlockKind::kFusionBlock:
      w.conv3 = ConvBn{zero_conv(co, ci, 3, spec.stride, spec.groups, false), BatchNormParams::identity(co)};
      w.conv1 = ConvBn{zero_conv(co, ci, 1, 1, spec.groups, false), BatchNormParams::identity(co)};
      w.se_fc = zero_conv(co, ci, 1, 1, gate_groups(spec), true);
      break;
    case BlockKind::kConv1x1Head:
      w.conv1 = ConvBn{zero_conv(co, ci, 1, 1, 1, false), BatchNormParams::identity(co)};
      break;
    case BlockKind::kFinalHead:
      w.fc_weight = Tensor(Shape{co, ci});
      w.fc_bias = Tensor(Shape{co});
      break;
  }
  return w;
}

void check_block_weights(const BlockSpec& spec, const BlockWeights& w) {
  spec.validate();
  const auto ci = spec.c_in, co = spec.c_out;
  const bool trainable = spec.form == BlockForm::kTrainable;
  switch (spec.kind) {
    case BlockKind::kRepVggSse:
      require(trainable == w.conv3.has_value() && trainable == w.conv1.has_value(), spec, "branch convs vs form");
      require(trainable != w.fused.has_value(), spec, "fused conv vs form");
      if (trainable) {
        check_conv(w.conv3->conv, co, ci, 3, 1, spec, "conv3 shape");
        check_conv(w.conv1->conv, co, ci, 1, 1, spec, "conv1 shape");
        require(spec.has_skip() == w.skip_bn.has_value(), spec, "skip BN presence");
      } else {
        check_conv(*w.fused, co, ci, 3, 1, spec, "fused conv shape");
        require(w.fused->bias.has_value(), spec, "fused conv needs a bias");
        require(spec.has_skip() == w.skip_affine.has_value(), spec, "skip affine presence");
      }
      require(spec.has_skip() == w.se_fc.has_value(), spec, "gate presence");
      if (w.se_fc) check_conv(*w.se_fc, co, ci, 1, 1, spec, "gate shape");
      break;
    case BlockKind::kDownsampling:
    case BlockKind::kFusionBlock:
      require(w.conv3 && w.conv1 && w.se_fc && !w.fused, spec, "needs conv3, conv1 and gate");
      check_conv(w.conv3->conv, co, ci, 3, spec.groups, spec, "conv3 shape");
      check_conv(w.conv1->conv, co, ci, 1, spec.groups, spec, "conv1 shape");
      check_conv(*w.se_fc, co, ci, 1, gate_groups(spec), spec, "gate shape");
      break;
    case BlockKind::kConv1x1Head:
      require(w.conv1 && !w.conv3 && !w.se_fc, spec, "needs exactly conv1");
      check_conv(w.conv1->conv, co, ci, 1, 1, spec, "conv1 shape");
      break;
    case BlockKind::kFinalHead:
      require(w.fc_weight && w.fc_bias, spec, "needs fc weight and bias");
      require(w.fc_weight->shape() == Shape{co, ci} && w.fc_bias->shape() == Shape{co}, spec, "fc shape");
      break;
  }
}

Tensor se_gate(const Tensor& x, const ConvParams& fc) {
  return activation(Activation::kSigmoid, conv2d(global_avg_pool(x), fc));
}

Tensor gated_activation(const Tensor& conv_sum, const Tensor& gate) {
  return mul(activation(Activation::kSilu, conv_sum), gate);
}

Tensor repvgg_sse_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec) {
  if (spec.kind != BlockKind::kRepVggSse) throw BlockError("repvgg_sse_forward called on " + std::string(to_string(spec.kind)));
  require_input(x, spec);
  Tensor sum;
  if (spec.form == BlockForm::kTrainable) {
    require(w.conv3 && w.conv1, spec, "missing branch weights");
    sum = add(conv_bn(x, *w.conv3), conv_bn(x, *w.conv1));
    if (spec.has_skip()) {
      require(w.skip_bn && w.se_fc, spec, "missing skip weights");
      sum = add(sum, mul(batchnorm_eval(x, *w.skip_bn), se_gate(x, *w.se_fc)));
    }
  } else {
    require(w.fused.has_value(), spec, "missing fused conv");
    sum = conv2d(x, *w.fused);
    if (spec.has_skip()) {
      require(w.skip_affine && w.se_fc, spec, "missing skip weights");
      sum = add(sum, mul(affine_channels(x, *w.skip_affine), se_gate(x, *w.se_fc)));
    }
  }
  return activation(Activation::kSilu, sum);
}

Tensor downsampling_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec) {
  if (spec.kind != BlockKind::kDownsampling) {
    throw BlockError("downsampling_forward called on " + std::string(to_string(spec.kind)));
  }
  require_input(x, spec);
  require(w.conv3 && w.conv1 && w.se_fc, spec, "missing weights");
  return pooled_branch_block(x, w, spec);
}

Tensor fusion_block_forward(const Tensor& x1, const Tensor& x2, const BlockWeights& w, const BlockSpec& spec) {
  if (spec.kind != BlockKind::kFusionBlock) {
    throw BlockError("fusion_block_forward called on " + std::string(to_string(spec.kind)));
  }
  if (x1.rank() != 4 || x2.rank() != 4 || x1.dim(2) != x2.dim(2) || x1.dim(3) != x2.dim(3)) {
    throw ShapeError("FusionBlock inputs differ spatially: " + x1.shape().str() + " vs " + x2.shape().str());
  }
  const Tensor x = concat_channels(x1, x2);
  require_input(x, spec);
  require(w.conv3 && w.conv1 && w.se_fc, spec, "missing weights");
  return pooled_branch_block(x, w, spec);
}

Tensor conv1x1_head_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec) {
  require_input(x, spec);
  require(w.conv1.has_value(), spec, "missing conv1");
  return activation(Activation::kSilu, conv_bn(x, *w.conv1));
}

Tensor final_head_forward(const Tensor& x, const BlockWeights& w) {
  if (!w.fc_weight || !w.fc_bias) throw BlockError("FinalHead block: missing fc weights");
  if (x.rank() != 4 || x.dim(1) != w.fc_weight->dim(1)) {
    throw ShapeError("FinalHead expects " + std::to_string(w.fc_weight->dim(1)) + " channels, got " + x.shape().str());
  }
  return linear(global_avg_pool(x), *w.fc_weight, *w.fc_bias);
}

Tensor block_forward(const BlockSpec& spec, const BlockWeights& w, const Tensor& x, const Tensor* x2) {
  switch (spec.kind) {
    case BlockKind::kRepVggSse: return repvgg_sse_forward(x, w, spec);
    case BlockKind::kDownsampling: return downsampling_forward(x, w, spec);
    case BlockKind::kFusionBlock:
      if (x2 == nullptr) throw BlockError("FusionBlock needs two inputs");
      return fusion_block_forward(x, *x2, w, spec);
    case BlockKind::kConv1x1Head: return conv1x1_head_forward(x, w, spec);
    case BlockKind::kFinalHead: return final_head_forward(x, w);
  }
  throw BlockError("unknown block kind");
}

std::vector<WeightRef> weight_refs(BlockWeights& w) {
  std::vector<WeightRef> refs;
  auto vec = [&refs](const std::string& name, std::vector<float>& v, bool trainable) {
    refs.push_back({name, Shape{static_cast<std::int64_t>(v.size())}, v.data(), trainable});
  };
  auto tensor = [&refs](const std::string& name, Tensor& t, bool trainable) {
    refs.push_back({name, t.shape(), t.ptr(), trainable});
  };
  auto conv = [&](const std::string& prefix, ConvParams& p, bool trainable) {
    tensor(prefix + ".weight", p.weight, trainable);
    if (p.bias) tensor(prefix + ".bias", *p.bias, trainable);
  };
  auto bn = [&](const std::string& prefix, BatchNormParams& b) {
    vec(prefix + ".gamma", b.gamma, true);
    vec(prefix + ".beta", b.beta, true);
    vec(prefix + ".running_mean", b.running_mean, false);
    vec(prefix + ".running_var", b.running_var, false);
  };
  if (w.conv3) {
    conv("conv3", w.conv3->conv, true);
    bn("bn3", w.conv3->bn);
  }
  if (w.conv1) {
    conv("conv1", w.conv1->conv, true);
    bn("bn1", w.conv1->bn);
  }
  if (w.skip_bn) bn("skip_bn", *w.skip_bn);
  if (w.fused) conv("fused", *w.fused, false);
  if (w.skip_affine) {
    vec("skip_affine.scale", w.skip_affine->scale, false);
    vec("skip_affine.shift", w.skip_affine->shift, false);
  }
  if (w.se_fc) conv("se_fc", *w.se_fc, true);
  if (w.fc_weight) tensor("fc.weight", *w.fc_weight, true);
  if (w.fc_bias) tensor("fc.bias", *w.fc_bias, true);
  return refs;
}

}  // namespace parnet
