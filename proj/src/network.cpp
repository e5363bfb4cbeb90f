// Copyright 2026 The qat-relax Authors. All Rights Reserved.
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

#include "qat/network.hpp"

#include <cmath>
#include <random>

namespace qat {

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::kPlainCnn: return "plain_cnn";
    case Architecture::kResnetBasic: return "resnet_basic";
    case Architecture::kPreresnetBasic: return "preresnet_basic";
  }
  return "unknown";
}

const char* to_string(Granularity granularity) {
  return granularity == Granularity::kLayer ? "layer" : "block";
}

Architecture parse_architecture(const std::string& text) {
  if (text == "plain_cnn") return Architecture::kPlainCnn;
  if (text == "resnet_basic") return Architecture::kResnetBasic;
  if (text == "preresnet_basic") return Architecture::kPreresnetBasic;
  throw Error(ErrorCode::kInvalidSpec, "unknown architecture '" + text + "'");
}

Granularity parse_granularity(const std::string& text) {
  if (text == "layer") return Granularity::kLayer;
  if (text == "block") return Granularity::kBlock;
  throw Error(ErrorCode::kInvalidSpec, "unknown granularity '" + text + "'");
}

void ModelSpec::validate() const {
  if (stage_widths.empty()) throw Error(ErrorCode::kInvalidSpec, "at least one stage is required");
  for (int w : stage_widths) {
    if (w <= 0) throw Error(ErrorCode::kInvalidSpec, "stage widths must be positive");
  }
  for (std::size_t i = 1; i < stage_widths.size(); ++i) {
    if (stage_widths[i] < stage_widths[i - 1]) {
      throw Error(ErrorCode::kInvalidSpec, "stage widths must be nondecreasing");
    }
  }
  if (blocks_per_stage < 1) throw Error(ErrorCode::kInvalidSpec, "blocks_per_stage must be >= 1");
  if (num_classes < 2) throw Error(ErrorCode::kInvalidSpec, "num_classes must be >= 2");
  if (in_channels < 1) throw Error(ErrorCode::kInvalidSpec, "in_channels must be >= 1");
  if (image_size < (1 << (stage_widths.size() - 1))) {
    throw Error(ErrorCode::kInvalidSpec, "image_size too small for the number of stages");
  }
}

FragmentPartition partition_fragments(const IndicatorMatrix& indicator) {
  FragmentPartition part;
  for (std::size_t i = 0; i < indicator.size(); ++i) {
    const bool w = indicator[i][0] != 0;
    const bool a = indicator[i][1] != 0;
    const int f = static_cast<int>(i);
    if (w && a) {
      part.quant_weights_and_activations.push_back(f);
    } else if (w) {
      part.quant_weights_only.push_back(f);
    } else if (a) {
      part.quant_activations_only.push_back(f);
    } else {
      part.full_precision.push_back(f);
    }
  }
  return part;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  std::mt19937_64 rng(seed);

  auto add_unit = [&](std::string name, Shape shape, int stride) {
    const int fan_in = static_cast<int>(shape_numel(shape) / static_cast<std::size_t>(shape[0]));
    const bool is_linear = shape.size() == 2;
    const float stddev = std::sqrt((is_linear ? 1.0f : 2.0f) / static_cast<float>(fan_in));
    std::normal_distribution<float> dist(0.0f, stddev);
    std::vector<float> values(shape_numel(shape));
    for (float& v : values) v = dist(rng);
    m.units_.push_back({std::move(name), Tensor::from(shape, std::move(values), true), stride, {}});
    return static_cast<int>(m.units_.size()) - 1;
  };
  auto add_norm = [&](std::string name, int channels) {
    m.norms_.push_back({std::move(name), Tensor::full({channels}, 1.0f, true), Tensor::zeros({channels}, true),
                        BatchNormStats<float>(channels)});
    return static_cast<int>(m.norms_.size()) - 1;
  };

  const bool pre = spec.architecture == Architecture::kPreresnetBasic;
  const bool plain = spec.architecture == Architecture::kPlainCnn;
  const int w0 = spec.stage_widths.front();

  Model::Block stem;
  stem.first_unit = add_unit("stem.conv", {w0, spec.in_channels, 3, 3}, 1);
  stem.unit_count = 1;
  stem.out_channels = w0;
  if (!pre) stem.norms.push_back(add_norm("stem.bn", w0));
  m.blocks_.push_back(stem);

  int channels = w0;
  for (std::size_t s = 0; s < spec.stage_widths.size(); ++s) {
    const int width = spec.stage_widths[s];
    for (int b = 0; b < spec.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string prefix = "s" + std::to_string(s + 1) + ".b" + std::to_string(b);
      Model::Block block;
      block.out_channels = width;
      block.stride = stride;
      if (plain) {
        block.first_unit = add_unit(prefix + ".conv", {width, channels, 3, 3}, stride);
        block.unit_count = 1;
        block.norms.push_back(add_norm(prefix + ".bn", width));
      } else {
        if (pre) block.norms.push_back(add_norm(prefix + ".bn1", channels));
        block.first_unit = add_unit(prefix + ".conv1", {width, channels, 3, 3}, stride);
        if (!pre) block.norms.push_back(add_norm(prefix + ".bn1", width));
        block.norms.push_back(add_norm(prefix + ".bn2", width));
        add_unit(prefix + ".conv2", {width, width, 3, 3}, 1);
        block.unit_count = 2;
      }
      m.blocks_.push_back(block);
      channels = width;
    }
  }

  Model::Block head;
  if (pre) head.norms.push_back(add_norm("head.bn", channels));
  head.first_unit = add_unit("head.fc", {spec.num_classes, channels}, 1);
  head.unit_count = 1;
  head.out_channels = spec.num_classes;
  m.blocks_.push_back(head);

  for (const Model::Block& block : m.blocks_) {
    if (spec.granularity == Granularity::kBlock) {
      std::vector<int> units;
      for (int u = 0; u < block.unit_count; ++u) units.push_back(block.first_unit + u);
      m.fragments_.push_back(std::move(units));
    } else {
      for (int u = 0; u < block.unit_count; ++u) m.fragments_.push_back({block.first_unit + u});
    }
  }
  m.unit_fragment_.assign(m.units_.size(), 0);
  for (std::size_t f = 0; f < m.fragments_.size(); ++f) {
    for (int u : m.fragments_[f]) m.unit_fragment_[u] = static_cast<int>(f);
  }
  m.mask_.entries.assign(m.fragments_.size(), Precision{});
  return m;
}

bool Model::is_excluded(int fragment) const {
  if (spec_.quantize_first_last) return false;
  return fragment == 0 || fragment == fragment_count() - 1;
}

void apply_precision(Model& model, const PrecisionMask& mask) {
  if (mask.entries.size() != static_cast<std::size_t>(model.fragment_count())) {
    throw Error(ErrorCode::kInvalidMask, "mask has " + std::to_string(mask.entries.size()) + " entries, model has " +
                                             std::to_string(model.fragment_count()) + " fragments");
  }
  for (int f = 0; f < model.fragment_count(); ++f) {
    const Precision& p = mask.entries[f];
    if (!is_supported_bits(p.weight_bits) || !is_supported_bits(p.activation_bits)) {
      throw Error(ErrorCode::kInvalidMask, "unsupported bit-width in fragment " + std::to_string(f));
    }
    if (model.is_excluded(f) && !p.full()) {
      throw Error(ErrorCode::kExclusionViolation, "fragment " + std::to_string(f) + " must stay full precision");
    }
  }
  model.mask_ = mask;
  for (int f = 0; f < model.fragment_count(); ++f) {
    for (int u : model.fragments_[f]) model.units_[u].precision = mask.entries[f];
  }
}

PrecisionMask uniform_mask(const Model& model, Precision target) {
  PrecisionMask mask;
  for (int f = 0; f < model.fragment_count(); ++f) {
    mask.entries.push_back(model.is_excluded(f) ? Precision{} : target);
  }
  return mask;
}

PrecisionMask mask_from_indicator(const Model& model, const IndicatorMatrix& indicator, Precision target) {
  if (indicator.size() != static_cast<std::size_t>(model.fragment_count())) {
    throw Error(ErrorCode::kInvalidMask, "indicator rows do not match fragment count");
  }
  PrecisionMask mask;
  for (int f = 0; f < model.fragment_count(); ++f) {
    const auto& row = indicator[f];
    if (model.is_excluded(f) && (row[0] || row[1])) {
      throw Error(ErrorCode::kExclusionViolation, "indicator selects excluded fragment " + std::to_string(f));
    }
    mask.entries.push_back({row[0] ? target.weight_bits : kFullPrecision,
                            row[1] ? target.activation_bits : kFullPrecision});
  }
  mask.source_indicator = indicator;
  return mask;
}

std::vector<int> last_block_taps(const Model& model, int count) {
  const int body = model.fragment_count();
  std::vector<int> taps;
  // Body blocks end where the head fragment starts; walk back over them.
  const auto& head_units = model.fragment_units(body - 1);
  int unit = head_units.front() - 1;
  const int units_per_block =
      model.spec().architecture == Architecture::kPlainCnn ? 1 : 2;
  for (int i = 0; i < count; ++i) {
    const int last_unit = unit - i * units_per_block;
    if (last_unit < 1) throw Error(ErrorCode::kInvalidTap, "not enough blocks for requested hint taps");
    for (int f = 0; f < body; ++f) {
      const auto& units = model.fragment_units(f);
      if (units.back() == last_unit) taps.insert(taps.begin(), f);
    }
  }
  return taps;
}

Tensor Model::weight_of(int unit, std::vector<TraceEvent>* trace) const {
  const Unit& u = units_[unit];
  Tensor q = quantize_weight(u.weight, u.precision.weight_bits);
  if (trace && u.precision.weight_bits != kFullPrecision) {
    trace->push_back({TraceEvent::Kind::kWeightQuant, unit, u.weight.node_id(), 0, q.node_id()});
  }
  return q;
}

Tensor Model::quant_act(const Tensor& x, int unit, std::vector<TraceEvent>* trace) const {
  const int bits = units_[unit].precision.activation_bits;
  Tensor q = quantize_activation(x, bits);
  if (trace && bits != kFullPrecision) {
    trace->push_back({TraceEvent::Kind::kActivationQuant, unit, x.node_id(), 0, q.node_id()});
  }
  return q;
}

Tensor Model::norm(const Tensor& x, int index) {
  Norm& n = norms_[index];
  return batch_norm(x, n.gamma, n.beta, n.stats, mode_);
}

ForwardResult Model::forward(const Tensor& batch, std::span<const int> taps, std::vector<TraceEvent>* trace) {
  for (int t : taps) {
    if (t < 0 || t >= fragment_count()) throw Error(ErrorCode::kInvalidTap, "tap " + std::to_string(t) + " out of range");
  }
  if (batch.ndim() != 4 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.image_size ||
      batch.dim(3) != spec_.image_size) {
    throw Error(ErrorCode::kInvalidShape, "batch shape " + shape_str(batch.shape()) + " does not match model input");
  }
  const bool pre = spec_.architecture == Architecture::kPreresnetBasic;
  const bool plain = spec_.architecture == Architecture::kPlainCnn;
  std::vector<Tensor> unit_out(units_.size());

  const Block& stem = blocks_.front();
  Tensor x = conv2d(batch, weight_of(stem.first_unit, trace), 1, 1);
  if (!pre) x = quant_act(relu(norm(x, stem.norms[0])), stem.first_unit, trace);
  unit_out[stem.first_unit] = x;

  for (std::size_t b = 1; b + 1 < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    const int u1 = blk.first_unit;
    if (plain) {
      x = conv2d(x, weight_of(u1, trace), blk.stride, 1);
      x = quant_act(relu(norm(x, blk.norms[0])), u1, trace);
      unit_out[u1] = x;
      continue;
    }
    const int u2 = u1 + 1;
    Tensor shortcut = shortcut_pad(x, blk.out_channels, blk.stride);
    Tensor sum_out;
    Tensor branch;
    if (pre) {
      Tensor a = quant_act(relu(norm(x, blk.norms[0])), u1, trace);
      Tensor h = conv2d(a, weight_of(u1, trace), blk.stride, 1);
      unit_out[u1] = h;
      Tensor c = quant_act(relu(norm(h, blk.norms[1])), u2, trace);
      branch = conv2d(c, weight_of(u2, trace), 1, 1);
      sum_out = add(branch, shortcut);
      unit_out[u2] = sum_out;
    } else {
      Tensor h = conv2d(x, weight_of(u1, trace), blk.stride, 1);
      h = quant_act(relu(norm(h, blk.norms[0])), u1, trace);
      unit_out[u1] = h;
      branch = norm(conv2d(h, weight_of(u2, trace), 1, 1), blk.norms[1]);
      sum_out = add(branch, shortcut);
      unit_out[u2] = quant_act(relu(sum_out), u2, trace);
    }
    if (trace) {
      trace->push_back({TraceEvent::Kind::kResidualAdd, u2, branch.node_id(), x.node_id(), sum_out.node_id()});
    }
    x = unit_out[u2];
  }

  const Block& head = blocks_.back();
  if (pre) x = relu(norm(x, head.norms[0]));
  Tensor pooled = quant_act(global_avg_pool(x), head.first_unit, trace);
  Tensor logits = linear(pooled, weight_of(head.first_unit, trace));
  unit_out[head.first_unit] = logits;

  ForwardResult result;
  result.logits = logits;
  for (int t : taps) result.hints.push_back(unit_out[fragments_[t].back()]);
  return result;
}

std::vector<NamedParam> Model::parameters() const {
  std::vector<NamedParam> params;
  for (const Unit& u : units_) params.push_back({u.name, u.weight});
  for (const Norm& n : norms_) {
    params.push_back({n.name + ".gamma", n.gamma});
    params.push_back({n.name + ".beta", n.beta});
  }
  return params;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  for (Norm& n : norms_) {
    out.push_back({n.name + ".running_mean", &n.stats.mean});
    out.push_back({n.name + ".running_var", &n.stats.var});
  }
  return out;
}

Model Model::clone() const {
  Model m;
  m.spec_ = spec_;
  m.units_ = units_;
  for (Unit& u : m.units_) u.weight = u.weight.clone();
  m.norms_ = norms_;
  for (Norm& n : m.norms_) {
    n.gamma = n.gamma.clone();
    n.beta = n.beta.clone();
  }
  m.blocks_ = blocks_;
  m.fragments_ = fragments_;
  m.unit_fragment_ = unit_fragment_;
  m.mask_ = mask_;
  m.mode_ = mode_;
  return m;
}

void Model::load_state_from(const Model& other) {
  if (other.units_.size() != units_.size() || other.norms_.size() != norms_.size()) {
    throw Error(ErrorCode::kInvalidSpec, "load_state_from: architecture mismatch");
  }
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (units_[i].weight.shape() != other.units_[i].weight.shape()) {
      throw Error(ErrorCode::kInvalidSpec, "load_state_from: shape mismatch in " + units_[i].name);
    }
    auto dst = units_[i].weight.data();
    auto src = other.units_[i].weight.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    auto copy = [](Tensor& d, const Tensor& s) {
      auto dst = d.data();
      auto src = s.data();
      std::copy(src.begin(), src.end(), dst.begin());
    };
    copy(norms_[i].gamma, other.norms_[i].gamma);
    copy(norms_[i].beta, other.norms_[i].beta);
    norms_[i].stats = other.norms_[i].stats;
  }
}

}  // namespace qat
