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

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qat/ops.hpp"
#include "qat/optim.hpp"
#include "qat/quant.hpp"

namespace qat {

enum class Architecture { kPlainCnn, kResnetBasic, kPreresnetBasic };
enum class Granularity { kLayer, kBlock };

const char* to_string(Architecture arch);
const char* to_string(Granularity granularity);
Architecture parse_architecture(const std::string& text);
Granularity parse_granularity(const std::string& text);

/// Declarative architecture. Stage widths and blocks-per-stage follow the
/// CIFAR ResNet layout: a 3x3 stem, stages separated by stride-2
/// downsampling, global average pooling and a linear classifier. For
/// plain_cnn a "block" is a single conv-bn-relu layer.
struct ModelSpec {
  Architecture architecture = Architecture::kPreresnetBasic;
  std::vector<int> stage_widths{16, 32, 64};
  int blocks_per_stage = 2;
  int num_classes = 10;
  int in_channels = 3;
  int image_size = 32;
  bool quantize_first_last = false;
  Granularity granularity = Granularity::kBlock;

  /// 8 when the first and last layers are quantized, otherwise 32.
  int input_bits() const { return quantize_first_last ? 8 : kFullPrecision; }
  void validate() const;
};

struct Precision {
  int weight_bits = kFullPrecision;
  int activation_bits = kFullPrecision;

  bool operator==(const Precision&) const = default;
  bool full() const { return weight_bits == kFullPrecision && activation_bits == kFullPrecision; }
};

/// Binary indicator rows (quantize weights, quantize activations), one per
/// fragment.
using IndicatorMatrix = std::vector<std::array<std::uint8_t, 2>>;

struct PrecisionMask {
  std::vector<Precision> entries;
  std::optional<IndicatorMatrix> source_indicator;
};

/// The four disjoint fragment subsets induced by an indicator matrix.
struct FragmentPartition {
  std::vector<int> quant_weights_and_activations;
  std::vector<int> quant_weights_only;
  std::vector<int> quant_activations_only;
  std::vector<int> full_precision;
};

FragmentPartition partition_fragments(const IndicatorMatrix& indicator);

/// Records which tensors pass through quantizers and residual additions
/// during one forward pass.
struct TraceEvent {
  enum class Kind { kActivationQuant, kWeightQuant, kResidualAdd };
  Kind kind;
  int unit;
  std::uint64_t input;     // quantizer input, or the residual branch
  std::uint64_t shortcut;  // residual shortcut operand (kResidualAdd only)
  std::uint64_t output;
};

struct ForwardResult {
  Tensor logits;
  std::vector<Tensor> hints;
};

struct NamedBuffer {
  std::string name;
  std::vector<float>* values;
};

class Model {
 public:
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  int fragment_count() const { return static_cast<int>(fragments_.size()); }
  /// First conv and classifier fragments are pinned to full precision unless
  /// the spec quantizes them.
  bool is_excluded(int fragment) const;
  const PrecisionMask& mask() const { return mask_; }
  /// Indices of conv/linear layers (units) that make up a fragment.
  const std::vector<int>& fragment_units(int fragment) const { return fragments_.at(fragment); }
  int unit_count() const { return static_cast<int>(units_.size()); }

  void set_mode(Mode mode) { mode_ = mode; }
  Mode mode() const { return mode_; }

  /// Logits plus the output of each tapped fragment.
  ForwardResult forward(const Tensor& batch, std::span<const int> taps = {},
                        std::vector<TraceEvent>* trace = nullptr);

  std::vector<NamedParam> parameters() const;
  std::vector<NamedBuffer> buffers();

  /// Deep copy of parameters, statistics and mask.
  Model clone() const;
  /// Copies parameter values and statistics from a model of identical spec.
  void load_state_from(const Model& other);

 private:
  friend Model build_model(const ModelSpec& spec, std::uint64_t seed);
  friend void apply_precision(Model& model, const PrecisionMask& mask);

  struct Norm {
    std::string name;
    Tensor gamma;
    Tensor beta;
    BatchNormStats<float> stats;
  };

  struct Unit {
    std::string name;
    Tensor weight;  // conv [O,C,3,3] or linear [classes, features]
    int stride = 1;
    Precision precision;
  };

  struct Block {
    int first_unit = 0;
    int unit_count = 0;
    int out_channels = 0;
    int stride = 1;
    std::vector<int> norms;
  };

  Model() = default;

  Tensor weight_of(int unit, std::vector<TraceEvent>* trace) const;
  Tensor quant_act(const Tensor& x, int unit, std::vector<TraceEvent>* trace) const;
  Tensor norm(const Tensor& x, int index);

  ModelSpec spec_;
  std::vector<Unit> units_;
  std::vector<Norm> norms_;
  std::vector<Block> blocks_;  // stem, body blocks, head
  std::vector<std::vector<int>> fragments_;
  std::vector<int> unit_fragment_;
  PrecisionMask mask_;
  Mode mode_ = Mode::kTrain;
};

/// Deterministic construction: He-normal conv weights, fan-in scaled linear
/// weights, gamma = 1 and beta = 0. Starts with an all-(32, 32) mask.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Installs per-fragment bit-widths for subsequent forwards. Master weights
/// are not touched.
void apply_precision(Model& model, const PrecisionMask& mask);

/// Every fragment at `target`, excluded fragments at (32, 32).
PrecisionMask uniform_mask(const Model& model, Precision target);

/// Bit i of row f selects quantization of weights (i = 0) or activations
/// (i = 1) of fragment f at the target width. Excluded fragments must have
/// (0, 0) rows.
PrecisionMask mask_from_indicator(const Model& model, const IndicatorMatrix& indicator, Precision target);

/// Fragment indices of the last `count` body blocks (hint positions).
std::vector<int> last_block_taps(const Model& model, int count);

}  // namespace qat
