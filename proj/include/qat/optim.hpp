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

#include <cstdint>
#include <string>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

enum class OptimizerKind { kSgdMomentum, kAdam };

const char* to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  float learning_rate = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// SGD with momentum or Adam over full-precision master weights. Weight
/// decay is applied as an L2 term added to the gradient.
class Optimizer {
 public:
  Optimizer(std::vector<NamedParam> params, OptimizerConfig config);

  /// Applies one update. Every parameter must carry a gradient.
  void step();
  void zero_grad();

  float learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(float lr) { config_.learning_rate = lr; }
  const OptimizerConfig& config() const { return config_; }
  std::int64_t step_count() const { return steps_; }
  void set_step_count(std::int64_t steps) { steps_ = steps; }
  const std::vector<NamedParam>& params() const { return params_; }

  /// Named state buffers (velocity for SGD, first/second moments for Adam),
  /// exposed for checkpointing.
  std::vector<std::pair<std::string, std::vector<float>*>> state_buffers();

 private:
  std::vector<NamedParam> params_;
  OptimizerConfig config_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  std::int64_t steps_ = 0;
};

}  // namespace qat
