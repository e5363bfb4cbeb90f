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

#include "qat/optim.hpp"

#include <cmath>

namespace qat {

const char* to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd" || text == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  throw Error(ErrorCode::kConfig, "unknown optimizer kind '" + text + "'");
}

Optimizer::Optimizer(std::vector<NamedParam> params, OptimizerConfig config)
    : params_(std::move(params)), config_(config) {
  first_.reserve(params_.size());
  for (const NamedParam& p : params_) {
    first_.emplace_back(p.tensor.numel(), 0.0f);
    if (config_.kind == OptimizerKind::kAdam) second_.emplace_back(p.tensor.numel(), 0.0f);
  }
}

void Optimizer::step() {
  for (const NamedParam& p : params_) {
    if (!p.tensor.has_grad()) throw Error(ErrorCode::kInvalidState, "parameter '" + p.name + "' has no gradient");
  }
  ++steps_;
  const float lr = config_.learning_rate;
  const float wd = config_.weight_decay;
  if (config_.kind == OptimizerKind::kSgdMomentum) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor t = params_[i].tensor;
      auto w = t.data();
      auto g = t.grad();
      auto& v = first_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const float d = g[j] + wd * w[j];
        v[j] = config_.momentum * v[j] + d;
        w[j] -= lr * v[j];
      }
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto w = t.data();
    auto g = t.grad();
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float d = g[j] + wd * w[j];
      m[j] = config_.beta1 * m[j] + (1.0f - config_.beta1) * d;
      v[j] = config_.beta2 * v[j] + (1.0f - config_.beta2) * d * d;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

void Optimizer::zero_grad() {
  for (NamedParam& p : params_) p.tensor.zero_grad();
}

std::vector<std::pair<std::string, std::vector<float>*>> Optimizer::state_buffers() {
  std::vector<std::pair<std::string, std::vector<float>*>> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("opt/m/" + params_[i].name, &first_[i]);
    if (config_.kind == OptimizerKind::kAdam) out.emplace_back("opt/v/" + params_[i].name, &second_[i]);
  }
  return out;
}

}  // namespace qat
