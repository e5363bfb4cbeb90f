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
#include <optional>
#include <string>
#include <vector>

#include "qat/data.hpp"
#include "qat/network.hpp"
#include "qat/optim.hpp"
#include "qat/strategies.hpp"

namespace qat {

struct DatasetConfig {
  std::string name = "synthetic";  // synthetic | cifar10 | mnist
  /// Empty means $QAT_DATA_ROOT/<default directory for the dataset>.
  std::string path;
  std::size_t train_subset = 0;
  std::size_t test_subset = 0;
  bool augment = true;
  SyntheticSpec synthetic;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  ModelSpec model;
  StrategyConfig strategy;
  /// "auto" picks Adam for stochastic precision and SGD otherwise.
  std::optional<OptimizerKind> optimizer_kind;
  OptimizerConfig optimizer;
  std::optional<float> student_lr;
  std::optional<float> teacher_lr;
  int batch_size = 64;
  LrSchedule lr_schedule;
  /// "lastN" or a comma list of fragment indices.
  std::string taps = "last1";
  std::string init_checkpoint;
  std::string teacher_checkpoint;
  bool wall_clock = false;
  bool stage_checkpoints = true;

  /// Optimizer settings with "auto" kinds and learning rates resolved.
  OptimizerConfig student_optimizer() const;
  OptimizerConfig teacher_optimizer() const;
  std::string dataset_path() const;
};

/// Flat `key = value` lines; `#` starts a comment. Unknown keys and bad
/// values raise a config error naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical text listing every key; parse_config(format_config(c))
/// reproduces c.
std::string format_config(const ExperimentConfig& config);

/// Every accepted key, in canonical order.
std::vector<std::string> config_keys();

/// Resolves "lastN" or an explicit index list against a built model.
std::vector<int> resolve_taps(const std::string& spec, const Model& model);

}  // namespace qat
