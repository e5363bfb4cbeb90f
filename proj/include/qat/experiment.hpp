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

#include "qat/config.hpp"
#include "qat/data.hpp"
#include "qat/metrics.hpp"
#include "qat/strategies.hpp"

namespace qat {

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// Train and test splits named by the config, subset and with the train
/// pixel mean attached to both.
DataSplits load_datasets(const ExperimentConfig& config);

/// Model spec with input geometry taken from the dataset.
ModelSpec resolved_model_spec(const ExperimentConfig& config, const Dataset& train);

struct RunOptions {
  /// Continue from a checkpoint written by an earlier (interrupted) run.
  std::string resume_from;
  /// Stop after this many optimizer steps in total and write
  /// interrupt.ckpt; negative runs to completion.
  std::int64_t stop_after_steps = -1;
  /// Print one line per epoch to stdout.
  bool verbose = false;
};

struct ExperimentResult {
  std::string metrics_path;
  std::string final_checkpoint;  // empty when interrupted
  std::string interrupt_checkpoint;
  std::vector<std::string> stage_checkpoints;
  std::vector<MetricsRecord> records;
};

/// Runs the configured strategy end to end. Output goes to
/// config.output_dir: metrics.csv, stage<N>.ckpt at stage boundaries of
/// multi-stage schedules, and final.ckpt.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});
ExperimentResult run_experiment_file(const std::string& config_path, const RunOptions& options = {});

/// Deterministic eval-mode pass of a checkpointed student. `dataset`
/// overrides the training dataset name (path from $QAT_DATA_ROOT or
/// `data_path`); `bits` overrides the stored mask with a uniform one.
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::optional<std::string>& dataset = {},
                               const std::optional<Precision>& bits = {},
                               const std::optional<std::string>& data_path = {});

}  // namespace qat
