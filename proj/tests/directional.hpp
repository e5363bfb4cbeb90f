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


// Multi-seed strategy comparisons shared by the directional tests and the
// acceptance binary.

#pragma once

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "qat/experiment.hpp"

namespace qat::testing {

struct ArmResult {
  std::string name;
  std::vector<double> best;   // best student top-1 at the target precision
  std::vector<double> final;  // last student top-1

  double mean_best() const { return mean(best); }
  double mean_final() const { return mean(final); }
  static double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }
};

/// Runs `cfg` once per seed under root/<name>/seed<N>. The data seed stays
/// fixed so that only initialization and batch order vary.
inline ArmResult run_arm(const std::string& name, ExperimentConfig cfg, const std::vector<std::uint64_t>& seeds,
                         const std::string& root) {
  ArmResult out{name, {}, {}};
  const Precision target{cfg.strategy.weight_bits, cfg.strategy.activation_bits};
  for (auto seed : seeds) {
    cfg.seed = seed;
    cfg.output_dir = (std::filesystem::path(root) / name / ("seed" + std::to_string(seed))).string();
    const auto res = run_experiment(cfg);
    double best = 0.0, last = 0.0;
    for (const auto& r : res.records) {
      if (r.network != "student" || r.epoch == 0) continue;
      if (r.weight_bits != target.weight_bits || r.activation_bits != target.activation_bits) continue;
      best = std::max(best, r.test_top1);
      last = r.test_top1;
    }
    out.best.push_back(best);
    out.final.push_back(last);
  }
  return out;
}

/// Arms built from one base config. `epochs` is the length of every stage;
/// the direct baseline trains for as many epochs as the longest staged arm.
struct ArmSet {
  ExperimentConfig base;
  int epochs = 1;

  ExperimentConfig direct(int bits = 2, int stages = 3) const {
    auto c = base;
    c.strategy.strategy = StrategyKind::kDirect;
    c.strategy.weight_bits = c.strategy.activation_bits = bits;
    c.strategy.epochs = epochs * stages;
    for (auto& m : c.lr_schedule.milestones) m *= stages;
    return c;
  }
  ExperimentConfig two_step() const {
    auto c = base;
    c.strategy.strategy = StrategyKind::kTwoStep;
    c.strategy.weight_bits = c.strategy.activation_bits = 2;
    c.strategy.epochs_per_stage = epochs;
    return c;
  }
  ExperimentConfig progressive() const {
    auto c = base;
    c.strategy.strategy = StrategyKind::kProgressive;
    c.strategy.weight_bits = c.strategy.activation_bits = 2;
    c.strategy.bit_sequence = {32, 4, 2};
    c.strategy.epochs_per_stage = epochs;
    return c;
  }
  ExperimentConfig stochastic() const {
    auto c = direct();
    c.strategy.strategy = StrategyKind::kStochastic;
    c.strategy.delta0 = 1.0;
    c.strategy.full_quant_fraction = 0.8;
    c.strategy.randomize_wa = true;
    return c;
  }
  /// Posterior KD from a full-precision teacher checkpoint.
  ExperimentConfig kd(bool frozen, const std::string& teacher_checkpoint) const {
    auto c = direct();
    c.strategy.strategy = StrategyKind::kKdJoint;
    c.strategy.kd_mode = KdMode::kPosterior;
    c.strategy.beta = 0.5f;
    c.strategy.teacher_init = TeacherInit::kPretrained;
    c.teacher_checkpoint = teacher_checkpoint;
    c.strategy.teacher_frozen = frozen;
    return c;
  }
};

}  // namespace qat::testing
