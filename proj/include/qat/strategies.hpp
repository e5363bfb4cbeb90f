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
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qat/data.hpp"
#include "qat/network.hpp"
#include "qat/optim.hpp"

namespace qat {

enum class StrategyKind { kDirect, kTwoStep, kProgressive, kStochastic, kKdJoint, kTsPp, kTsPpKd, kSpKd };
enum class KdMode { kNone, kHint, kPosterior };
enum class TeacherInit { kPretrained, kScratch };

const char* to_string(StrategyKind kind);
const char* to_string(KdMode mode);
StrategyKind parse_strategy(const std::string& text);
KdMode parse_kd_mode(const std::string& text);
TeacherInit parse_teacher_init(const std::string& text);

bool uses_kd(StrategyKind kind);
bool uses_sp(StrategyKind kind);

struct StrategyConfig {
  StrategyKind strategy = StrategyKind::kDirect;
  /// Target precision. Two-step uses weight_bits as k and high_bits as K.
  int weight_bits = 2;
  int activation_bits = 2;
  int high_bits = kFullPrecision;
  /// Strictly decreasing; drives progressive and ts+pp stages.
  std::vector<int> bit_sequence{32, 4, 2};
  int epochs_per_stage = 1;
  /// Epochs of single-stage strategies (direct, stochastic, kd_joint, sp+kd).
  int epochs = 1;

  double delta0 = 1.0;
  /// Per-step decay of delta; 0 derives it from full_quant_fraction.
  double mu = 0.0;
  double full_quant_fraction = 0.8;
  bool randomize_wa = true;

  KdMode kd_mode = KdMode::kNone;
  float lambda = 0.1f;
  float beta = 0.5f;
  std::vector<int> taps;
  TeacherInit teacher_init = TeacherInit::kPretrained;
  bool teacher_frozen = false;

  void validate() const;
};

/// One training stage at a fixed target precision.
struct Stage {
  Precision precision;
  int epochs = 0;
};

/// Stage 1 (k, K) then stage 2 (k, k). k == K collapses to one stage.
std::vector<Stage> two_step_schedule(int k, int high, int epochs_per_stage);
/// One (b_i, b_i) stage per entry of a strictly decreasing sequence.
std::vector<Stage> progressive_schedule(std::span<const int> bits, int epochs_per_stage);
/// Progressive precision where each lowering is done weights first:
/// (b_1, b_1), then (b_i, b_{i-1}), (b_i, b_i) for i >= 2.
std::vector<Stage> two_step_progressive_schedule(std::span<const int> bits, int epochs_per_stage);

/// Stages implied by the whole strategy configuration.
std::vector<Stage> build_schedule(const StrategyConfig& config);

/// Each entry is 1 with probability (1 - delta), independently. Without W/A
/// randomness both columns share one draw. Rows flagged in `excluded` are
/// forced to (0, 0).
IndicatorMatrix sample_indicator(int fragments, double delta, bool randomize_wa, std::mt19937_64& rng,
                                 const std::vector<bool>& excluded = {});

/// Decay per step so delta reaches 0 after `fraction` of `total_steps`.
double decay_per_step(double delta0, double fraction, std::int64_t total_steps);

/// max(delta - mu, 0), snapping residual rounding noise to exactly 0.
double next_delta(double delta, double mu);

/// 0.5 * sum over taps of ||Q_k(teacher) - student||^2, averaged over the
/// batch. Q_k is the activation quantizer, with STE on its backward.
template <typename T>
BasicTensor<T> hint_loss(std::span<const BasicTensor<T>> teacher_feats, std::span<const BasicTensor<T>> student_feats,
                         int k);

struct StepResult {
  float loss = 0.0f;          // classification loss
  float distill_loss = 0.0f;  // lambda * R or beta * KL term of the student objective
};

/// Forward, cross-entropy, backward and one optimizer update.
StepResult plain_train_step(Model& model, const Batch& batch, Optimizer& optimizer);

struct SpStepResult {
  float loss = 0.0f;
  double next_delta = 0.0;
  bool sampled = false;
  IndicatorMatrix indicator;
};

/// Samples the indicator (skipped once delta <= 0, where the whole network
/// is quantized), installs the induced mask and trains one step.
SpStepResult sp_train_step(Model& model, const Batch& batch, double delta, double mu, std::mt19937_64& rng,
                           Optimizer& optimizer, Precision target, bool randomize_wa);

struct KdSettings {
  KdMode mode = KdMode::kPosterior;
  float lambda = 0.1f;
  float beta = 0.5f;
  std::vector<int> taps;
  /// Bit-width of Q applied to teacher hints; the student's activation bits.
  int hint_bits = 2;
};

struct KdStepResult {
  float teacher_loss = 0.0f;  // L1
  float student_loss = 0.0f;  // L2
  float student_ce = 0.0f;
  float student_distill = 0.0f;
  float teacher_ce = 0.0f;
};

/// One joint step. The student minimizes CE + lambda R (hint) or
/// CE + beta KL(p_low || p_full) (posterior); the teacher, unless
/// `teacher_optimizer` is null, minimizes CE + lambda R or
/// CE + beta KL(p_full || p_low). Each objective treats the other network's
/// outputs as constants.
KdStepResult kd_joint_step(Model& teacher, Model& student, const Batch& batch, const KdSettings& settings,
                           Optimizer* teacher_optimizer, Optimizer& student_optimizer);

struct EvalResult {
  double top1 = 0.0;  // percent
  double top5 = 0.0;
};

/// Eval-mode pass over every batch; ties in top-k go to the lower class.
EvalResult evaluate(Model& model, const Loader& loader);

struct LrSchedule {
  std::vector<int> milestones;  // epochs within a stage
  float decay = 10.0f;

  float at(float base, int epoch_in_stage) const;
};

struct TrainerOptions {
  OptimizerConfig student_optimizer;
  OptimizerConfig teacher_optimizer;
  LrSchedule lr_schedule;
  std::uint64_t seed = 0;
  /// Record per-step delta and partition checks.
  bool trace_steps = false;
};

/// Resumable position inside a strategy's schedule.
struct TrainerState {
  int stage = 0;
  int epoch_in_stage = 0;
  std::int64_t batch = 0;
  std::int64_t global_step = 0;
  int global_epoch = 0;
  double delta = 0.0;
  // Running sums over the current epoch.
  double loss_sum = 0.0;
  double distill_sum = 0.0;
  double teacher_sum = 0.0;
};

struct EpochSummary {
  int epoch = 0;  // 1-based global epoch
  int stage = 0;  // 1-based
  Precision precision;
  double delta = 0.0;
  double train_loss = 0.0;
  double distill_loss = 0.0;
  double teacher_loss = 0.0;
};

struct StepTrace {
  double delta = 0.0;
  bool sampled = false;
  bool fully_quantized = false;
};

/// Step-level driver for every strategy and composite. The student model
/// (and teacher for KD strategies) are borrowed.
class Trainer {
 public:
  Trainer(Model& student, Model* teacher, const Loader& train, StrategyConfig config, TrainerOptions options);

  const std::vector<Stage>& schedule() const { return schedule_; }
  const TrainerState& state() const { return state_; }
  bool done() const;

  /// One optimizer step. Returns an epoch summary when the step closed an
  /// epoch.
  std::optional<EpochSummary> step();
  /// Runs to completion, calling `on_epoch` after every epoch. `on_stage_end`
  /// fires after the last epoch of each stage.
  void run(const std::function<void(const EpochSummary&)>& on_epoch,
           const std::function<void(int stage)>& on_stage_end = nullptr);

  Optimizer& student_optimizer() { return *student_opt_; }
  Optimizer* teacher_optimizer() { return teacher_opt_.get(); }
  /// Rebuilds per-stage optimizers at `state` so checkpointed buffers can be
  /// loaded into them.
  void restore(const TrainerState& state);

  double mu() const { return mu_; }
  const std::vector<StepTrace>& step_trace() const { return trace_; }
  std::int64_t total_steps() const;

 private:
  void begin_stage();
  void skip_empty_stages();
  bool stage_uses_sp() const;
  void apply_stage_lr();

  Model& student_;
  Model* teacher_;
  const Loader& train_;
  StrategyConfig config_;
  TrainerOptions options_;
  std::vector<Stage> schedule_;
  TrainerState state_;
  double mu_ = 0.0;
  std::unique_ptr<Optimizer> student_opt_;
  std::unique_ptr<Optimizer> teacher_opt_;
  std::vector<StepTrace> trace_;
};

}  // namespace qat
