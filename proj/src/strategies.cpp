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

#include "qat/strategies.hpp"

#include <algorithm>
#include <cmath>

#include "qat/error.hpp"
#include "qat/ops.hpp"
#include "qat/quant.hpp"
#include "qat/rng.hpp"

namespace qat {
namespace {

// Uniform double in [0, 1) from the top 53 bits; identical on every
// standard library, unlike uniform_real_distribution.
double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_stage_bits(int bits) {
  if (!is_supported_bits(bits)) {
    throw Error(ErrorCode::kInvalidSchedule, "unsupported bit-width in schedule: " + std::to_string(bits));
  }
}

std::vector<bool> excluded_fragments(const Model& model) {
  std::vector<bool> out(model.fragment_count());
  for (int f = 0; f < model.fragment_count(); ++f) out[f] = model.is_excluded(f);
  return out;
}

struct MaskDraw {
  bool sampled = false;
  IndicatorMatrix indicator;
};

MaskDraw install_sp_mask(Model& model, double delta, std::mt19937_64& rng, Precision target, bool randomize_wa) {
  MaskDraw draw;
  if (delta > 0.0) {
    draw.sampled = true;
    draw.indicator = sample_indicator(model.fragment_count(), delta, randomize_wa, rng, excluded_fragments(model));
    apply_precision(model, mask_from_indicator(model, draw.indicator, target));
  } else {
    apply_precision(model, uniform_mask(model, target));
  }
  return draw;
}

bool fully_quantized(const Model& model, const MaskDraw& draw) {
  if (!draw.sampled) return true;
  for (int f = 0; f < model.fragment_count(); ++f) {
    if (model.is_excluded(f)) continue;
    if (draw.indicator[f][0] == 0 || draw.indicator[f][1] == 0) return false;
  }
  return true;
}

}  // namespace

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kDirect: return "direct";
    case StrategyKind::kTwoStep: return "two_step";
    case StrategyKind::kProgressive: return "progressive";
    case StrategyKind::kStochastic: return "stochastic";
    case StrategyKind::kKdJoint: return "kd_joint";
    case StrategyKind::kTsPp: return "ts+pp";
    case StrategyKind::kTsPpKd: return "ts+pp+kd";
    case StrategyKind::kSpKd: return "sp+kd";
  }
  return "?";
}

const char* to_string(KdMode mode) {
  switch (mode) {
    case KdMode::kNone: return "none";
    case KdMode::kHint: return "hint";
    case KdMode::kPosterior: return "posterior";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& text) {
  for (auto kind : {StrategyKind::kDirect, StrategyKind::kTwoStep, StrategyKind::kProgressive,
                    StrategyKind::kStochastic, StrategyKind::kKdJoint, StrategyKind::kTsPp, StrategyKind::kTsPpKd,
                    StrategyKind::kSpKd}) {
    if (text == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::kInvalidSpec, "unknown strategy '" + text + "'");
}

KdMode parse_kd_mode(const std::string& text) {
  for (auto mode : {KdMode::kNone, KdMode::kHint, KdMode::kPosterior}) {
    if (text == to_string(mode)) return mode;
  }
  throw Error(ErrorCode::kInvalidSpec, "unknown kd mode '" + text + "'");
}

TeacherInit parse_teacher_init(const std::string& text) {
  if (text == "pretrained") return TeacherInit::kPretrained;
  if (text == "scratch") return TeacherInit::kScratch;
  throw Error(ErrorCode::kInvalidSpec, "unknown teacher init '" + text + "'");
}

bool uses_kd(StrategyKind kind) {
  return kind == StrategyKind::kKdJoint || kind == StrategyKind::kTsPpKd || kind == StrategyKind::kSpKd;
}

bool uses_sp(StrategyKind kind) { return kind == StrategyKind::kStochastic || kind == StrategyKind::kSpKd; }

void StrategyConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidSpec, what); };
  if (!is_supported_bits(weight_bits) || !is_supported_bits(activation_bits)) fail("unsupported target bit-width");
  if (!is_supported_bits(high_bits)) fail("unsupported high bit-width");
  if (epochs < 0 || epochs_per_stage < 0) fail("epochs must be nonnegative");
  if (!(delta0 >= 0.0 && delta0 <= 1.0)) fail("delta0 must lie in [0, 1]");
  if (!(mu >= 0.0)) fail("mu must be nonnegative");
  if (!(full_quant_fraction > 0.0 && full_quant_fraction <= 1.0)) fail("full_quant_fraction must lie in (0, 1]");
  if (!(lambda >= 0.0f) || !(beta >= 0.0f)) fail("distillation weights must be nonnegative");
  if (uses_kd(strategy) && kd_mode == KdMode::kNone) fail(std::string(to_string(strategy)) + " needs a kd mode");
  if (kd_mode == KdMode::kHint && uses_kd(strategy) && taps.empty()) fail("hint mode needs at least one tap");
  for (int t : taps) {
    if (t < 0) fail("negative tap index");
  }
  build_schedule(*this);
}

std::vector<Stage> two_step_schedule(int k, int high, int epochs_per_stage) {
  check_stage_bits(k);
  check_stage_bits(high);
  if (epochs_per_stage < 0) throw Error(ErrorCode::kInvalidSchedule, "epochs per stage must be nonnegative");
  if (k > high) {
    throw Error(ErrorCode::kInvalidSchedule,
                "two-step target " + std::to_string(k) + " exceeds high precision " + std::to_string(high));
  }
  if (k == high) return {Stage{{k, k}, epochs_per_stage}};
  return {Stage{{k, high}, epochs_per_stage}, Stage{{k, k}, epochs_per_stage}};
}

std::vector<Stage> progressive_schedule(std::span<const int> bits, int epochs_per_stage) {
  if (bits.empty()) throw Error(ErrorCode::kInvalidSchedule, "empty bit sequence");
  if (epochs_per_stage < 0) throw Error(ErrorCode::kInvalidSchedule, "epochs per stage must be nonnegative");
  std::vector<Stage> out;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    check_stage_bits(bits[i]);
    if (i > 0 && bits[i] >= bits[i - 1]) {
      throw Error(ErrorCode::kInvalidSchedule, "bit sequence must be strictly decreasing");
    }
    out.push_back(Stage{{bits[i], bits[i]}, epochs_per_stage});
  }
  return out;
}

std::vector<Stage> two_step_progressive_schedule(std::span<const int> bits, int epochs_per_stage) {
  auto plain = progressive_schedule(bits, epochs_per_stage);
  std::vector<Stage> out{plain.front()};
  for (std::size_t i = 1; i < bits.size(); ++i) {
    out.push_back(Stage{{bits[i], bits[i - 1]}, epochs_per_stage});
    out.push_back(Stage{{bits[i], bits[i]}, epochs_per_stage});
  }
  return out;
}

std::vector<Stage> build_schedule(const StrategyConfig& c) {
  Precision target{c.weight_bits, c.activation_bits};
  switch (c.strategy) {
    case StrategyKind::kDirect:
    case StrategyKind::kStochastic:
    case StrategyKind::kKdJoint:
    case StrategyKind::kSpKd:
      check_stage_bits(target.weight_bits);
      check_stage_bits(target.activation_bits);
      if (c.epochs < 0) throw Error(ErrorCode::kInvalidSchedule, "epochs must be nonnegative");
      return {Stage{target, c.epochs}};
    case StrategyKind::kTwoStep:
      if (c.weight_bits != c.activation_bits) {
        throw Error(ErrorCode::kInvalidSchedule, "two-step needs equal weight and activation targets");
      }
      return two_step_schedule(c.weight_bits, c.high_bits, c.epochs_per_stage);
    case StrategyKind::kProgressive:
      return progressive_schedule(c.bit_sequence, c.epochs_per_stage);
    case StrategyKind::kTsPp:
    case StrategyKind::kTsPpKd:
      return two_step_progressive_schedule(c.bit_sequence, c.epochs_per_stage);
  }
  throw Error(ErrorCode::kInvalidSchedule, "unknown strategy");
}

IndicatorMatrix sample_indicator(int fragments, double delta, bool randomize_wa, std::mt19937_64& rng,
                                 const std::vector<bool>& excluded) {
  if (fragments < 1) throw Error(ErrorCode::kInvalidInput, "fragment count must be positive");
  if (!(delta >= 0.0 && delta <= 1.0)) throw Error(ErrorCode::kInvalidInput, "delta must lie in [0, 1]");
  if (!excluded.empty() && static_cast<int>(excluded.size()) != fragments) {
    throw Error(ErrorCode::kInvalidInput, "exclusion list does not match fragment count");
  }
  const double keep = 1.0 - delta;
  IndicatorMatrix out(fragments);
  for (int f = 0; f < fragments; ++f) {
    std::uint8_t w = unit_draw(rng) < keep ? 1 : 0;
    std::uint8_t a = randomize_wa ? (unit_draw(rng) < keep ? 1 : 0) : w;
    if (!excluded.empty() && excluded[f]) w = a = 0;
    out[f] = {w, a};
  }
  return out;
}

double decay_per_step(double delta0, double fraction, std::int64_t total_steps) {
  const double span = fraction * static_cast<double>(total_steps);
  if (span <= 1.0) return delta0;
  return delta0 / span;
}

double next_delta(double delta, double mu) {
  const double next = delta - mu;
  return next <= 1e-12 ? 0.0 : next;
}

template <typename T>
BasicTensor<T> hint_loss(std::span<const BasicTensor<T>> teacher_feats, std::span<const BasicTensor<T>> student_feats,
                         int k) {
  if (teacher_feats.empty() || teacher_feats.size() != student_feats.size()) {
    throw Error(ErrorCode::kInvalidHint, "hint lists must be non-empty and of equal length");
  }
  BasicTensor<T> total;
  int batch = 0;
  for (std::size_t i = 0; i < teacher_feats.size(); ++i) {
    const auto& t = teacher_feats[i];
    const auto& s = student_feats[i];
    if (t.shape() != s.shape()) {
      throw Error(ErrorCode::kInvalidHint, "hint " + std::to_string(i) + " shapes differ: " + shape_str(t.shape()) +
                                               " vs " + shape_str(s.shape()));
    }
    if (t.ndim() < 1) throw Error(ErrorCode::kInvalidHint, "hint tensors need a batch dimension");
    if (i == 0) batch = t.dim(0);
    if (t.dim(0) != batch) throw Error(ErrorCode::kInvalidHint, "hint batch sizes differ");
    auto term = half_squared_distance(quantize_activation(t, k), s);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, static_cast<T>(1) / static_cast<T>(batch));
}

template Tensor hint_loss<float>(std::span<const Tensor>, std::span<const Tensor>, int);
template Tensor64 hint_loss<double>(std::span<const Tensor64>, std::span<const Tensor64>, int);

StepResult plain_train_step(Model& model, const Batch& batch, Optimizer& optimizer) {
  model.set_mode(Mode::kTrain);
  auto out = model.forward(batch.images);
  auto loss = softmax_cross_entropy(out.logits, std::span<const int>(batch.labels));
  optimizer.zero_grad();
  backward(loss);
  optimizer.step();
  return StepResult{loss.item(), 0.0f};
}

SpStepResult sp_train_step(Model& model, const Batch& batch, double delta, double mu, std::mt19937_64& rng,
                           Optimizer& optimizer, Precision target, bool randomize_wa) {
  auto draw = install_sp_mask(model, delta, rng, target, randomize_wa);
  auto step = plain_train_step(model, batch, optimizer);
  SpStepResult out;
  out.loss = step.loss;
  out.next_delta = next_delta(delta, mu);
  out.sampled = draw.sampled;
  out.indicator = std::move(draw.indicator);
  return out;
}

KdStepResult kd_joint_step(Model& teacher, Model& student, const Batch& batch, const KdSettings& settings,
                           Optimizer* teacher_optimizer, Optimizer& student_optimizer) {
  if (settings.mode == KdMode::kNone) throw Error(ErrorCode::kInvalidCall, "kd step without a kd mode");
  if (teacher.spec().num_classes != student.spec().num_classes) {
    throw Error(ErrorCode::kInvalidPairing, "teacher has " + std::to_string(teacher.spec().num_classes) +
                                                " classes, student has " +
                                                std::to_string(student.spec().num_classes));
  }
  const bool train_teacher = teacher_optimizer != nullptr;
  const bool hint = settings.mode == KdMode::kHint;
  std::span<const int> taps = hint ? std::span<const int>(settings.taps) : std::span<const int>();
  std::span<const int> labels(batch.labels);

  teacher.set_mode(train_teacher ? Mode::kTrain : Mode::kEval);
  ForwardResult t_out;
  if (train_teacher) {
    t_out = teacher.forward(batch.images, taps);
  } else {
    NoGradGuard guard;
    t_out = teacher.forward(batch.images, taps);
  }
  student.set_mode(Mode::kTrain);
  ForwardResult s_out = student.forward(batch.images, taps);
  if (t_out.logits.shape() != s_out.logits.shape()) {
    throw Error(ErrorCode::kInvalidPairing, "logit shapes differ: " + shape_str(t_out.logits.shape()) + " vs " +
                                                shape_str(s_out.logits.shape()));
  }

  std::vector<Tensor> t_hints_fixed, s_hints_fixed;
  Tensor t_probs_fixed, s_probs_fixed;
  if (hint) {
    for (const auto& h : t_out.hints) t_hints_fixed.push_back(h.detach());
    for (const auto& h : s_out.hints) s_hints_fixed.push_back(h.detach());
  }

  KdStepResult result;
  // Student objective.
  auto ce_s = softmax_cross_entropy(s_out.logits, labels);
  Tensor l2 = ce_s;
  Tensor s_probs;
  if (!hint) {
    s_probs = softmax(s_out.logits);
    s_probs_fixed = s_probs.detach();
    NoGradGuard guard;
    t_probs_fixed = softmax(t_out.logits.detach());
  }
  if (hint && settings.lambda != 0.0f) {
    auto r = scale(hint_loss<float>(t_hints_fixed, s_out.hints, settings.hint_bits), settings.lambda);
    result.student_distill = r.item();
    l2 = add(l2, r);
  } else if (!hint && settings.beta != 0.0f) {
    auto kl = scale(kl_divergence(s_probs, t_probs_fixed), settings.beta);
    result.student_distill = kl.item();
    l2 = add(l2, kl);
  }
  result.student_ce = ce_s.item();
  result.student_loss = l2.item();
  student_optimizer.zero_grad();
  backward(l2);
  student_optimizer.step();

  // Teacher objective.
  if (train_teacher) {
    auto ce_t = softmax_cross_entropy(t_out.logits, labels);
    Tensor l1 = ce_t;
    if (hint && settings.lambda != 0.0f) {
      l1 = add(l1, scale(hint_loss<float>(t_out.hints, s_hints_fixed, settings.hint_bits), settings.lambda));
    } else if (!hint && settings.beta != 0.0f) {
      l1 = add(l1, scale(kl_divergence(softmax(t_out.logits), s_probs_fixed), settings.beta));
    }
    result.teacher_ce = ce_t.item();
    result.teacher_loss = l1.item();
    teacher_optimizer->zero_grad();
    backward(l1);
    teacher_optimizer->step();
  } else {
    result.teacher_ce = softmax_cross_entropy(t_out.logits.detach(), labels).item();
    result.teacher_loss = result.teacher_ce;
  }
  return result;
}

EvalResult evaluate(Model& model, const Loader& loader) {
  const Mode saved = model.mode();
  model.set_mode(Mode::kEval);
  NoGradGuard guard;
  std::int64_t total = 0, hit1 = 0, hit5 = 0;
  for (std::size_t b = 0; b < loader.batches_per_epoch(); ++b) {
    Batch batch = loader.batch(0, b);
    auto out = model.forward(batch.images);
    const int n = out.logits.dim(0), c = out.logits.dim(1);
    auto logits = out.logits.data();
    for (int i = 0; i < n; ++i) {
      const float* row = logits.data() + static_cast<std::size_t>(i) * c;
      const int label = batch.labels[i];
      const float target = row[label];
      int rank = 0;
      for (int j = 0; j < c; ++j) {
        if (row[j] > target || (row[j] == target && j < label)) ++rank;
      }
      hit1 += rank < 1;
      hit5 += rank < 5;
      ++total;
    }
  }
  model.set_mode(saved);
  if (total == 0) return {};
  return EvalResult{100.0 * static_cast<double>(hit1) / static_cast<double>(total),
                    100.0 * static_cast<double>(hit5) / static_cast<double>(total)};
}

float LrSchedule::at(float base, int epoch_in_stage) const {
  float lr = base;
  for (int m : milestones) {
    if (epoch_in_stage >= m) lr /= decay;
  }
  return lr;
}

Trainer::Trainer(Model& student, Model* teacher, const Loader& train, StrategyConfig config, TrainerOptions options)
    : student_(student),
      teacher_(teacher),
      train_(train),
      config_(std::move(config)),
      options_(std::move(options)) {
  config_.validate();
  schedule_ = build_schedule(config_);
  if (uses_kd(config_.strategy)) {
    if (teacher_ == nullptr) throw Error(ErrorCode::kInvalidCall, "kd strategy needs a teacher model");
    if (teacher_->spec().num_classes != student_.spec().num_classes) {
      throw Error(ErrorCode::kInvalidPairing, "teacher and student class counts differ");
    }
  }
  if (uses_sp(config_.strategy)) {
    mu_ = config_.mu > 0.0 ? config_.mu
                           : decay_per_step(config_.delta0, config_.full_quant_fraction, total_steps());
    state_.delta = config_.delta0;
  }
  begin_stage();
}

std::int64_t Trainer::total_steps() const {
  std::int64_t epochs = 0;
  for (const auto& s : schedule_) epochs += s.epochs;
  return epochs * static_cast<std::int64_t>(train_.batches_per_epoch());
}

bool Trainer::done() const { return state_.stage >= static_cast<int>(schedule_.size()); }

void Trainer::skip_empty_stages() {
  while (!done() && schedule_[state_.stage].epochs == 0) ++state_.stage;
}

bool Trainer::stage_uses_sp() const { return uses_sp(config_.strategy); }

void Trainer::begin_stage() {
  skip_empty_stages();
  student_opt_ = std::make_unique<Optimizer>(student_.parameters(), options_.student_optimizer);
  teacher_opt_.reset();
  if (uses_kd(config_.strategy) && !config_.teacher_frozen) {
    teacher_opt_ = std::make_unique<Optimizer>(teacher_->parameters(), options_.teacher_optimizer);
  }
  apply_stage_lr();
}

void Trainer::apply_stage_lr() {
  if (done()) return;
  student_opt_->set_learning_rate(
      options_.lr_schedule.at(options_.student_optimizer.learning_rate, state_.epoch_in_stage));
  if (teacher_opt_) {
    teacher_opt_->set_learning_rate(
        options_.lr_schedule.at(options_.teacher_optimizer.learning_rate, state_.epoch_in_stage));
  }
}

void Trainer::restore(const TrainerState& state) {
  if (state.stage < 0 || state.stage > static_cast<int>(schedule_.size())) {
    throw Error(ErrorCode::kInvalidState, "trainer stage out of range");
  }
  state_ = state;
  begin_stage();
}

std::optional<EpochSummary> Trainer::step() {
  if (done()) throw Error(ErrorCode::kInvalidCall, "trainer already finished");
  const Stage& stage = schedule_[state_.stage];
  apply_stage_lr();
  Batch batch = train_.batch(state_.global_epoch, static_cast<std::size_t>(state_.batch));

  StepTrace trace;
  trace.delta = state_.delta;
  if (stage_uses_sp()) {
    std::mt19937_64 rng(derive_seed(options_.seed, {kStreamIndicator, static_cast<std::uint64_t>(state_.global_step)}));
    auto draw = install_sp_mask(student_, state_.delta, rng, stage.precision, config_.randomize_wa);
    trace.sampled = draw.sampled;
    trace.fully_quantized = fully_quantized(student_, draw);
  } else {
    apply_precision(student_, uniform_mask(student_, stage.precision));
    trace.fully_quantized = true;
  }

  if (uses_kd(config_.strategy)) {
    KdSettings settings;
    settings.mode = config_.kd_mode;
    settings.lambda = config_.lambda;
    settings.beta = config_.beta;
    settings.taps = config_.taps;
    settings.hint_bits = stage.precision.activation_bits;
    auto r = kd_joint_step(*teacher_, student_, batch, settings, teacher_opt_.get(), *student_opt_);
    state_.loss_sum += r.student_ce;
    state_.distill_sum += r.student_distill;
    state_.teacher_sum += r.teacher_loss;
  } else {
    auto r = plain_train_step(student_, batch, *student_opt_);
    state_.loss_sum += r.loss;
  }
  if (stage_uses_sp()) state_.delta = next_delta(state_.delta, mu_);
  if (options_.trace_steps) trace_.push_back(trace);

  ++state_.global_step;
  ++state_.batch;
  const auto per_epoch = static_cast<std::int64_t>(train_.batches_per_epoch());
  if (state_.batch < per_epoch) return std::nullopt;

  EpochSummary summary;
  summary.epoch = state_.global_epoch + 1;
  summary.stage = state_.stage + 1;
  summary.precision = stage.precision;
  summary.delta = state_.delta;
  summary.train_loss = state_.loss_sum / static_cast<double>(per_epoch);
  summary.distill_loss = state_.distill_sum / static_cast<double>(per_epoch);
  summary.teacher_loss = state_.teacher_sum / static_cast<double>(per_epoch);
  state_.loss_sum = state_.distill_sum = state_.teacher_sum = 0.0;

  state_.batch = 0;
  ++state_.global_epoch;
  if (++state_.epoch_in_stage >= stage.epochs) {
    state_.epoch_in_stage = 0;
    ++state_.stage;
    begin_stage();
  }
  return summary;
}

void Trainer::run(const std::function<void(const EpochSummary&)>& on_epoch,
                  const std::function<void(int stage)>& on_stage_end) {
  while (!done()) {
    const int stage = state_.stage;
    auto summary = step();
    if (!summary) continue;
    if (on_epoch) on_epoch(*summary);
    if (on_stage_end && state_.stage != stage) on_stage_end(stage + 1);
  }
}

}  // namespace qat
