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

#include "qat/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>

#include "qat/checkpoint.hpp"
#include "qat/error.hpp"
#include "qat/rng.hpp"

namespace fs = std::filesystem;

namespace qat {
namespace {

// Fixed so that evaluation results never depend on the training batch size.
constexpr int kEvalBatch = 250;

Dataset load_split(const ExperimentConfig& config, Split split) {
  const auto& d = config.dataset;
  Dataset out;
  if (d.name == "synthetic") {
    SyntheticSpec spec = d.synthetic;
    spec.num_classes = config.model.num_classes;
    auto [train, test] = make_synthetic(spec);
    out = split == Split::kTrain ? std::move(train) : std::move(test);
  } else {
    const std::string dir = config.dataset_path();
    if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "dataset directory '" + dir + "' not found");
    if (d.name == "cifar10") {
      out = load_cifar10(dir, split);
    } else {
      const std::string pre = split == Split::kTrain ? "/train" : "/t10k";
      out = load_idx(dir + pre + "-images-idx3-ubyte", dir + pre + "-labels-idx1-ubyte", split);
    }
  }
  return take_prefix(out, split == Split::kTrain ? d.train_subset : d.test_subset);
}

Model make_teacher(const ExperimentConfig& config, const ModelSpec& spec, const Model& student) {
  Model teacher = config.strategy.teacher_init == TeacherInit::kScratch
                      ? build_model(spec, derive_seed(config.seed, {kStreamTeacherInit}))
                      : student.clone();
  if (config.strategy.teacher_init == TeacherInit::kPretrained) {
    const std::string& src = !config.teacher_checkpoint.empty() ? config.teacher_checkpoint : config.init_checkpoint;
    if (!src.empty()) get_model(CheckpointData::load(src), "model/", teacher, false);
  }
  apply_precision(teacher, uniform_mask(teacher, Precision{}));
  return teacher;
}

std::string config_identity(ExperimentConfig config) {
  config.output_dir.clear();
  return format_config(config);
}

}  // namespace

DataSplits load_datasets(const ExperimentConfig& config) {
  DataSplits out{load_split(config, Split::kTrain), load_split(config, Split::kTest)};
  if (out.train.size() == 0 || out.test.size() == 0) throw Error(ErrorCode::kIo, "dataset split is empty");
  out.train.pixel_mean = compute_pixel_mean(out.train);
  out.test.pixel_mean = out.train.pixel_mean;
  return out;
}

ModelSpec resolved_model_spec(const ExperimentConfig& config, const Dataset& train) {
  ModelSpec spec = config.model;
  if (train.height != train.width) throw Error(ErrorCode::kInvalidShape, "only square images are supported");
  spec.in_channels = train.channels;
  spec.image_size = train.height;
  spec.validate();
  return spec;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  auto wall = [&] {
    if (!config.wall_clock) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  fs::create_directories(config.output_dir);
  DataSplits data = load_datasets(config);
  const ModelSpec spec = resolved_model_spec(config, data.train);

  Model student = build_model(spec, derive_seed(config.seed, {kStreamInit}));
  if (!config.init_checkpoint.empty()) get_model(CheckpointData::load(config.init_checkpoint), "model/", student, false);
  std::optional<Model> teacher;
  if (uses_kd(config.strategy.strategy)) teacher.emplace(make_teacher(config, spec, student));

  StrategyConfig strategy = config.strategy;
  if (uses_kd(strategy.strategy) && strategy.kd_mode == KdMode::kHint) strategy.taps = resolve_taps(config.taps, student);

  const AugmentPolicy policy = config.dataset.augment ? AugmentPolicy::train() : AugmentPolicy::identity();
  Loader train_loader(data.train, config.batch_size, config.seed, policy, spec.input_bits(), true);
  Loader test_loader(data.test, kEvalBatch, config.seed, AugmentPolicy::identity(), spec.input_bits(), false);

  TrainerOptions topts;
  topts.student_optimizer = config.student_optimizer();
  topts.teacher_optimizer = config.teacher_optimizer();
  topts.lr_schedule = config.lr_schedule;
  topts.seed = config.seed;
  Trainer trainer(student, teacher ? &*teacher : nullptr, train_loader, strategy, topts);

  ExperimentResult result;
  result.metrics_path = (fs::path(config.output_dir) / "metrics.csv").string();

  auto save = [&](const std::string& name) {
    CheckpointData ckpt;
    put_model(ckpt, "model/", student);
    put_optimizer(ckpt, "opt/student/", trainer.student_optimizer());
    if (teacher) {
      put_model(ckpt, "teacher/", *teacher);
      if (trainer.teacher_optimizer()) put_optimizer(ckpt, "opt/teacher/", *trainer.teacher_optimizer());
    }
    put_trainer_state(ckpt, trainer.state());
    ckpt.put_text("meta/config", format_config(config));
    ckpt.put_f32("data/pixel_mean", {static_cast<std::int64_t>(data.train.pixel_mean.size())}, data.train.pixel_mean);
    const std::string path = (fs::path(config.output_dir) / name).string();
    ckpt.save(path);
    return path;
  };

  auto eval_at = [&](Model& model, Precision precision) {
    const PrecisionMask saved = model.mask();
    apply_precision(model, uniform_mask(model, precision));
    EvalResult r = evaluate(model, test_loader);
    apply_precision(model, saved);
    return r;
  };

  auto emit = [&](MetricsWriter& writer, const MetricsRecord& rec) {
    writer.append(rec);
    result.records.push_back(rec);
  };

  auto write_rows = [&](MetricsWriter& writer, int epoch, int stage, Precision precision, double delta,
                        double train_loss, double distill_loss, double teacher_loss) {
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.stage = stage;
    rec.weight_bits = precision.weight_bits;
    rec.activation_bits = precision.activation_bits;
    rec.delta = delta;
    rec.train_loss = train_loss;
    rec.distill_loss = distill_loss;
    const EvalResult ev = eval_at(student, precision);
    rec.test_top1 = ev.top1;
    rec.test_top5 = ev.top5;
    rec.wall_seconds = wall();
    emit(writer, rec);
    if (teacher) {
      MetricsRecord trec = rec;
      trec.weight_bits = trec.activation_bits = kFullPrecision;
      trec.train_loss = teacher_loss;
      trec.distill_loss = 0.0;
      trec.delta = 0.0;
      const EvalResult tev = eval_at(*teacher, Precision{});
      trec.test_top1 = tev.top1;
      trec.test_top5 = tev.top5;
      trec.network = "teacher";
      emit(writer, trec);
    }
    if (options.verbose) {
      std::printf("epoch %3d stage %d W%d/A%d delta %.3f loss %.4f top1 %.2f%s\n", epoch, stage,
                  precision.weight_bits, precision.activation_bits, delta, train_loss, rec.test_top1,
                  teacher ? (" teacher " + std::to_string(result.records.back().test_top1)).c_str() : "");
      std::fflush(stdout);
    }
  };

  std::optional<MetricsWriter> writer;
  if (!options.resume_from.empty()) {
    const CheckpointData ckpt = CheckpointData::load(options.resume_from);
    if (config_identity(parse_config(ckpt.text("meta/config"))) != config_identity(config)) {
      throw Error(ErrorCode::kCheckpoint, "resume checkpoint was written by a different configuration");
    }
    get_model(ckpt, "model/", student);
    if (teacher) get_model(ckpt, "teacher/", *teacher);
    const TrainerState state = get_trainer_state(ckpt);
    trainer.restore(state);
    get_optimizer(ckpt, "opt/student/", trainer.student_optimizer());
    if (trainer.teacher_optimizer()) get_optimizer(ckpt, "opt/teacher/", *trainer.teacher_optimizer());
    // Keep rows of completed epochs only.
    std::vector<MetricsRecord> kept;
    if (fs::exists(result.metrics_path)) {
      for (const auto& r : read_metrics(result.metrics_path)) {
        if (r.epoch <= state.global_epoch) kept.push_back(r);
      }
    }
    writer.emplace(result.metrics_path);
    for (const auto& r : kept) emit(*writer, r);
  } else {
    writer.emplace(result.metrics_path);
    const auto& schedule = trainer.schedule();
    const Precision first = schedule.empty() ? Precision{} : schedule.front().precision;
    write_rows(*writer, 0, 1, first, uses_sp(strategy.strategy) ? strategy.delta0 : 0.0, 0.0, 0.0, 0.0);
  }

  const bool multi_stage = trainer.schedule().size() > 1;
  while (!trainer.done()) {
    if (options.stop_after_steps >= 0 && trainer.state().global_step >= options.stop_after_steps) {
      result.interrupt_checkpoint = save("interrupt.ckpt");
      return result;
    }
    const int stage_before = trainer.state().stage;
    auto summary = trainer.step();
    if (summary) {
      write_rows(*writer, summary->epoch, summary->stage, summary->precision, summary->delta, summary->train_loss,
                 summary->distill_loss, summary->teacher_loss);
    }
    if (trainer.state().stage != stage_before && multi_stage && config.stage_checkpoints) {
      result.stage_checkpoints.push_back(save("stage" + std::to_string(stage_before + 1) + ".ckpt"));
    }
  }
  result.final_checkpoint = save("final.ckpt");
  return result;
}

ExperimentResult run_experiment_file(const std::string& config_path, const RunOptions& options) {
  return run_experiment(load_config(config_path), options);
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::optional<std::string>& dataset,
                               const std::optional<Precision>& bits, const std::optional<std::string>& data_path) {
  const CheckpointData ckpt = CheckpointData::load(checkpoint_path);
  ExperimentConfig config = parse_config(ckpt.text("meta/config"));
  const bool same_dataset = !dataset || *dataset == config.dataset.name;
  if (!same_dataset) {
    config.dataset.name = *dataset;
    config.dataset.path.clear();
    config.dataset.train_subset = config.dataset.test_subset = 0;
  }
  if (data_path) config.dataset.path = *data_path;
  config.model.validate();

  Dataset test;
  if (same_dataset) {
    test = load_split(config, Split::kTest);
    test.pixel_mean = ckpt.f32("data/pixel_mean");
  } else {
    DataSplits splits = load_datasets(config);
    test = std::move(splits.test);
  }

  Model model = model_from_checkpoint(ckpt, "model/");
  if (test.channels != model.spec().in_channels || test.height != model.spec().image_size) {
    throw Error(ErrorCode::kInvalidShape, "dataset geometry does not match the checkpointed architecture");
  }
  if (test.pixel_mean.size() != test.image_numel()) {
    throw Error(ErrorCode::kCheckpoint, "stored pixel mean does not match the dataset");
  }
  if (bits) apply_precision(model, uniform_mask(model, *bits));
  Loader loader(test, kEvalBatch, config.seed, AugmentPolicy::identity(), model.spec().input_bits(), false);
  return evaluate(model, loader);
}

}  // namespace qat
