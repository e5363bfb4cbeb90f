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

// Command-line front end: train, eval, report, selftest.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qat/checks.hpp"
#include "qat/error.hpp"
#include "qat/experiment.hpp"
#include "qat/report.hpp"

namespace {

std::optional<qat::Precision> parse_bits(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw qat::Error(qat::ErrorCode::kConfig, "--bits expects W,A");
  qat::Precision p{std::stoi(text.substr(0, comma)), std::stoi(text.substr(comma + 1))};
  if (!qat::is_supported_bits(p.weight_bits) || !qat::is_supported_bits(p.activation_bits)) {
    throw qat::Error(qat::ErrorCode::kConfig, "unsupported bit-width in --bits " + text);
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantization-aware training toolkit"};
  app.require_subcommand(1);

  std::string config_path, resume;
  std::int64_t stop_after = -1;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Run the experiment described by a config file");
  train->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "Continue from a checkpoint of an interrupted run");
  train->add_option("--stop-after", stop_after, "Stop after N optimizer steps and write interrupt.ckpt");
  train->add_flag("--quiet", quiet, "No per-epoch output");

  std::string ckpt_path, dataset, bits, data_path;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "synthetic, cifar10 or mnist (default: the training dataset)");
  eval->add_option("--bits", bits, "Uniform W,A override, e.g. 4,4");
  eval->add_option("--data-path", data_path, "Dataset directory");

  std::vector<std::string> csvs;
  std::string out_dir = "report";
  auto* report = app.add_subcommand("report", "Summarize metrics files");
  report->add_option("csv", csvs, "Metrics CSV files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out_dir, "Output directory");

  auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      qat::RunOptions opts;
      opts.resume_from = resume;
      opts.stop_after_steps = stop_after;
      opts.verbose = !quiet;
      auto result = qat::run_experiment_file(config_path, opts);
      std::printf("metrics: %s\n", result.metrics_path.c_str());
      for (const auto& s : result.stage_checkpoints) std::printf("stage checkpoint: %s\n", s.c_str());
      if (!result.final_checkpoint.empty()) std::printf("final checkpoint: %s\n", result.final_checkpoint.c_str());
      if (!result.interrupt_checkpoint.empty()) {
        std::printf("interrupted, resume with: %s\n", result.interrupt_checkpoint.c_str());
      }
    } else if (*eval) {
      auto r = qat::evaluate_checkpoint(ckpt_path, dataset.empty() ? std::nullopt : std::optional(dataset),
                                        parse_bits(bits),
                                        data_path.empty() ? std::nullopt : std::optional(data_path));
      std::printf("top1 %.4f\ntop5 %.4f\n", r.top1, r.top5);
    } else if (*report) {
      auto r = qat::emit_report(csvs, out_dir);
      std::printf("%s", qat::render_table(r.rows).c_str());
      std::printf("table: %s\n", r.table_path.c_str());
      for (const auto& c : r.chart_paths) std::printf("chart: %s\n", c.c_str());
    } else if (*selftest) {
      bool ok = true;
      for (const auto& c : qat::run_selftest()) {
        std::printf("%s %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
        ok = ok && c.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const qat::Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", qat::to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
