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

#include <string>
#include <vector>

#include "qat/metrics.hpp"

namespace qat {

struct RunSummary {
  std::string name;
  std::string path;
  int epochs = 0;
  double final_top1 = 0.0;
  double best_top1 = 0.0;
  /// best_top1 minus the first row's best_top1.
  double delta_best = 0.0;
};

struct Report {
  std::vector<RunSummary> rows;  // sorted by name
  std::string table_path;
  std::vector<std::string> chart_paths;
};

/// Run name of a metrics file: the file stem, or the parent directory's
/// name when the stem is "metrics".
std::string run_name(const std::string& csv_path);

/// Student rows drive the summary. Rows are sorted by name.
std::vector<RunSummary> summarize_runs(const std::vector<std::string>& csv_paths);

std::string render_table(const std::vector<RunSummary>& rows);

/// Standalone SVG of top-1 versus epoch, one polyline per network.
std::string render_chart(const std::string& title, const std::vector<MetricsRecord>& records);

/// Writes summary.md and one <run>.svg per input into `out_dir`.
Report emit_report(const std::vector<std::string>& csv_paths, const std::string& out_dir);

}  // namespace qat
