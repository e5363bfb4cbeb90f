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

namespace qat {

/// One row per epoch per network. Epoch 0 is the evaluation before
/// training and carries the first stage's bit-widths.
struct MetricsRecord {
  int epoch = 0;
  int stage = 0;
  int weight_bits = 32;
  int activation_bits = 32;
  double delta = 0.0;
  double train_loss = 0.0;
  double distill_loss = 0.0;
  double test_top1 = 0.0;
  double test_top5 = 0.0;
  double wall_seconds = 0.0;
  std::string network = "student";  // student | teacher
};

const std::string& metrics_header();
std::string format_metrics_row(const MetricsRecord& record);

/// Parses a metrics CSV. Malformed content raises a parse error naming the
/// 1-based line.
std::vector<MetricsRecord> parse_metrics(const std::string& text, const std::string& source = "<metrics>");
std::vector<MetricsRecord> read_metrics(const std::string& path);

/// Append-only writer: every row is flushed and the file closed before
/// returning, so a crash leaves only complete rows.
class MetricsWriter {
 public:
  /// Truncates `path` and writes the header.
  explicit MetricsWriter(std::string path);
  /// Keeps the existing header and rows.
  static MetricsWriter reopen(std::string path);

  void append(const MetricsRecord& record);
  const std::string& path() const { return path_; }

 private:
  MetricsWriter(std::string path, bool truncate);
  std::string path_;
};

}  // namespace qat
