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

#include "qat/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qat/error.hpp"

namespace qat {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

[[noreturn]] void parse_fail(const std::string& source, int line, const std::string& what) {
  throw Error(ErrorCode::kParse, source + ":" + std::to_string(line) + ": " + what);
}

int to_int(const std::string& s, const std::string& source, int line, const char* column) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    parse_fail(source, line, std::string("column ") + column + " is not an integer: '" + s + "'");
  }
  return v;
}

double to_double(const std::string& s, const std::string& source, int line, const char* column) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    parse_fail(source, line, std::string("column ") + column + " is not a number: '" + s + "'");
  }
  return v;
}

}  // namespace

const std::string& metrics_header() {
  static const std::string header =
      "epoch,stage,weight_bits,activation_bits,delta,train_loss,distill_loss,test_top1,test_top5,wall_seconds,network";
  return header;
}

std::string format_metrics_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.6f,%.6f,%.6f,%.4f,%.4f,%.3f,", r.epoch, r.stage, r.weight_bits,
                r.activation_bits, r.delta, r.train_loss, r.distill_loss, r.test_top1, r.test_top5, r.wall_seconds);
  return buf + r.network;
}

std::vector<MetricsRecord> parse_metrics(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != metrics_header()) parse_fail(source, line_no, "unexpected header");
      continue;
    }
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != 11) {
      parse_fail(source, line_no, "expected 11 columns, found " + std::to_string(cells.size()));
    }
    MetricsRecord r;
    r.epoch = to_int(cells[0], source, line_no, "epoch");
    r.stage = to_int(cells[1], source, line_no, "stage");
    r.weight_bits = to_int(cells[2], source, line_no, "weight_bits");
    r.activation_bits = to_int(cells[3], source, line_no, "activation_bits");
    r.delta = to_double(cells[4], source, line_no, "delta");
    r.train_loss = to_double(cells[5], source, line_no, "train_loss");
    r.distill_loss = to_double(cells[6], source, line_no, "distill_loss");
    r.test_top1 = to_double(cells[7], source, line_no, "test_top1");
    r.test_top5 = to_double(cells[8], source, line_no, "test_top5");
    r.wall_seconds = to_double(cells[9], source, line_no, "wall_seconds");
    r.network = cells[10];
    if (r.network != "student" && r.network != "teacher") {
      parse_fail(source, line_no, "unknown network '" + r.network + "'");
    }
    out.push_back(r);
  }
  if (line_no == 0) parse_fail(source, 1, "missing header");
  return out;
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open metrics '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metrics(ss.str(), path);
}

MetricsWriter::MetricsWriter(std::string path) : MetricsWriter(std::move(path), true) {}

MetricsWriter MetricsWriter::reopen(std::string path) { return MetricsWriter(std::move(path), false); }

MetricsWriter::MetricsWriter(std::string path, bool truncate) : path_(std::move(path)) {
  if (!truncate) return;
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write metrics '" + path_ + "'");
  out << metrics_header() << '\n';
}

void MetricsWriter::append(const MetricsRecord& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorCode::kIo, "cannot append to metrics '" + path_ + "'");
  out << format_metrics_row(record) << '\n';
  out.flush();
}

}  // namespace qat
