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

#include "qat/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "qat/error.hpp"

namespace fs = std::filesystem;

namespace qat {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::string num(double v, const char* fmt = "%.2f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
}

}  // namespace

std::string run_name(const std::string& csv_path) {
  fs::path p(csv_path);
  std::string stem = p.stem().string();
  if (stem == "metrics" && p.has_parent_path()) {
    auto parent = p.parent_path().filename().string();
    if (!parent.empty() && parent != "." && parent != "..") return parent;
  }
  return stem;
}

std::vector<RunSummary> summarize_runs(const std::vector<std::string>& csv_paths) {
  if (csv_paths.empty()) throw Error(ErrorCode::kInvalidCall, "report needs at least one metrics file");
  std::vector<RunSummary> rows;
  for (const auto& path : csv_paths) {
    auto records = read_metrics(path);
    RunSummary s;
    s.name = run_name(path);
    s.path = path;
    bool any = false;
    for (const auto& r : records) {
      if (r.network != "student") continue;
      s.epochs = std::max(s.epochs, r.epoch);
      s.best_top1 = any ? std::max(s.best_top1, r.test_top1) : r.test_top1;
      s.final_top1 = r.test_top1;
      any = true;
    }
    if (!any) throw Error(ErrorCode::kParse, path + ": no student rows");
    rows.push_back(s);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const RunSummary& a, const RunSummary& b) { return a.name < b.name; });
  for (auto& r : rows) r.delta_best = r.best_top1 - rows.front().best_top1;
  return rows;
}

std::string render_table(const std::vector<RunSummary>& rows) {
  std::string out = "| run | epochs | final top-1 | best top-1 | delta best |\n";
  out += "|---|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    out += "| " + r.name + " | " + std::to_string(r.epochs) + " | " + num(r.final_top1) + " | " + num(r.best_top1) +
           " | " + num(r.delta_best, "%+.2f") + " |\n";
  }
  return out;
}

std::string render_chart(const std::string& title, const std::vector<MetricsRecord>& records) {
  int max_epoch = 0;
  for (const auto& r : records) max_epoch = std::max(max_epoch, r.epoch);
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;
  auto x_of = [&](int epoch) { return kLeft + (max_epoch > 0 ? plot_w * epoch / max_epoch : 0.0); };
  auto y_of = [&](double top1) { return kTop + plot_h * (1.0 - top1 / 100.0); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth, "%.0f") + "\" height=\"" +
                    num(kHeight, "%.0f") + "\" data-epochs=\"" + std::to_string(max_epoch) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kWidth / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" + escape(title) + "</text>\n";
  // Axes.
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + plot_h) + "\" x2=\"" + num(kLeft + plot_w) + "\" y2=\"" +
         num(kTop + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(kLeft) + "\" y2=\"" +
         num(kTop + plot_h) + "\" stroke=\"black\"/>\n";
  for (int pct = 0; pct <= 100; pct += 20) {
    svg += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y_of(pct) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + std::to_string(pct) + "</text>\n";
  }
  const int step = std::max(1, max_epoch / 10);
  for (int e = 0; e <= max_epoch; e += step) {
    svg += "<text x=\"" + num(x_of(e)) + "\" y=\"" + num(kTop + plot_h + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + std::to_string(e) + "</text>\n";
  }
  svg += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(kHeight - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  svg += "<text x=\"16\" y=\"" + num(kTop + plot_h / 2) + "\" transform=\"rotate(-90 16 " + num(kTop + plot_h / 2) +
         ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">test top-1 (%)</text>\n";

  const std::pair<const char*, const char*> series[] = {{"student", "#1f77b4"}, {"teacher", "#d62728"}};
  for (const auto& [network, color] : series) {
    std::string points;
    for (const auto& r : records) {
      if (r.network != network) continue;
      points += (points.empty() ? "" : " ") + num(x_of(r.epoch)) + "," + num(y_of(r.test_top1));
    }
    if (points.empty()) continue;
    svg += "<polyline class=\"" + std::string(network) + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

Report emit_report(const std::vector<std::string>& csv_paths, const std::string& out_dir) {
  Report report;
  report.rows = summarize_runs(csv_paths);
  fs::create_directories(out_dir);
  report.table_path = (fs::path(out_dir) / "summary.md").string();
  write_file(report.table_path, render_table(report.rows));
  for (const auto& row : report.rows) {
    auto path = (fs::path(out_dir) / (row.name + ".svg")).string();
    write_file(path, render_chart(row.name, read_metrics(row.path)));
    report.chart_paths.push_back(path);
  }
  return report;
}

}  // namespace qat
