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

#include "qat/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "qat/error.hpp"

namespace qat {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(ErrorCode::kConfig, "config key '" + key + "': " + why + " (got '" + value + "')");
}

template <typename I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
  return out;
}

// Shortest text that reads back to the same value of the field's own type.
template <typename T>
std::string fmt_double(T v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// Wraps library parse errors so the message names the key.
template <typename F>
auto named(const std::string& key, const std::string& value, F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    bad_value(key, value, e.what());
  }
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  using S = std::string;
  static const std::vector<Field> table = {
      {"seed", [](C& c, const S& v) { c.seed = parse_int<std::uint64_t>("seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"output_dir", [](C& c, const S& v) { c.output_dir = v; }, [](const C& c) { return c.output_dir; }},
      {"epochs", [](C& c, const S& v) { c.strategy.epochs = parse_int<int>("epochs", v); },
       [](const C& c) { return std::to_string(c.strategy.epochs); }},
      {"batch_size", [](C& c, const S& v) { c.batch_size = parse_int<int>("batch_size", v); },
       [](const C& c) { return std::to_string(c.batch_size); }},

      {"dataset.name", [](C& c, const S& v) { c.dataset.name = v; }, [](const C& c) { return c.dataset.name; }},
      {"dataset.path", [](C& c, const S& v) { c.dataset.path = v; }, [](const C& c) { return c.dataset.path; }},
      {"dataset.train_subset",
       [](C& c, const S& v) { c.dataset.train_subset = parse_int<std::size_t>("dataset.train_subset", v); },
       [](const C& c) { return std::to_string(c.dataset.train_subset); }},
      {"dataset.test_subset",
       [](C& c, const S& v) { c.dataset.test_subset = parse_int<std::size_t>("dataset.test_subset", v); },
       [](const C& c) { return std::to_string(c.dataset.test_subset); }},
      {"dataset.augment", [](C& c, const S& v) { c.dataset.augment = parse_bool("dataset.augment", v); },
       [](const C& c) { return fmt_bool(c.dataset.augment); }},
      {"dataset.synthetic.train_size",
       [](C& c, const S& v) { c.dataset.synthetic.train_size = parse_int<int>("dataset.synthetic.train_size", v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.train_size); }},
      {"dataset.synthetic.test_size",
       [](C& c, const S& v) { c.dataset.synthetic.test_size = parse_int<int>("dataset.synthetic.test_size", v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.test_size); }},
      {"dataset.synthetic.image_size",
       [](C& c, const S& v) { c.dataset.synthetic.image_size = parse_int<int>("dataset.synthetic.image_size", v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.image_size); }},
      {"dataset.synthetic.channels",
       [](C& c, const S& v) { c.dataset.synthetic.channels = parse_int<int>("dataset.synthetic.channels", v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.channels); }},
      {"dataset.synthetic.noise",
       [](C& c, const S& v) {
         c.dataset.synthetic.noise = static_cast<float>(parse_double("dataset.synthetic.noise", v));
       },
       [](const C& c) { return fmt_double(c.dataset.synthetic.noise); }},
      {"dataset.synthetic.confusion",
       [](C& c, const S& v) {
         c.dataset.synthetic.confusion = static_cast<float>(parse_double("dataset.synthetic.confusion", v));
       },
       [](const C& c) { return fmt_double(c.dataset.synthetic.confusion); }},

      {"dataset.synthetic.seed",
       [](C& c, const S& v) { c.dataset.synthetic.seed = parse_int<std::uint64_t>("dataset.synthetic.seed", v); },
       [](const C& c) { return std::to_string(c.dataset.synthetic.seed); }},

      {"model.architecture",
       [](C& c, const S& v) {
         c.model.architecture = named("model.architecture", v, [&] { return parse_architecture(v); });
       },
       [](const C& c) { return S(to_string(c.model.architecture)); }},
      {"model.widths", [](C& c, const S& v) { c.model.stage_widths = parse_int_list("model.widths", v); },
       [](const C& c) { return fmt_list(c.model.stage_widths); }},
      {"model.blocks_per_stage",
       [](C& c, const S& v) { c.model.blocks_per_stage = parse_int<int>("model.blocks_per_stage", v); },
       [](const C& c) { return std::to_string(c.model.blocks_per_stage); }},
      {"model.num_classes", [](C& c, const S& v) { c.model.num_classes = parse_int<int>("model.num_classes", v); },
       [](const C& c) { return std::to_string(c.model.num_classes); }},
      {"model.quantize_first_last",
       [](C& c, const S& v) { c.model.quantize_first_last = parse_bool("model.quantize_first_last", v); },
       [](const C& c) { return fmt_bool(c.model.quantize_first_last); }},
      {"model.granularity",
       [](C& c, const S& v) {
         c.model.granularity = named("model.granularity", v, [&] { return parse_granularity(v); });
       },
       [](const C& c) { return S(to_string(c.model.granularity)); }},

      {"strategy.name",
       [](C& c, const S& v) { c.strategy.strategy = named("strategy.name", v, [&] { return parse_strategy(v); }); },
       [](const C& c) { return S(to_string(c.strategy.strategy)); }},
      {"strategy.weight_bits",
       [](C& c, const S& v) { c.strategy.weight_bits = parse_int<int>("strategy.weight_bits", v); },
       [](const C& c) { return std::to_string(c.strategy.weight_bits); }},
      {"strategy.activation_bits",
       [](C& c, const S& v) { c.strategy.activation_bits = parse_int<int>("strategy.activation_bits", v); },
       [](const C& c) { return std::to_string(c.strategy.activation_bits); }},
      {"strategy.high_bits", [](C& c, const S& v) { c.strategy.high_bits = parse_int<int>("strategy.high_bits", v); },
       [](const C& c) { return std::to_string(c.strategy.high_bits); }},
      {"strategy.bit_sequence",
       [](C& c, const S& v) { c.strategy.bit_sequence = parse_int_list("strategy.bit_sequence", v); },
       [](const C& c) { return fmt_list(c.strategy.bit_sequence); }},
      {"strategy.epochs_per_stage",
       [](C& c, const S& v) { c.strategy.epochs_per_stage = parse_int<int>("strategy.epochs_per_stage", v); },
       [](const C& c) { return std::to_string(c.strategy.epochs_per_stage); }},
      {"strategy.delta0", [](C& c, const S& v) { c.strategy.delta0 = parse_double("strategy.delta0", v); },
       [](const C& c) { return fmt_double(c.strategy.delta0); }},
      {"strategy.mu", [](C& c, const S& v) { c.strategy.mu = parse_double("strategy.mu", v); },
       [](const C& c) { return fmt_double(c.strategy.mu); }},
      {"strategy.full_quant_fraction",
       [](C& c, const S& v) { c.strategy.full_quant_fraction = parse_double("strategy.full_quant_fraction", v); },
       [](const C& c) { return fmt_double(c.strategy.full_quant_fraction); }},
      {"strategy.randomize_wa",
       [](C& c, const S& v) { c.strategy.randomize_wa = parse_bool("strategy.randomize_wa", v); },
       [](const C& c) { return fmt_bool(c.strategy.randomize_wa); }},
      {"strategy.kd_mode",
       [](C& c, const S& v) { c.strategy.kd_mode = named("strategy.kd_mode", v, [&] { return parse_kd_mode(v); }); },
       [](const C& c) { return S(to_string(c.strategy.kd_mode)); }},
      {"strategy.lambda",
       [](C& c, const S& v) { c.strategy.lambda = static_cast<float>(parse_double("strategy.lambda", v)); },
       [](const C& c) { return fmt_double(c.strategy.lambda); }},
      {"strategy.beta",
       [](C& c, const S& v) { c.strategy.beta = static_cast<float>(parse_double("strategy.beta", v)); },
       [](const C& c) { return fmt_double(c.strategy.beta); }},
      {"strategy.taps", [](C& c, const S& v) { c.taps = v; }, [](const C& c) { return c.taps; }},
      {"strategy.teacher_init",
       [](C& c, const S& v) {
         c.strategy.teacher_init = named("strategy.teacher_init", v, [&] { return parse_teacher_init(v); });
       },
       [](const C& c) {
         return S(c.strategy.teacher_init == TeacherInit::kPretrained ? "pretrained" : "scratch");
       }},
      {"strategy.teacher_frozen",
       [](C& c, const S& v) { c.strategy.teacher_frozen = parse_bool("strategy.teacher_frozen", v); },
       [](const C& c) { return fmt_bool(c.strategy.teacher_frozen); }},
      {"strategy.student_lr",
       [](C& c, const S& v) {
         c.student_lr = v == "auto" ? std::nullopt
                                    : std::optional<float>(static_cast<float>(parse_double("strategy.student_lr", v)));
       },
       [](const C& c) { return c.student_lr ? fmt_double(*c.student_lr) : S("auto"); }},
      {"strategy.teacher_lr",
       [](C& c, const S& v) {
         c.teacher_lr = v == "auto" ? std::nullopt
                                    : std::optional<float>(static_cast<float>(parse_double("strategy.teacher_lr", v)));
       },
       [](const C& c) { return c.teacher_lr ? fmt_double(*c.teacher_lr) : S("auto"); }},
      {"strategy.init_checkpoint", [](C& c, const S& v) { c.init_checkpoint = v; },
       [](const C& c) { return c.init_checkpoint; }},
      {"strategy.teacher_checkpoint", [](C& c, const S& v) { c.teacher_checkpoint = v; },
       [](const C& c) { return c.teacher_checkpoint; }},

      {"optimizer.kind",
       [](C& c, const S& v) {
         c.optimizer_kind = v == "auto" ? std::nullopt
                                        : std::optional<OptimizerKind>(named(
                                              "optimizer.kind", v, [&] { return parse_optimizer_kind(v); }));
       },
       [](const C& c) { return c.optimizer_kind ? S(to_string(*c.optimizer_kind)) : S("auto"); }},
      {"optimizer.momentum",
       [](C& c, const S& v) { c.optimizer.momentum = static_cast<float>(parse_double("optimizer.momentum", v)); },
       [](const C& c) { return fmt_double(c.optimizer.momentum); }},
      {"optimizer.weight_decay",
       [](C& c, const S& v) {
         c.optimizer.weight_decay = static_cast<float>(parse_double("optimizer.weight_decay", v));
       },
       [](const C& c) { return fmt_double(c.optimizer.weight_decay); }},
      {"optimizer.beta1",
       [](C& c, const S& v) { c.optimizer.beta1 = static_cast<float>(parse_double("optimizer.beta1", v)); },
       [](const C& c) { return fmt_double(c.optimizer.beta1); }},
      {"optimizer.beta2",
       [](C& c, const S& v) { c.optimizer.beta2 = static_cast<float>(parse_double("optimizer.beta2", v)); },
       [](const C& c) { return fmt_double(c.optimizer.beta2); }},
      {"optimizer.eps", [](C& c, const S& v) { c.optimizer.eps = static_cast<float>(parse_double("optimizer.eps", v)); },
       [](const C& c) { return fmt_double(c.optimizer.eps); }},

      {"lr.milestones", [](C& c, const S& v) { c.lr_schedule.milestones = parse_int_list("lr.milestones", v); },
       [](const C& c) { return fmt_list(c.lr_schedule.milestones); }},
      {"lr.decay", [](C& c, const S& v) { c.lr_schedule.decay = static_cast<float>(parse_double("lr.decay", v)); },
       [](const C& c) { return fmt_double(c.lr_schedule.decay); }},

      {"metrics.wall_clock", [](C& c, const S& v) { c.wall_clock = parse_bool("metrics.wall_clock", v); },
       [](const C& c) { return fmt_bool(c.wall_clock); }},
      {"checkpoint.per_stage",
       [](C& c, const S& v) { c.stage_checkpoints = parse_bool("checkpoint.per_stage", v); },
       [](const C& c) { return fmt_bool(c.stage_checkpoints); }},
  };
  return table;
}

void validate(const ExperimentConfig& c) {
  auto wrap = [](const std::string& key, const std::function<void()>& check) {
    try {
      check();
    } catch (const Error& e) {
      throw Error(ErrorCode::kConfig, "config key '" + key + "': " + e.what());
    }
  };
  static const std::set<std::string> datasets{"synthetic", "cifar10", "mnist"};
  if (!datasets.count(c.dataset.name)) bad_value("dataset.name", c.dataset.name, "expected synthetic, cifar10 or mnist");
  if (c.batch_size < 1) bad_value("batch_size", std::to_string(c.batch_size), "must be positive");
  if (c.lr_schedule.decay <= 0.0f) bad_value("lr.decay", fmt_double(c.lr_schedule.decay), "must be positive");
  wrap("model", [&] { c.model.validate(); });
  wrap("strategy", [&] {
    // Taps are resolved against the built model later.
    StrategyConfig s = c.strategy;
    if (s.taps.empty()) s.taps = {0};
    s.validate();
  });
  if (c.taps.empty()) bad_value("strategy.taps", c.taps, "must not be empty");
}

}  // namespace

OptimizerConfig ExperimentConfig::student_optimizer() const {
  OptimizerConfig out = optimizer;
  out.kind = optimizer_kind.value_or(uses_sp(strategy.strategy) ? OptimizerKind::kAdam : OptimizerKind::kSgdMomentum);
  out.learning_rate = student_lr.value_or(out.kind == OptimizerKind::kAdam ? 1e-3f : 0.05f);
  return out;
}

OptimizerConfig ExperimentConfig::teacher_optimizer() const {
  OptimizerConfig out = student_optimizer();
  out.learning_rate = teacher_lr.value_or(out.learning_rate / 5.0f);
  return out;
}

std::string ExperimentConfig::dataset_path() const {
  if (!dataset.path.empty()) return dataset.path;
  const char* root = std::getenv("QAT_DATA_ROOT");
  const std::string base = root ? root : "data";
  if (dataset.name == "cifar10") return base + "/cifar-10-batches-bin";
  if (dataset.name == "mnist") return base + "/mnist";
  return base;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfig, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
    if (!seen.insert(key).second) throw Error(ErrorCode::kConfig, "config key '" + key + "' given twice");
    field->set(config, value);
  }
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::vector<int> resolve_taps(const std::string& spec, const Model& model) {
  if (spec.rfind("last", 0) == 0) {
    const int count = parse_int<int>("strategy.taps", spec.substr(4));
    if (count < 1) bad_value("strategy.taps", spec, "tap count must be positive");
    return last_block_taps(model, count);
  }
  auto taps = parse_int_list("strategy.taps", spec);
  for (int t : taps) {
    if (t < 0 || t >= model.fragment_count()) {
      throw Error(ErrorCode::kInvalidTap, "tap " + std::to_string(t) + " outside the model's fragments");
    }
  }
  return taps;
}

}  // namespace qat
