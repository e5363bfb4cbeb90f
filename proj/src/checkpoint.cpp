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

#include "qat/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qat/error.hpp"

namespace qat {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::kCheckpoint, what); }

template <typename T>
void append(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::vector<std::uint8_t> take(std::uint64_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) corrupt("checkpoint truncated at byte " + std::to_string(pos_));
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size_bytes());
  if (!out.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> from_bytes(const CheckpointEntry& e, DType expected, const std::string& name) {
  if (e.dtype != expected) corrupt("entry '" + name + "' has an unexpected dtype");
  std::vector<T> out(e.payload.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), e.payload.data(), e.payload.size());
  return out;
}

std::string mask_key(const std::string& prefix) { return prefix + "mask"; }

}  // namespace

void CheckpointData::put_f32(const std::string& name, const std::vector<std::int64_t>& shape,
                             std::span<const float> values) {
  entries_[name] = CheckpointEntry{DType::kF32, shape, to_bytes(values)};
}

void CheckpointData::put_f64(const std::string& name, std::span<const double> values) {
  entries_[name] = CheckpointEntry{DType::kF64, {static_cast<std::int64_t>(values.size())}, to_bytes(values)};
}

void CheckpointData::put_i64(const std::string& name, std::span<const std::int64_t> values) {
  entries_[name] = CheckpointEntry{DType::kI64, {static_cast<std::int64_t>(values.size())}, to_bytes(values)};
}

void CheckpointData::put_text(const std::string& name, const std::string& text) {
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  entries_[name] = CheckpointEntry{DType::kU8, {static_cast<std::int64_t>(bytes.size())}, std::move(bytes)};
}

const CheckpointEntry& CheckpointData::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) corrupt("checkpoint has no entry '" + name + "'");
  return it->second;
}

std::vector<float> CheckpointData::f32(const std::string& name) const {
  return from_bytes<float>(entry(name), DType::kF32, name);
}

std::vector<double> CheckpointData::f64(const std::string& name) const {
  return from_bytes<double>(entry(name), DType::kF64, name);
}

std::vector<std::int64_t> CheckpointData::i64(const std::string& name) const {
  return from_bytes<std::int64_t>(entry(name), DType::kI64, name);
}

std::string CheckpointData::text(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != DType::kU8) corrupt("entry '" + name + "' is not text");
  return std::string(e.payload.begin(), e.payload.end());
}

std::vector<std::uint8_t> CheckpointData::serialize() const {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
  append<std::uint32_t>(out, kCheckpointVersion);
  append<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    append<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    append<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) append<std::int64_t>(out, d);
    append<std::uint64_t>(out, e.payload.size());
    out.insert(out.end(), e.payload.begin(), e.payload.end());
  }
  return out;
}

CheckpointData CheckpointData::parse(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) corrupt("not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    corrupt("unsupported checkpoint version " + std::to_string(version) + " (expected " +
            std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = in.get<std::uint32_t>();
  CheckpointData out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    auto name_bytes = in.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    CheckpointEntry e;
    const auto tag = in.get<std::uint8_t>();
    if (tag < 1 || tag > 4) corrupt("entry '" + name + "' has unknown dtype " + std::to_string(tag));
    e.dtype = static_cast<DType>(tag);
    const auto rank = in.get<std::uint32_t>();
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = in.get<std::int64_t>();
      if (dim < 0) corrupt("entry '" + name + "' has a negative dimension");
      e.shape.push_back(dim);
      numel *= static_cast<std::uint64_t>(dim);
    }
    const auto size = in.get<std::uint64_t>();
    if (size != numel * dtype_size(e.dtype)) corrupt("entry '" + name + "' payload size does not match its shape");
    e.payload = in.take(size);
    if (!out.entries_.emplace(name, std::move(e)).second) corrupt("duplicate entry '" + name + "'");
  }
  if (!in.at_end()) corrupt("trailing bytes after the last checkpoint entry");
  return out;
}

void CheckpointData::save(const std::string& path) const {
  const auto bytes = serialize();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

CheckpointData CheckpointData::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

std::string model_spec_text(const ModelSpec& spec) {
  std::ostringstream out;
  out << "architecture=" << to_string(spec.architecture) << "\n";
  out << "widths=";
  for (std::size_t i = 0; i < spec.stage_widths.size(); ++i) out << (i ? "," : "") << spec.stage_widths[i];
  out << "\n";
  out << "blocks_per_stage=" << spec.blocks_per_stage << "\n";
  out << "num_classes=" << spec.num_classes << "\n";
  out << "in_channels=" << spec.in_channels << "\n";
  out << "image_size=" << spec.image_size << "\n";
  out << "quantize_first_last=" << (spec.quantize_first_last ? 1 : 0) << "\n";
  out << "granularity=" << to_string(spec.granularity) << "\n";
  return out.str();
}

ModelSpec parse_model_spec_text(const std::string& text) {
  ModelSpec spec;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) corrupt("malformed model spec line '" + line + "'");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "architecture") {
        spec.architecture = parse_architecture(value);
      } else if (key == "widths") {
        spec.stage_widths.clear();
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) spec.stage_widths.push_back(std::stoi(item));
      } else if (key == "blocks_per_stage") {
        spec.blocks_per_stage = std::stoi(value);
      } else if (key == "num_classes") {
        spec.num_classes = std::stoi(value);
      } else if (key == "in_channels") {
        spec.in_channels = std::stoi(value);
      } else if (key == "image_size") {
        spec.image_size = std::stoi(value);
      } else if (key == "quantize_first_last") {
        spec.quantize_first_last = value == "1";
      } else if (key == "granularity") {
        spec.granularity = parse_granularity(value);
      } else {
        corrupt("unknown model spec key '" + key + "'");
      }
    }
  } catch (const std::logic_error&) {
    corrupt("malformed model spec value in line '" + line + "'");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kCheckpoint) throw;
    corrupt(std::string("bad model spec: ") + e.what());
  }
  return spec;
}

void put_model(CheckpointData& ckpt, const std::string& prefix, Model& model) {
  ckpt.put_text(prefix + "spec", model_spec_text(model.spec()));
  for (const auto& p : model.parameters()) {
    std::vector<std::int64_t> shape(p.tensor.shape().begin(), p.tensor.shape().end());
    ckpt.put_f32(prefix + "param/" + p.name, shape, p.tensor.data());
  }
  for (const auto& b : model.buffers()) {
    ckpt.put_f32(prefix + "buffer/" + b.name, {static_cast<std::int64_t>(b.values->size())}, *b.values);
  }
  std::vector<std::int64_t> mask;
  for (const auto& e : model.mask().entries) {
    mask.push_back(e.weight_bits);
    mask.push_back(e.activation_bits);
  }
  ckpt.put_i64(mask_key(prefix), mask);
}

void get_model(const CheckpointData& ckpt, const std::string& prefix, Model& model, bool restore_mask) {
  const std::string stored = ckpt.text(prefix + "spec");
  if (stored != model_spec_text(model.spec())) corrupt("checkpoint architecture does not match the model");

  // Stage every value first; apply only after all checks pass.
  auto params = model.parameters();
  auto buffers = model.buffers();
  std::vector<std::vector<float>> param_values, buffer_values;
  for (const auto& p : params) {
    const auto& e = ckpt.entry(prefix + "param/" + p.name);
    std::vector<std::int64_t> shape(p.tensor.shape().begin(), p.tensor.shape().end());
    if (e.shape != shape) corrupt("parameter '" + p.name + "' has a mismatched shape");
    param_values.push_back(ckpt.f32(prefix + "param/" + p.name));
  }
  for (const auto& b : buffers) {
    auto values = ckpt.f32(prefix + "buffer/" + b.name);
    if (values.size() != b.values->size()) corrupt("buffer '" + b.name + "' has a mismatched size");
    buffer_values.push_back(std::move(values));
  }
  PrecisionMask mask;
  if (restore_mask) {
    auto raw = ckpt.i64(mask_key(prefix));
    if (raw.size() != 2 * static_cast<std::size_t>(model.fragment_count())) corrupt("mask size mismatch");
    for (std::size_t i = 0; i < raw.size(); i += 2) {
      mask.entries.push_back(Precision{static_cast<int>(raw[i]), static_cast<int>(raw[i + 1])});
    }
    try {
      Model probe = model.clone();
      apply_precision(probe, mask);
    } catch (const Error& e) {
      corrupt(std::string("stored mask rejected: ") + e.what());
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.data();
    std::copy(param_values[i].begin(), param_values[i].end(), dst.begin());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].values = std::move(buffer_values[i]);
  if (restore_mask) apply_precision(model, mask);
}

Model model_from_checkpoint(const CheckpointData& ckpt, const std::string& prefix) {
  ModelSpec spec = parse_model_spec_text(ckpt.text(prefix + "spec"));
  Model model = build_model(spec, 0);
  get_model(ckpt, prefix, model);
  return model;
}

void put_optimizer(CheckpointData& ckpt, const std::string& prefix, Optimizer& optimizer) {
  for (auto& [name, values] : optimizer.state_buffers()) {
    ckpt.put_f32(prefix + name, {static_cast<std::int64_t>(values->size())}, *values);
  }
  const std::int64_t steps = optimizer.step_count();
  ckpt.put_i64(prefix + "steps", std::span<const std::int64_t>(&steps, 1));
}

void get_optimizer(const CheckpointData& ckpt, const std::string& prefix, Optimizer& optimizer) {
  auto buffers = optimizer.state_buffers();
  std::vector<std::vector<float>> staged;
  for (auto& [name, values] : buffers) {
    auto stored = ckpt.f32(prefix + name);
    if (stored.size() != values->size()) corrupt("optimizer buffer '" + name + "' has a mismatched size");
    staged.push_back(std::move(stored));
  }
  auto steps = ckpt.i64(prefix + "steps");
  if (steps.size() != 1) corrupt("optimizer step counter malformed");
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = std::move(staged[i]);
  optimizer.set_step_count(steps[0]);
}

void put_trainer_state(CheckpointData& ckpt, const TrainerState& s) {
  const std::vector<std::int64_t> ints{s.stage, s.epoch_in_stage, s.batch, s.global_step, s.global_epoch};
  const std::vector<double> reals{s.delta, s.loss_sum, s.distill_sum, s.teacher_sum};
  ckpt.put_i64("trainer/position", ints);
  ckpt.put_f64("trainer/accumulators", reals);
}

TrainerState get_trainer_state(const CheckpointData& ckpt) {
  auto ints = ckpt.i64("trainer/position");
  auto reals = ckpt.f64("trainer/accumulators");
  if (ints.size() != 5 || reals.size() != 4) corrupt("trainer state malformed");
  TrainerState s;
  s.stage = static_cast<int>(ints[0]);
  s.epoch_in_stage = static_cast<int>(ints[1]);
  s.batch = ints[2];
  s.global_step = ints[3];
  s.global_epoch = static_cast<int>(ints[4]);
  s.delta = reals[0];
  s.loss_sum = reals[1];
  s.distill_sum = reals[2];
  s.teacher_sum = reals[3];
  return s;
}

}  // namespace qat
