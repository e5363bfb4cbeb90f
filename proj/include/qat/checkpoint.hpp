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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qat/network.hpp"
#include "qat/optim.hpp"
#include "qat/strategies.hpp"

namespace qat {

// File layout (all integers little-endian):
//   magic "QATCKPT\0", u32 version, u32 entry count, then per entry:
//   u32 name length, name bytes, u8 dtype, u32 rank, i64 dims[rank],
//   u64 payload bytes, payload.
inline constexpr char kCheckpointMagic[8] = {'Q', 'A', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2, kI64 = 3, kU8 = 4 };

struct CheckpointEntry {
  DType dtype = DType::kF32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> payload;
};

/// In-memory set of named entries. Loading parses and validates the whole
/// file before returning, so a corrupt file never yields a partial result.
class CheckpointData {
 public:
  void put_f32(const std::string& name, const std::vector<std::int64_t>& shape, std::span<const float> values);
  void put_f64(const std::string& name, std::span<const double> values);
  void put_i64(const std::string& name, std::span<const std::int64_t> values);
  void put_text(const std::string& name, const std::string& text);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const CheckpointEntry& entry(const std::string& name) const;
  std::vector<float> f32(const std::string& name) const;
  std::vector<double> f64(const std::string& name) const;
  std::vector<std::int64_t> i64(const std::string& name) const;
  std::string text(const std::string& name) const;
  const std::map<std::string, CheckpointEntry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static CheckpointData parse(std::span<const std::uint8_t> bytes);

  /// Writes to a temporary file and renames it into place.
  void save(const std::string& path) const;
  static CheckpointData load(const std::string& path);

 private:
  std::map<std::string, CheckpointEntry> entries_;
};

/// Parameters, batch-norm statistics, precision mask and spec under
/// `prefix` (e.g. "model/").
void put_model(CheckpointData& ckpt, const std::string& prefix, Model& model);
/// Verifies the stored spec matches and every tensor is present with the
/// right size, then copies values. Nothing is modified on failure.
void get_model(const CheckpointData& ckpt, const std::string& prefix, Model& model, bool restore_mask = true);
/// Builds a model from the stored spec and loads it.
Model model_from_checkpoint(const CheckpointData& ckpt, const std::string& prefix);

void put_optimizer(CheckpointData& ckpt, const std::string& prefix, Optimizer& optimizer);
void get_optimizer(const CheckpointData& ckpt, const std::string& prefix, Optimizer& optimizer);

void put_trainer_state(CheckpointData& ckpt, const TrainerState& state);
TrainerState get_trainer_state(const CheckpointData& ckpt);

std::string model_spec_text(const ModelSpec& spec);
ModelSpec parse_model_spec_text(const std::string& text);

}  // namespace qat
