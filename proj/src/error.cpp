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

#include "qat/error.hpp"

namespace qat {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kInvalidGeometry: return "invalid-geometry";
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kInvalidLabel: return "invalid-label";
    case ErrorCode::kInvalidCall: return "invalid-call";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kDegenerateScale: return "degenerate-scale";
    case ErrorCode::kInvalidSpec: return "invalid-spec";
    case ErrorCode::kInvalidMask: return "invalid-mask";
    case ErrorCode::kExclusionViolation: return "exclusion-violation";
    case ErrorCode::kInvalidTap: return "invalid-tap";
    case ErrorCode::kInvalidSchedule: return "invalid-schedule";
    case ErrorCode::kInvalidHint: return "invalid-hint";
    case ErrorCode::kInvalidDistribution: return "invalid-distribution";
    case ErrorCode::kInvalidPairing: return "invalid-pairing";
    case ErrorCode::kCorruptFile: return "corrupt-file";
    case ErrorCode::kCorruptLabel: return "corrupt-label";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kPairing: return "pairing";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kCheckpoint: return "checkpoint";
    case ErrorCode::kParse: return "parse";
  }
  return "unknown";
}

}  // namespace qat
