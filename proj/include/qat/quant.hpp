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

#include <span>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

/// Bit-width that disables a quantizer.
inline constexpr int kFullPrecision = 32;

/// True for the supported bit-widths {1, 2, 3, 4, 8, 16, 32}.
bool is_supported_bits(int bits);

enum class WeightScheme { kDorefaTanh, kSignMeanAbs };

struct QuantSpec {
  int weight_bits = kFullPrecision;
  int activation_bits = kFullPrecision;
  WeightScheme weight_scheme = WeightScheme::kDorefaTanh;

  /// Throws invalid-input for unsupported widths or sign_meanabs with
  /// weight_bits != 1.
  void validate() const;
};

/// Nearest of the 2^k levels i / (2^k - 1) to x in [0, 1], ties away from
/// zero. Requires 1 <= k <= 16.
template <typename T>
T quantize_unit(T x, int k);

/// quantize_unit(clip(x, 0, 1), k) element-wise; backward passes the
/// gradient where 0 <= x <= 1. k = 32 returns `x` itself.
template <typename T>
BasicTensor<T> quantize_activation(const BasicTensor<T>& x, int k);

/// Tensor-level weight quantizer.
///   k >= 2: 2 * quantize_unit(tanh(w) / (2 max|tanh(W)|) + 1/2, k) - 1
///   k == 1: sign(w) * mean|W|, sign(0) = +1
///   k == 32: identity (returns `w` itself)
/// Backward treats rounding (and sign) as identity and differentiates the
/// tanh/max normalization exactly; the k == 1 scale is held constant.
template <typename T>
BasicTensor<T> quantize_weight(const BasicTensor<T>& w, int k);

enum class SteKind { kActivation, kWeightUnit };

/// Straight-through gradient of a rounding quantizer. Activation kind gates
/// by 0 <= input <= 1; weight-unit kind passes the gradient unchanged.
template <typename T>
std::vector<T> ste_backward(std::span<const T> grad_out, std::span<const T> saved_input, SteKind kind);

}  // namespace qat
