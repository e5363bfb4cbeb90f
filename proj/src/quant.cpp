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

#include "qat/quant.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace qat {

bool is_supported_bits(int bits) {
  switch (bits) {
    case 1: case 2: case 3: case 4: case 8: case 16: case 32:
      return true;
    default:
      return false;
  }
}

void QuantSpec::validate() const {
  if (!is_supported_bits(weight_bits) || !is_supported_bits(activation_bits)) {
    throw Error(ErrorCode::kInvalidInput, "unsupported bit-width " + std::to_string(weight_bits) + "/" +
                                              std::to_string(activation_bits));
  }
  if (weight_scheme == WeightScheme::kSignMeanAbs && weight_bits != 1) {
    throw Error(ErrorCode::kInvalidInput, "sign_meanabs weights require weight_bits = 1");
  }
}

namespace {

// std::round for v >= 0 (ties away from zero), written so loops vectorize.
template <typename T>
inline T round_nonneg(T v) {
  const T t = std::trunc(v);
  return v - t >= T(0.5) ? t + T(1) : t;
}

}  // namespace

template <typename T>
T quantize_unit(T x, int k) {
  if (k < 1 || k > 16) throw Error(ErrorCode::kInvalidInput, "quantize_unit: k must be in [1, 16]");
  if (!(x >= T(0) && x <= T(1))) throw Error(ErrorCode::kInvalidInput, "quantize_unit: input outside [0, 1]");
  const T levels = static_cast<T>((1 << k) - 1);
  return round_nonneg(x * levels) / levels;
}

template <typename T>
std::vector<T> ste_backward(std::span<const T> grad_out, std::span<const T> saved_input, SteKind kind) {
  std::vector<T> grad_in(grad_out.begin(), grad_out.end());
  if (kind == SteKind::kActivation) {
    for (std::size_t i = 0; i < grad_in.size(); ++i) {
      const T x = saved_input[i];
      if (!(x >= T(0) && x <= T(1))) grad_in[i] = T(0);
    }
  }
  return grad_in;
}

template <typename T>
BasicTensor<T> quantize_activation(const BasicTensor<T>& x, int k) {
  if (!is_supported_bits(k)) throw Error(ErrorCode::kInvalidInput, "unsupported activation bits " + std::to_string(k));
  if (k == kFullPrecision) return x;
  std::vector<T> out(x.numel());
  auto xs = x.data();
  const T levels = static_cast<T>((1 << k) - 1);
  const auto n = static_cast<Eigen::Index>(out.size());
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> in(xs.data(), n);
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> q(out.data(), n);
  // Eigen's round breaks ties away from zero, like std::round.
  q = (in.max(T(0)).min(T(1)) * levels).round() / levels;
  const bool nan = !std::isfinite(in.sum()) && in.isNaN().any();
  if (nan) throw Error(ErrorCode::kInvalidInput, "quantize_activation: NaN input");
  auto px = x.impl();
  return detail::make_result<T>(
      x.shape(), std::move(out), {px},
      [px](const TensorImpl<T>& o) {
        std::vector<T> g = ste_backward<T>(o.grad, px->data, SteKind::kActivation);
        auto& dst = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      },
      "quantize_activation");
}

template <typename T>
BasicTensor<T> quantize_weight(const BasicTensor<T>& w, int k) {
  if (!is_supported_bits(k)) throw Error(ErrorCode::kInvalidInput, "unsupported weight bits " + std::to_string(k));
  if (k == kFullPrecision) return w;
  auto ws = w.data();
  auto pw = w.impl();
  if (k == 1) {
    double abs_sum = 0;
    for (T v : ws) abs_sum += std::abs(static_cast<double>(v));
    const T e = static_cast<T>(abs_sum / static_cast<double>(ws.size()));
    std::vector<T> out(ws.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ws[i] >= T(0) ? e : -e;
    return detail::make_result<T>(
        w.shape(), std::move(out), {pw},
        [pw](const TensorImpl<T>& o) {
          std::vector<T> g = ste_backward<T>(o.grad, pw->data, SteKind::kWeightUnit);
          auto& dst = pw->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        },
        "quantize_weight");
  }

  std::vector<T> th(ws.size());
  std::size_t arg = 0;
  T scale = T(0);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    th[i] = std::tanh(ws[i]);
    if (std::abs(th[i]) > scale) {
      scale = std::abs(th[i]);
      arg = i;
    }
  }
  if (!(scale > T(0))) throw Error(ErrorCode::kDegenerateScale, "quantize_weight: all-zero weight tensor");
  std::vector<T> out(ws.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T unit = (th[i] / scale) * T(0.5) + T(0.5);
    out[i] = T(2) * quantize_unit(unit, k) - T(1);
  }
  return detail::make_result<T>(
      w.shape(), std::move(out), {pw},
      [pw, th = std::move(th), scale, arg](const TensorImpl<T>& o) {
        // d/dw of 2 * (tanh(w) / (2M) + 1/2) - 1 = tanh(w) / M, M = max|tanh(W)|.
        std::vector<T> g = ste_backward<T>(o.grad, pw->data, SteKind::kWeightUnit);
        auto& dst = pw->grad_buffer();
        double dot = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
          dst[i] += g[i] * (T(1) - th[i] * th[i]) / scale;
          dot += static_cast<double>(g[i]) * th[i];
        }
        const T sign = th[arg] >= T(0) ? T(1) : T(-1);
        dst[arg] -= static_cast<T>(sign * (T(1) - th[arg] * th[arg]) * dot / (static_cast<double>(scale) * scale));
      },
      "quantize_weight");
}

template float quantize_unit(float, int);
template double quantize_unit(double, int);
template std::vector<float> ste_backward(std::span<const float>, std::span<const float>, SteKind);
template std::vector<double> ste_backward(std::span<const double>, std::span<const double>, SteKind);
template BasicTensor<float> quantize_activation(const BasicTensor<float>&, int);
template BasicTensor<double> quantize_activation(const BasicTensor<double>&, int);
template BasicTensor<float> quantize_weight(const BasicTensor<float>&, int);
template BasicTensor<double> quantize_weight(const BasicTensor<double>&, int);

}  // namespace qat
