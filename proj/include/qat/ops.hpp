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

// Differentiable operations. Every op is instantiated for float (training)
// and double (finite-difference checking).

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, const Shape& shape);

/// a[M,K] x b[K,N].
template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// x[N,in] x w[out,in]^T. No bias.
template <typename T> BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w);

/// Cross-correlation of input[N,C,H,W] with weight[O,C,kh,kw]; no bias.
/// Lowered to a patch gather followed by one matrix multiply per batch.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, int stride, int pad);

/// Running statistics for batch normalization. Not part of the graph.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;

  explicit BatchNormStats(int channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization of x[N,C,...]. Train mode normalizes with
/// biased batch statistics and folds them into `stats` (the running variance
/// uses the unbiased estimate); eval mode reads `stats`.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormStats<T>& stats, Mode mode, T momentum = T(kBatchNormMomentum),
                          T eps = T(kBatchNormEps));

/// x[N,C,H,W] -> [N,C].
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// Parameter-free residual shortcut: spatial subsampling by `stride` and
/// zero-filled extra channels up to `out_channels`.
template <typename T>
BasicTensor<T> shortcut_pad(const BasicTensor<T>& x, int out_channels, int stride);

/// Row-wise softmax of logits[N,C].
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& logits);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Mean over the batch of sum_c p log(p / max(q, 1e-12)). Rows of p and q
/// must be distributions (nonnegative, summing to 1 within 1e-5).
template <typename T>
BasicTensor<T> kl_divergence(const BasicTensor<T>& p, const BasicTensor<T>& q);

/// 0.5 * ||a - b||^2 summed over all elements.
template <typename T>
BasicTensor<T> half_squared_distance(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// C[M,N] = alpha * op(A) * op(B) + beta * C for row-major operands.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b, T beta, T* c);

}  // namespace qat
