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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qat/error.hpp"

namespace qat {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

/// One recorded operation. `backward` reads the gradient of `out` and
/// accumulates into the gradients of `inputs`.
template <typename T>
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
  const char* name = "";
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when no gradient has been accumulated
  bool requires_grad = false;
  std::uint64_t node_id = 0;
  std::shared_ptr<GradNode<T>> grad_fn;

  bool is_leaf() const { return grad_fn == nullptr; }
  /// Allocates a zero gradient on first use and returns it.
  std::vector<T>& grad_buffer();
};

std::uint64_t next_node_id();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool enabled();

 private:
  bool previous_;
};

/// Dense row-major tensor handle with reverse-mode autograd. Copies share
/// storage; use `clone()` for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false);
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false);
  static BasicTensor from(const Shape& shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  std::uint64_t node_id() const { return impl_->node_id; }
  bool is_leaf() const { return impl_->is_leaf(); }
  const char* op_name() const { return impl_->grad_fn ? impl_->grad_fn->name : "leaf"; }

  /// New leaf holding the same values, cut from the graph.
  BasicTensor detach() const;
  /// New leaf with copied values and the same requires_grad flag.
  BasicTensor clone() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Populates `grad` on every requires_grad leaf reachable from `loss`.
/// Gradients accumulate into existing leaf gradients.
template <typename T>
void backward(const BasicTensor<T>& loss);

namespace detail {

/// Wraps freshly computed values as an op output. When recording is on and
/// any input requires grad, the output is attached to the graph.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                           std::function<void(const TensorImpl<T>&)> backward_fn,
                           const char* name);

template <typename T>
bool wants_grad(const std::shared_ptr<TensorImpl<T>>& t) {
  return t->requires_grad;
}

}  // namespace detail

}  // namespace qat
