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

#include "qat/tensor.hpp"

#include <atomic>
#include <sstream>
#include <unordered_map>

namespace qat {

namespace {

std::atomic<std::uint64_t> g_node_counter{1};
thread_local bool g_no_grad = false;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error(ErrorCode::kInvalidShape, "nonpositive dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::uint64_t next_node_id() { return g_node_counter.fetch_add(1, std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::enabled() { return g_no_grad; }

template <typename T>
std::vector<T>& TensorImpl<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  return from(shape, std::vector<T>(shape_numel(shape), value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(const Shape& shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw Error(ErrorCode::kInvalidShape,
                "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->node_id = next_node_id();
  return BasicTensor<T>(std::move(impl));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw Error(ErrorCode::kInvalidCall, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from(shape(), impl_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return from(shape(), impl_->data, impl_->requires_grad);
}

namespace {

enum class Mark : unsigned char { kVisiting, kDone };

// Iterative post-order DFS; a back edge means the graph has a cycle.
template <typename T>
std::vector<TensorImpl<T>*> topo_order(TensorImpl<T>* root) {
  std::vector<TensorImpl<T>*> order;
  std::unordered_map<TensorImpl<T>*, Mark> marks;
  struct Frame {
    TensorImpl<T>* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack{{root, 0}};
  marks[root] = Mark::kVisiting;
  while (!stack.empty()) {
    Frame& top = stack.back();
    TensorImpl<T>* node = top.node;
    const std::size_t n_children = node->grad_fn ? node->grad_fn->inputs.size() : 0;
    if (top.next_child < n_children) {
      TensorImpl<T>* child = node->grad_fn->inputs[top.next_child++].get();
      if (!child->requires_grad) continue;
      auto it = marks.find(child);
      if (it == marks.end()) {
        marks[child] = Mark::kVisiting;
        stack.push_back({child, 0});
      } else if (it->second == Mark::kVisiting) {
        throw Error(ErrorCode::kInvalidState, "autograd graph contains a cycle");
      }
    } else {
      marks[node] = Mark::kDone;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::kInvalidCall, "backward() requires a scalar loss");
  }
  TensorImpl<T>* root = loss.impl().get();
  if (!root->requires_grad) return;
  std::vector<TensorImpl<T>*> order = topo_order(root);
  for (TensorImpl<T>* node : order) {
    if (!node->is_leaf()) node->grad.clear();
  }
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    node->grad_fn->backward(*node);
    if (node != root) std::vector<T>().swap(node->grad);
  }
  if (!root->is_leaf()) std::vector<T>().swap(root->grad);
}

namespace detail {

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                           std::function<void(const TensorImpl<T>&)> backward_fn,
                           const char* name) {
  auto out = BasicTensor<T>::from(shape, std::move(data), false);
  if (NoGradGuard::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in->requires_grad;
  if (!any) return out;
  auto node = std::make_shared<GradNode<T>>();
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  node->name = name;
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

template BasicTensor<float> make_result(Shape, std::vector<float>,
                                        std::vector<std::shared_ptr<TensorImpl<float>>>,
                                        std::function<void(const TensorImpl<float>&)>, const char*);
template BasicTensor<double> make_result(Shape, std::vector<double>,
                                         std::vector<std::shared_ptr<TensorImpl<double>>>,
                                         std::function<void(const TensorImpl<double>&)>, const char*);

}  // namespace detail

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace qat
