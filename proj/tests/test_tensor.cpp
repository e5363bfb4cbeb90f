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


#include <cmath>
#include <random>

#include "doctest.h"
#include "gradient_suite.hpp"
#include "qat/error.hpp"
#include "qat/ops.hpp"
#include "qat/optim.hpp"

using namespace qat;
using namespace qat::testing;

namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no qat::Error thrown");
  return ErrorCode::kParse;
}

// Six nested loops, no lowering.
std::vector<double> naive_conv(const Tensor64& x, const Tensor64& w, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n) * o * ho * wo, 0.0);
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o; ++oc)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = 0;
          for (int ic = 0; ic < c; ++ic)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int iy = y * stride - pad + i, ix = xx * stride - pad + j;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.data()[((b * c + ic) * h + iy) * wd + ix] * w.data()[((oc * c + ic) * kh + i) * kw + j];
              }
          out[((b * o + oc) * ho + y) * wo + xx] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  auto t = Tensor::from({2, 3}, std::vector<float>(6, 1.0f));
  CHECK(t.numel() == shape_numel(t.shape()));
  CHECK(code_of([] { Tensor::from({2, 3}, std::vector<float>(5)); }) == ErrorCode::kInvalidShape);
  auto a = Tensor::zeros({2}), b = Tensor::zeros({2});
  CHECK(a.node_id() != b.node_id());
}

TEST_CASE("backward basics") {
  SUBCASE("x*x at 3") {
    auto x = Tensor64::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }
  SUBCASE("fan-out accumulates") {
    auto x = Tensor64::from({3}, {1, 2, 3}, true);
    backward(sum(add(x, x)));
    for (double g : x.grad()) CHECK(g == 2.0);
  }
  SUBCASE("gradients accumulate across calls") {
    auto x = Tensor64::from({2}, {1, 2}, true);
    backward(sum(x));
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 2.0);
  }
  SUBCASE("non-scalar loss") {
    auto x = Tensor64::from({2}, {1, 2}, true);
    CHECK(code_of([&] { backward(scale(x, 2.0)); }) == ErrorCode::kInvalidCall);
  }
  SUBCASE("cycle is rejected before any gradient flows") {
    auto x = Tensor64::from({1}, {2.0}, true);
    auto y = mul(x, x);
    y.impl()->grad_fn->inputs.push_back(y.impl());
    CHECK(code_of([&] { backward(y); }) == ErrorCode::kInvalidState);
    CHECK_FALSE(x.has_grad());
    y.impl()->grad_fn->inputs.pop_back();
  }
  SUBCASE("no grad guard records nothing") {
    auto x = Tensor64::from({2}, {1, 2}, true);
    Tensor64 y;
    {
      NoGradGuard g;
      y = mul(x, x);
    }
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("detach cuts the graph") {
    auto x = Tensor64::from({2}, {1, 2}, true);
    auto y = mul(x, x).detach();
    CHECK(y.is_leaf());
    CHECK(y.data()[1] == 4.0);
  }
}

TEST_CASE("matmul gradient pattern") {
  auto a = Tensor64::from({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor64::from({2, 2}, {5, 6, 7, 8}, false);
  backward(sum(matmul(a, b)));
  // dL/dA = ones * B^T: row sums of B.
  CHECK(a.grad()[0] == 11.0);
  CHECK(a.grad()[1] == 15.0);
  CHECK(a.grad()[2] == 11.0);
  CHECK(a.grad()[3] == 15.0);
}

TEST_CASE("conv2d examples") {
  auto one = conv2d(Tensor64::from({1, 1, 1, 1}, {3.0}), Tensor64::from({1, 1, 1, 1}, {2.0}), 1, 0);
  CHECK(one.item() == 6.0);
  auto nine = conv2d(Tensor64::full({1, 1, 3, 3}, 1.0), Tensor64::full({1, 1, 3, 3}, 1.0), 1, 0);
  CHECK(nine.item() == 9.0);

  std::mt19937_64 rng(11);
  for (auto [stride, pad] : {std::pair{2, 1}, {1, 1}, {1, 0}, {2, 0}, {3, 2}}) {
    auto x = random64({2, 3, 8, 8}, rng, false), w = random64({4, 3, 3, 3}, rng, false);
    auto y = conv2d(x, w, stride, pad);
    auto ref = naive_conv(x, w, stride, pad);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  // float path against the same oracle
  auto x = random64({2, 3, 8, 8}, rng, false), w = random64({4, 3, 3, 3}, rng, false);
  std::vector<float> xf(x.data().begin(), x.data().end()), wf(w.data().begin(), w.data().end());
  auto yf = conv2d(Tensor::from({2, 3, 8, 8}, xf), Tensor::from({4, 3, 3, 3}, wf), 2, 1);
  auto ref = naive_conv(x, w, 2, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(yf.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("conv2d errors") {
  CHECK(code_of([] { conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 1, 0); }) ==
        ErrorCode::kInvalidShape);
  CHECK(code_of([] { conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), 1, 0); }) ==
        ErrorCode::kInvalidGeometry);
  CHECK(code_of([] { conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), 0, 0); }) ==
        ErrorCode::kInvalidGeometry);
}

TEST_CASE("batch_norm") {
  SUBCASE("constant input normalizes to zero") {
    BatchNormStats<double> st(2);
    auto y = batch_norm(Tensor64::full({4, 2, 3, 3}, 7.5), Tensor64::full({2}, 1.0), Tensor64::zeros({2}), st,
                        Mode::kTrain);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("normal batch gives zero mean, unit variance") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(2.0, 3.0);
    std::vector<double> v(64 * 3 * 4);
    for (auto& x : v) x = n(rng);
    BatchNormStats<double> st(3);
    auto y = batch_norm(Tensor64::from({64, 3, 4}, v), Tensor64::full({3}, 1.0), Tensor64::zeros({3}), st,
                        Mode::kTrain);
    for (int c = 0; c < 3; ++c) {
      double m = 0, q = 0;
      for (int b = 0; b < 64; ++b)
        for (int i = 0; i < 4; ++i) m += y.data()[(b * 3 + c) * 4 + i];
      m /= 256;
      for (int b = 0; b < 64; ++b)
        for (int i = 0; i < 4; ++i) q += std::pow(y.data()[(b * 3 + c) * 4 + i] - m, 2);
      q /= 256;
      CHECK(std::abs(m) < 1e-5);
      CHECK(std::abs(q - 1.0) < 1e-3);
    }
  }
  SUBCASE("running statistics after one step") {
    // channel 0: {1, 3, 5, 7}; channel 1: {2, 2, 4, 4}
    auto x = Tensor64::from({2, 2, 2}, {1, 3, 2, 2, 5, 7, 4, 4});
    BatchNormStats<double> st(2);
    st.mean = {0.5, -1.0};
    st.var = {2.0, 1.0};
    batch_norm(x, Tensor64::full({2}, 1.0), Tensor64::zeros({2}), st, Mode::kTrain);
    CHECK(st.mean[0] == doctest::Approx(0.9 * 0.5 + 0.1 * 4.0));
    CHECK(st.mean[1] == doctest::Approx(0.9 * -1.0 + 0.1 * 3.0));
    // unbiased batch variance: channel 0 = 20/3, channel 1 = 4/3
    CHECK(st.var[0] == doctest::Approx(0.9 * 2.0 + 0.1 * 20.0 / 3.0));
    CHECK(st.var[1] == doctest::Approx(0.9 * 1.0 + 0.1 * 4.0 / 3.0));
  }
  SUBCASE("eval reads running statistics") {
    BatchNormStats<double> st(1);
    st.mean = {1.0};
    st.var = {4.0};
    auto y = batch_norm(Tensor64::from({1, 1, 2}, {3.0, -1.0}), Tensor64::full({1}, 2.0), Tensor64::full({1}, 0.5),
                        st, Mode::kEval);
    CHECK(y.data()[0] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
    CHECK(y.data()[1] == doctest::Approx(2.0 * -2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
    CHECK(st.mean[0] == 1.0);
  }
  SUBCASE("degenerate batch") {
    // Zero-size tensors cannot be built; a single value per channel is the
    // smallest batch batch statistics reject.
    CHECK(code_of([] { Tensor64::zeros({0, 1, 2}); }) == ErrorCode::kInvalidShape);
    BatchNormStats<double> st(1);
    CHECK(code_of([&] {
            batch_norm(Tensor64::zeros({1, 1, 1}), Tensor64::full({1}, 1.0), Tensor64::zeros({1}), st, Mode::kTrain);
          }) == ErrorCode::kInvalidInput);
    CHECK(code_of([&] {
            batch_norm(Tensor64::zeros({2, 1}), Tensor64::full({1}, 1.0), Tensor64::zeros({1}), st, Mode::kTrain, 0.1,
                       0.0);
          }) == ErrorCode::kInvalidInput);
  }
}

TEST_CASE("softmax_cross_entropy") {
  std::vector<int> labels{3};
  CHECK(softmax_cross_entropy(Tensor64::zeros({1, 10}), std::span<const int>(labels)).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
  std::vector<double> sat(10, 0.0);
  sat[3] = 30.0;
  CHECK(softmax_cross_entropy(Tensor64::from({1, 10}, sat), std::span<const int>(labels)).item() < 1e-9);

  std::mt19937_64 rng(5);
  auto logits = random64({4, 5}, rng, false, -4, 4);
  std::vector<int> l4{0, 4, 2, 2};
  long double ref = 0;
  for (int i = 0; i < 4; ++i) {
    long double z = 0;
    for (int c = 0; c < 5; ++c) z += std::exp(static_cast<long double>(logits.data()[i * 5 + c]));
    ref -= std::log(std::exp(static_cast<long double>(logits.data()[i * 5 + l4[i]])) / z);
  }
  ref /= 4;
  CHECK(softmax_cross_entropy(logits, std::span<const int>(l4)).item() ==
        doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));

  std::vector<int> bad{5};
  CHECK(code_of([&] { softmax_cross_entropy(Tensor64::zeros({1, 5}), std::span<const int>(bad)); }) ==
        ErrorCode::kInvalidLabel);
}

TEST_CASE("optimizers") {
  SUBCASE("SGD arithmetic") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1f;
    cfg.momentum = 0.0f;
    cfg.weight_decay = 0.0f;
    auto p = Tensor::from({1}, {1.0f}, true);
    Optimizer opt({{"p", p}}, cfg);
    p.mutable_grad()[0] = 2.0f;
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.8f));
    CHECK(opt.step_count() == 1);
  }
  SUBCASE("zero gradient shrinks by weight decay only") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.1f;
    cfg.weight_decay = 0.01f;
    auto p = Tensor::from({2}, {1.0f, -2.0f}, true);
    Optimizer opt({{"p", p}}, cfg);
    p.mutable_grad();
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(1.0f - 0.1f * 0.01f * 1.0f));
    CHECK(p.data()[1] == doctest::Approx(-2.0f + 0.1f * 0.01f * 2.0f));
  }
  SUBCASE("SGD momentum two steps") {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.5f;
    cfg.momentum = 0.9f;
    cfg.weight_decay = 0.0f;
    auto p = Tensor::from({1}, {0.0f}, true);
    Optimizer opt({{"p", p}}, cfg);
    p.mutable_grad()[0] = 1.0f;
    opt.step();
    opt.zero_grad();
    p.mutable_grad()[0] = 1.0f;
    opt.step();
    // v1 = 1, v2 = 1.9; p = -0.5 * (1 + 1.9)
    CHECK(p.data()[0] == doctest::Approx(-1.45f));
  }
  SUBCASE("Adam against a hand-stepped oracle") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kAdam;
    cfg.learning_rate = 0.01f;
    cfg.weight_decay = 0.0f;
    auto p = Tensor::from({1}, {3.0f}, true);
    Optimizer opt({{"p", p}}, cfg);
    double x = 3.0, m = 0, v = 0;
    for (int t = 1; t <= 3; ++t) {
      // loss = x^2
      opt.zero_grad();
      p.mutable_grad()[0] = 2.0f * p.data()[0];
      opt.step();
      const double g = 2 * x;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-6));
      CHECK(opt.step_count() == t);
    }
  }
  SUBCASE("missing gradient") {
    auto p = Tensor::from({1}, {1.0f}, true);
    Optimizer opt({{"p", p}}, {});
    CHECK(code_of([&] { opt.step(); }) == ErrorCode::kInvalidState);
  }
  SUBCASE("state buffers match parameter shapes") {
    OptimizerConfig cfg;
    cfg.kind = OptimizerKind::kAdam;
    auto p = Tensor::zeros({3, 2}, true);
    Optimizer opt({{"p", p}}, cfg);
    for (auto& [name, buf] : opt.state_buffers()) CHECK(buf->size() == p.numel());
  }
}

TEST_CASE("determinism of forward and backward") {
  auto run = [] {
    std::mt19937_64 rng(42);
    auto x = random32({2, 3, 6, 6}, rng, true), w = random32({4, 3, 3, 3}, rng, true);
    auto y = conv2d(x, w, 1, 1);
    backward(sum(mul(y, y)));
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("finite-difference gradient suite") {
  for (const auto& s : run_gradient_suite(2026, 20)) {
    INFO(s.name << " worst relative error " << s.worst);
    CHECK(s.worst <= 1e-3);
    CHECK(s.instances >= 20);
  }
}
