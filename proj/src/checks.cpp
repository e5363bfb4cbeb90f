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

#include "qat/checks.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "qat/checkpoint.hpp"
#include "qat/network.hpp"
#include "qat/ops.hpp"
#include "qat/quant.hpp"
#include "qat/rng.hpp"
#include "qat/strategies.hpp"

namespace qat {
namespace {

CheckResult quantizer_grid(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-0.25f, 1.25f);
  for (int k : {1, 2, 3, 4, 8}) {
    const double levels = std::ldexp(1.0, k) - 1.0;
    std::vector<float> xs(10000);
    for (auto& x : xs) x = u(rng);
    auto q = quantize_activation(Tensor::from({static_cast<int>(xs.size())}, xs), k);
    auto qq = quantize_activation(q, k);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double scaled = q.data()[i] * levels;
      if (std::abs(scaled - std::round(scaled)) > levels * 1.2e-7) return {"quantizer grid", false, "off-grid value"};
      if (qq.data()[i] != q.data()[i]) return {"quantizer grid", false, "not idempotent"};
      const double clipped = std::clamp(static_cast<double>(xs[i]), 0.0, 1.0);
      if (std::abs(q.data()[i] - clipped) > 0.5 / levels + 1e-6) return {"quantizer grid", false, "error too large"};
      if (i > 0 && (xs[i] - xs[i - 1]) * (q.data()[i] - q.data()[i - 1]) < 0) {
        return {"quantizer grid", false, "not monotone"};
      }
    }
  }
  return {"quantizer grid", true, "k in {1,2,3,4,8}, 10000 inputs each"};
}

CheckResult partition(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (double delta : {0.0, 0.25, 0.5, 1.0}) {
    std::int64_t ones = 0, total = 0;
    for (int s = 0; s < 2500; ++s) {
      auto b = sample_indicator(8, delta, true, rng);
      auto p = partition_fragments(b);
      std::vector<int> seen(8, 0);
      for (const auto* set : {&p.quant_weights_and_activations, &p.quant_weights_only, &p.quant_activations_only,
                              &p.full_precision}) {
        for (int f : *set) ++seen[f];
      }
      for (int c : seen) {
        if (c != 1) return {"fragment partition", false, "subsets do not form a disjoint cover"};
      }
      for (const auto& row : b) ones += row[0] + row[1], total += 2;
    }
    const double p = 1.0 - delta, rate = static_cast<double>(ones) / total;
    const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / total);
    if (std::abs(rate - p) > 3 * se + 1e-12) {
      std::ostringstream os;
      os << "delta " << delta << " quantize rate " << rate;
      return {"fragment partition", false, os.str()};
    }
  }
  return {"fragment partition", true, "10000 indicators across 4 deltas"};
}

CheckResult bypass(std::uint64_t seed) {
  ModelSpec spec;
  spec.stage_widths = {4, 8};
  spec.blocks_per_stage = 1;
  spec.image_size = 8;
  Model a = build_model(spec, seed);
  Model b = build_model(spec, seed);
  apply_precision(b, uniform_mask(b, {2, 2}));
  apply_precision(b, uniform_mask(b, {32, 32}));
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<float> x(2 * 3 * 8 * 8);
    for (auto& v : x) v = n(rng);
    std::vector<TraceEvent> trace;
    auto la = a.forward(Tensor::from({2, 3, 8, 8}, x)).logits;
    auto lb = b.forward(Tensor::from({2, 3, 8, 8}, x), {}, &trace).logits;
    for (const auto& e : trace) {
      if (e.kind != TraceEvent::Kind::kResidualAdd) return {"mask bypass", false, "quantizer invoked at 32 bits"};
    }
    for (std::size_t i = 0; i < la.numel(); ++i) {
      if (la.data()[i] != lb.data()[i]) return {"mask bypass", false, "logits differ"};
    }
  }
  return {"mask bypass", true, "all-(32,32) mask reproduces an unmasked model"};
}

CheckResult divergences(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto dist = [&](int c) {
    std::vector<double> p(c);
    double s = 0;
    for (auto& v : p) s += (v = u(rng) + 1e-3);
    for (auto& v : p) v /= s;
    return p;
  };
  for (int i = 0; i < 1000; ++i) {
    auto p = Tensor64::from({1, 5}, dist(5)), q = Tensor64::from({1, 5}, dist(5));
    if (kl_divergence(p, q).item() < -1e-7) return {"divergences", false, "negative KL"};
    if (kl_divergence(p, p).item() > 1e-7) return {"divergences", false, "KL(p,p) not zero"};
  }
  auto t = Tensor64::from({1, 2}, {1.0, 0.0});
  auto s = Tensor64::from({1, 2}, {0.0, 0.0});
  std::vector<Tensor64> ts{t}, ss{s};
  const double r = hint_loss<double>(ts, ss, 2).item();
  if (std::abs(r - 0.5) > 1e-12) return {"divergences", false, "hint loss oracle mismatch"};
  return {"divergences", true, "KL >= 0, KL(p,p) = 0, hint oracle 0.5"};
}

CheckResult gradients(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](Shape s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = n(rng);
    return Tensor64::from(s, v, true);
  };
  struct Case {
    const char* name;
    std::function<Tensor64(const Tensor64&, const Tensor64&)> f;
    Shape a, b;
  };
  const std::vector<Case> cases = {
      {"conv2d", [](auto& x, auto& w) { return sum(mul(conv2d(x, w, 1, 1), conv2d(x, w, 1, 1))); }, {1, 2, 5, 5},
       {3, 2, 3, 3}},
      {"linear", [](auto& x, auto& w) { return sum(mul(linear(x, w), linear(x, w))); }, {3, 4}, {2, 4}},
      {"cross-entropy",
       [](auto& x, auto&) {
         std::vector<int> labels{0, 2};
         return softmax_cross_entropy(x, std::span<const int>(labels));
       },
       {2, 3}, {1}},
  };
  for (const auto& c : cases) {
    for (int trial = 0; trial < 3; ++trial) {
      auto a = fill(c.a), b = fill(c.b);
      backward(c.f(a, b));
      for (auto* t : {&a, &b}) {
        for (std::size_t i = 0; i < t->numel(); ++i) {
          const double h = 1e-3, orig = t->data()[i];
          double fp, fm;
          {
            NoGradGuard g;
            t->data()[i] = orig + h;
            fp = c.f(a, b).item();
            t->data()[i] = orig - h;
            fm = c.f(a, b).item();
            t->data()[i] = orig;
          }
          const double fd = (fp - fm) / (2 * h);
          const double an = t->has_grad() ? t->grad()[i] : 0.0;
          if (std::abs(fd - an) > 1e-3 * std::max(1.0, std::abs(fd))) {
            return {"gradients", false, std::string(c.name) + " disagrees with finite differences"};
          }
        }
      }
    }
  }
  return {"gradients", true, "conv2d, linear, cross-entropy against central differences"};
}

CheckResult checkpoint(std::uint64_t seed) {
  ModelSpec spec;
  spec.stage_widths = {4};
  spec.blocks_per_stage = 1;
  spec.image_size = 8;
  Model m = build_model(spec, seed);
  CheckpointData ckpt;
  put_model(ckpt, "model/", m);
  auto bytes = ckpt.serialize();
  Model back = build_model(spec, seed + 7);
  get_model(CheckpointData::parse(bytes), "model/", back);
  auto pa = m.parameters(), pb = back.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j) {
      if (pa[i].tensor.data()[j] != pb[i].tensor.data()[j]) return {"checkpoint", false, "roundtrip changed a value"};
    }
  }
  bytes.pop_back();
  try {
    CheckpointData::parse(bytes);
    return {"checkpoint", false, "truncated file accepted"};
  } catch (const std::exception&) {
  }
  return {"checkpoint", true, "roundtrip exact, truncation rejected"};
}

}  // namespace

std::vector<CheckResult> run_selftest(std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (auto* check : {&quantizer_grid, &partition, &bypass, &divergences, &gradients, &checkpoint}) {
    try {
      out.push_back(check(derive_seed(seed, {out.size()})));
    } catch (const std::exception& e) {
      out.push_back({"check " + std::to_string(out.size() + 1), false, e.what()});
    }
  }
  return out;
}

}  // namespace qat
