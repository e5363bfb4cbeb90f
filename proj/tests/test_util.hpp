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


// Shared helpers for the unit tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "qat/config.hpp"
#include "qat/network.hpp"
#include "qat/tensor.hpp"

namespace qat::testing {

inline Tensor64 random64(const Shape& shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor64::from(shape, std::move(v), requires_grad);
}

inline Tensor random32(const Shape& shape, std::mt19937_64& rng, bool requires_grad = false, float stddev = 1.0f) {
  std::normal_distribution<float> n(0.0f, stddev);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(shape, std::move(v), requires_grad);
}

/// Moves entries closer than `gap` to any of `kinks` out of the way, so a
/// central difference never straddles a non-differentiable point.
inline void avoid_kinks(Tensor64& t, std::initializer_list<double> kinks, double gap) {
  for (auto& v : t.data()) {
    for (double k : kinks) {
      if (std::abs(v - k) < gap) v = k + (v >= k ? gap : -gap);
    }
  }
}

struct GradReport {
  double worst = 0.0;  // largest |analytic - numeric| / max(|analytic|, |numeric|, floor)
  std::size_t checked = 0;
};

/// Central differences of the scalar `f` with respect to every element of
/// every tensor in `leaves`, compared with the gradients from backward().
inline GradReport grad_check(std::vector<Tensor64*> leaves, const std::function<Tensor64()>& f, double h = 1e-3,
                             double floor = 1e-4) {
  for (auto* t : leaves) t->zero_grad();
  backward(f());
  GradReport rep;
  for (auto* t : leaves) {
    std::vector<double> analytic(t->numel(), 0.0);
    if (t->has_grad()) std::copy(t->grad().begin(), t->grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double orig = t->data()[i];
      double fp, fm;
      {
        NoGradGuard guard;
        t->data()[i] = orig + h;
        fp = f().item();
        t->data()[i] = orig - h;
        fm = f().item();
        t->data()[i] = orig;
      }
      const double numeric = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
      rep.worst = std::max(rep.worst, std::abs(numeric - analytic[i]) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("qat_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Small synthetic experiment that finishes in well under a second per epoch.
inline ExperimentConfig tiny_config(const std::string& output_dir, std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.seed = seed;
  c.output_dir = output_dir;
  c.dataset.synthetic.train_size = 256;
  c.dataset.synthetic.test_size = 250;
  c.dataset.synthetic.image_size = 8;
  c.dataset.synthetic.seed = seed;
  c.model.stage_widths = {4, 8};
  c.model.blocks_per_stage = 1;
  c.batch_size = 32;
  c.strategy.epochs = 1;
  return c;
}

inline ModelSpec tiny_spec(Architecture arch = Architecture::kPreresnetBasic, Granularity g = Granularity::kBlock) {
  ModelSpec s;
  s.architecture = arch;
  s.stage_widths = {4, 8};
  s.blocks_per_stage = 1;
  s.image_size = 8;
  s.granularity = g;
  return s;
}

}  // namespace qat::testing
