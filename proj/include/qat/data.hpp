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
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qat/tensor.hpp"

namespace qat {

enum class Split { kTrain, kTest };

/// Images are stored N x C x H x W with values in [0, 1]. `pixel_mean` is
/// subtracted at batch time and always comes from a train split.
struct Dataset {
  int channels = 0;
  int height = 0;
  int width = 0;
  int num_classes = 10;
  Split split = Split::kTrain;
  std::vector<float> images;
  std::vector<int> labels;
  std::vector<float> pixel_mean;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return static_cast<std::size_t>(channels) * height * width; }
  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_numel(), image_numel());
  }
};

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

/// One CIFAR-10 binary batch file: records of 1 label byte followed by
/// 3072 channel-planar pixel bytes.
Dataset load_cifar10_file(const std::string& path, Split split = Split::kTrain);

/// data_batch_1..5.bin (train) or test_batch.bin (test) from `dir`.
Dataset load_cifar10(const std::string& dir, Split split);

/// IDX image/label pair (MNIST layout), images become N x 1 x rows x cols.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split = Split::kTrain);

std::vector<float> compute_pixel_mean(const Dataset& train);

/// First `count` samples (all when count == 0 or count >= size).
Dataset take_prefix(const Dataset& data, std::size_t count);

struct SyntheticSpec {
  int num_classes = 10;
  int train_size = 2000;
  int test_size = 1000;
  int channels = 3;
  int image_size = 16;
  float noise = 0.25f;
  /// Weight of a second, randomly chosen class prototype mixed into every
  /// sample; raises the difficulty.
  float confusion = 0.35f;
  std::uint64_t seed = 0;
};

/// Gaussian class blobs rendered as images: each class owns a prototype made
/// of a few colored Gaussian bumps; samples jitter, mix and add noise.
std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec);

struct AugmentPolicy {
  int pad = 0;
  double flip_probability = 0.0;

  static AugmentPolicy train() { return {4, 0.5}; }
  static AugmentPolicy identity() { return {0, 0.0}; }
  bool is_identity() const { return pad == 0 && flip_probability == 0.0; }
};

void hflip(std::span<float> image, int channels, int height, int width);

/// Window of size H x W at (offset_y, offset_x) of the image zero-padded by
/// `pad` on every side. Offset (pad, pad) is the identity.
std::vector<float> crop_padded(std::span<const float> image, int channels, int height, int width, int pad,
                               int offset_y, int offset_x);

/// Zero-pad, uniform random crop back to the original size, then horizontal
/// flip with the policy's probability.
std::vector<float> augment(std::span<const float> image, int channels, int height, int width,
                           std::mt19937_64& rng, const AugmentPolicy& policy);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

/// Deterministic batch stream: the sample order of an epoch and the
/// augmentation of every batch are pure functions of (seed, epoch, index).
class Loader {
 public:
  Loader(const Dataset& data, int batch_size, std::uint64_t seed, AugmentPolicy policy, int input_bits,
         bool shuffle);

  std::size_t batches_per_epoch() const;
  Batch batch(int epoch, std::size_t index) const;
  const Dataset& data() const { return *data_; }

 private:
  std::vector<std::size_t> order(int epoch) const;

  const Dataset* data_;
  int batch_size_;
  std::uint64_t seed_;
  AugmentPolicy policy_;
  int input_bits_;
  bool shuffle_;
};

}  // namespace qat
