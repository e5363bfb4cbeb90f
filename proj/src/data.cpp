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

#include "qat/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "qat/quant.hpp"
#include "qat/rng.hpp"

namespace qat {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_cifar(Dataset& out, const std::string& path) {
  const std::vector<unsigned char> bytes = read_file(path);
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw Error(ErrorCode::kCorruptFile, "'" + path + "' size " + std::to_string(bytes.size()) +
                                             " is not a multiple of " + std::to_string(kCifarRecordBytes));
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  out.images.reserve(out.images.size() + records * (kCifarRecordBytes - 1));
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= 10) {
      throw Error(ErrorCode::kCorruptLabel, "'" + path + "' record " + std::to_string(r) + " has label " +
                                                std::to_string(rec[0]));
    }
    out.labels.push_back(rec[0]);
    for (std::size_t i = 1; i < kCifarRecordBytes; ++i) out.images.push_back(static_cast<float>(rec[i]) / 255.0f);
  }
}

Dataset empty_cifar(Split split) {
  Dataset d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.num_classes = 10;
  d.split = split;
  return d;
}

}  // namespace

Dataset load_cifar10_file(const std::string& path, Split split) {
  Dataset d = empty_cifar(split);
  append_cifar(d, path);
  return d;
}

Dataset load_cifar10(const std::string& dir, Split split) {
  Dataset d = empty_cifar(split);
  namespace fs = std::filesystem;
  if (split == Split::kTest) {
    append_cifar(d, (fs::path(dir) / "test_batch.bin").string());
  } else {
    for (int i = 1; i <= 5; ++i) {
      append_cifar(d, (fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    }
  }
  return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path, Split split) {
  const std::vector<unsigned char> img = read_file(images_path);
  const std::vector<unsigned char> lab = read_file(labels_path);
  if (img.size() < 16 || read_be32(img, 0) != 0x00000803) {
    throw Error(ErrorCode::kFormat, "'" + images_path + "' is not an IDX image file (magic 0x00000803)");
  }
  if (lab.size() < 8 || read_be32(lab, 0) != 0x00000801) {
    throw Error(ErrorCode::kFormat, "'" + labels_path + "' is not an IDX label file (magic 0x00000801)");
  }
  const std::uint32_t count = read_be32(img, 4);
  const std::uint32_t rows = read_be32(img, 8);
  const std::uint32_t cols = read_be32(img, 12);
  const std::uint32_t label_count = read_be32(lab, 4);
  if (count != label_count) {
    throw Error(ErrorCode::kPairing, std::to_string(count) + " images but " + std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (img.size() != 16 + count * pixels || lab.size() != 8 + count) {
    throw Error(ErrorCode::kFormat, "IDX payload size does not match its header");
  }
  Dataset d;
  d.channels = 1;
  d.height = static_cast<int>(rows);
  d.width = static_cast<int>(cols);
  d.split = split;
  d.images.resize(count * pixels);
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    d.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, d.labels.back());
  }
  d.num_classes = std::max(10, max_label + 1);
  return d;
}

std::vector<float> compute_pixel_mean(const Dataset& train) {
  const std::size_t len = train.image_numel();
  std::vector<double> acc(len, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto img = train.image(i);
    for (std::size_t k = 0; k < len; ++k) acc[k] += img[k];
  }
  std::vector<float> mean(len);
  for (std::size_t k = 0; k < len; ++k) mean[k] = static_cast<float>(acc[k] / static_cast<double>(train.size()));
  return mean;
}

Dataset take_prefix(const Dataset& data, std::size_t count) {
  if (count == 0 || count >= data.size()) return data;
  Dataset d = data;
  d.labels.resize(count);
  d.images.resize(count * data.image_numel());
  return d;
}

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2 || spec.train_size < 1 || spec.test_size < 1 || spec.image_size < 4 || spec.channels < 1) {
    throw Error(ErrorCode::kConfig, "invalid synthetic dataset parameters");
  }
  const int c = spec.channels, s = spec.image_size;
  const std::size_t len = static_cast<std::size_t>(c) * s * s;
  std::mt19937_64 proto_rng(derive_seed(spec.seed, {kStreamSynthetic, 0}));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);

  // Each prototype: three Gaussian bumps with per-channel intensities.
  std::vector<std::vector<float>> protos(spec.num_classes, std::vector<float>(len, 0.0f));
  for (auto& proto : protos) {
    for (int bump = 0; bump < 3; ++bump) {
      const float cy = unit(proto_rng) * (s - 1), cx = unit(proto_rng) * (s - 1);
      const float sigma = (0.12f + 0.18f * unit(proto_rng)) * s;
      std::vector<float> color(c);
      for (float& v : color) v = unit(proto_rng);
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < s; ++y) {
          for (int x = 0; x < s; ++x) {
            const float d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            proto[(static_cast<std::size_t>(ch) * s + y) * s + x] += color[ch] * std::exp(-d2 / (2 * sigma * sigma));
          }
        }
      }
    }
  }

  auto render = [&](int count, Split split, std::uint64_t stream) {
    Dataset d;
    d.channels = c;
    d.height = s;
    d.width = s;
    d.num_classes = spec.num_classes;
    d.split = split;
    d.images.resize(static_cast<std::size_t>(count) * len);
    std::mt19937_64 rng(derive_seed(spec.seed, {kStreamSynthetic, stream}));
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    std::uniform_int_distribution<int> shift(-2, 2);
    std::uniform_int_distribution<int> other(0, spec.num_classes - 1);
    for (int i = 0; i < count; ++i) {
      const int label = i % spec.num_classes;  // balanced classes
      const int distractor = other(rng);
      const int dy = shift(rng), dx = shift(rng);
      const float gain = 0.75f + 0.5f * unit(rng);
      float* dst = d.images.data() + static_cast<std::size_t>(i) * len;
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < s; ++y) {
          for (int x = 0; x < s; ++x) {
            const int sy = std::clamp(y + dy, 0, s - 1), sx = std::clamp(x + dx, 0, s - 1);
            const std::size_t src = (static_cast<std::size_t>(ch) * s + sy) * s + sx;
            const float v = gain * protos[label][src] + spec.confusion * protos[distractor][src] +
                            spec.noise * gauss(rng);
            dst[(static_cast<std::size_t>(ch) * s + y) * s + x] = std::clamp(v, 0.0f, 1.0f);
          }
        }
      }
      d.labels.push_back(label);
    }
    return d;
  };
  Dataset train = render(spec.train_size, Split::kTrain, 1);
  Dataset test = render(spec.test_size, Split::kTest, 2);
  train.pixel_mean = compute_pixel_mean(train);
  test.pixel_mean = train.pixel_mean;
  return {std::move(train), std::move(test)};
}

void hflip(std::span<float> image, int channels, int height, int width) {
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < height; ++y) {
      float* row = image.data() + (static_cast<std::size_t>(ch) * height + y) * width;
      std::reverse(row, row + width);
    }
  }
}

std::vector<float> crop_padded(std::span<const float> image, int channels, int height, int width, int pad,
                               int offset_y, int offset_x) {
  std::vector<float> out(image.size(), 0.0f);
  for (int ch = 0; ch < channels; ++ch) {
    for (int y = 0; y < height; ++y) {
      const int sy = y + offset_y - pad;
      if (sy < 0 || sy >= height) continue;
      for (int x = 0; x < width; ++x) {
        const int sx = x + offset_x - pad;
        if (sx < 0 || sx >= width) continue;
        out[(static_cast<std::size_t>(ch) * height + y) * width + x] =
            image[(static_cast<std::size_t>(ch) * height + sy) * width + sx];
      }
    }
  }
  return out;
}

std::vector<float> augment(std::span<const float> image, int channels, int height, int width,
                           std::mt19937_64& rng, const AugmentPolicy& policy) {
  std::vector<float> out;
  if (policy.pad > 0) {
    std::uniform_int_distribution<int> offset(0, 2 * policy.pad);
    const int oy = offset(rng);
    const int ox = offset(rng);
    out = crop_padded(image, channels, height, width, policy.pad, oy, ox);
  } else {
    out.assign(image.begin(), image.end());
  }
  if (policy.flip_probability > 0.0) {
    std::bernoulli_distribution flip(policy.flip_probability);
    if (flip(rng)) hflip(out, channels, height, width);
  }
  return out;
}

Loader::Loader(const Dataset& data, int batch_size, std::uint64_t seed, AugmentPolicy policy, int input_bits,
               bool shuffle)
    : data_(&data), batch_size_(batch_size), seed_(seed), policy_(policy), input_bits_(input_bits),
      shuffle_(shuffle) {
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "batch size must be >= 1");
  if (data.size() == 0) throw Error(ErrorCode::kInvalidInput, "empty dataset");
  if (data.pixel_mean.size() != data.image_numel()) {
    throw Error(ErrorCode::kInvalidState, "dataset has no train-split pixel mean");
  }
}

std::size_t Loader::batches_per_epoch() const {
  const std::size_t n = data_->size(), b = static_cast<std::size_t>(batch_size_);
  // Training drops a trailing partial batch so batch statistics stay defined.
  if (shuffle_) return std::max<std::size_t>(1, n / b);
  return (n + b - 1) / b;
}

std::vector<std::size_t> Loader::order(int epoch) const {
  std::vector<std::size_t> idx(data_->size());
  std::iota(idx.begin(), idx.end(), 0);
  if (shuffle_) {
    std::mt19937_64 rng(derive_seed(seed_, {kStreamShuffle, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  return idx;
}

Batch Loader::batch(int epoch, std::size_t index) const {
  if (index >= batches_per_epoch()) throw Error(ErrorCode::kInvalidCall, "batch index out of range");
  const std::vector<std::size_t> idx = order(epoch);
  const std::size_t begin = index * static_cast<std::size_t>(batch_size_);
  const std::size_t end = std::min(idx.size(), begin + static_cast<std::size_t>(batch_size_));
  const int n = static_cast<int>(end - begin);
  const Dataset& d = *data_;
  const std::size_t len = d.image_numel();
  std::mt19937_64 rng(derive_seed(seed_, {kStreamAugment, static_cast<std::uint64_t>(epoch), index}));
  std::vector<float> values(static_cast<std::size_t>(n) * len);
  Batch out;
  for (int i = 0; i < n; ++i) {
    const std::size_t sample = idx[begin + static_cast<std::size_t>(i)];
    std::vector<float> img = policy_.is_identity()
                                 ? std::vector<float>(d.image(sample).begin(), d.image(sample).end())
                                 : augment(d.image(sample), d.channels, d.height, d.width, rng, policy_);
    float* dst = values.data() + static_cast<std::size_t>(i) * len;
    for (std::size_t k = 0; k < len; ++k) {
      float v = img[k];
      if (input_bits_ != kFullPrecision) v = quantize_unit(v, input_bits_);
      dst[k] = v - d.pixel_mean[k];
    }
    out.labels.push_back(d.labels[sample]);
  }
  out.images = Tensor::from({n, d.channels, d.height, d.width}, std::move(values));
  return out;
}

}  // namespace qat
