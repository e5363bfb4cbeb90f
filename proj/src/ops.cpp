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

#include "qat/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

namespace qat {

namespace {

template <typename T>
using Ptr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kInvalidShape,
                std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const BasicTensor<T>& a, int rank, const char* op) {
  if (a.ndim() != rank) {
    throw Error(ErrorCode::kInvalidShape,
                std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(a.shape()));
  }
}

// Accumulator type: float kernels reduce in double.
template <typename T>
using Acc = double;

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, const T* b, T beta, T* c) {
  Eigen::Map<RowMat<T>> cm(c, m, n);
  Eigen::Map<const RowMat<T>> am(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const RowMat<T>> bm(b, trans_b ? n : k, trans_b ? k : n);
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  Ptr<T> pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb](const TensorImpl<T>& o) {
        for (const Ptr<T>& p : {pa, pb}) {
          if (!p->requires_grad) continue;
          auto& g = p->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
      },
      "add");
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  Ptr<T> pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb](const TensorImpl<T>& o) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
      },
      "sub");
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  Ptr<T> pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {pa, pb},
      [pa, pb](const TensorImpl<T>& o) {
        if (pa->requires_grad) {
          auto& g = pa->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * pa->data[i];
        }
      },
      "mul");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v *= factor;
  Ptr<T> pa = a.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {pa},
      [pa, factor](const TensorImpl<T>& o) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * factor;
      },
      "scale");
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  Acc<T> s = 0;
  for (T v : a.data()) s += v;
  Ptr<T> pa = a.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(s)}, {pa},
      [pa](const TensorImpl<T>& o) {
        auto& g = pa->grad_buffer();
        for (T& v : g) v += o.grad[0];
      },
      "sum");
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  Acc<T> s = 0;
  for (T v : a.data()) s += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  Ptr<T> pa = a.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(s / static_cast<Acc<T>>(a.numel()))}, {pa},
      [pa, inv](const TensorImpl<T>& o) {
        auto& g = pa->grad_buffer();
        for (T& v : g) v += o.grad[0] * inv;
      },
      "mean");
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  Ptr<T> pa = a.impl();
  return detail::make_result<T>(
      a.shape(), std::move(out), {pa},
      [pa](const TensorImpl<T>& o) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (pa->data[i] > T(0)) g[i] += o.grad[i];
        }
      },
      "relu");
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw Error(ErrorCode::kInvalidShape, "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  Ptr<T> pa = a.impl();
  return detail::make_result<T>(
      shape, std::move(out), {pa},
      [pa](const TensorImpl<T>& o) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      },
      "reshape");
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorCode::kInvalidShape, "matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  gemm<T>(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0), out.data());
  Ptr<T> pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      {m, n}, std::move(out), {pa, pb},
      [pa, pb, m, n, k](const TensorImpl<T>& o) {
        if (pa->requires_grad) {
          gemm<T>(false, true, m, k, n, T(1), o.grad.data(), pb->data.data(), T(1), pa->grad_buffer().data());
        }
        if (pb->requires_grad) {
          gemm<T>(true, false, k, n, m, T(1), pa->data.data(), o.grad.data(), T(1), pb->grad_buffer().data());
        }
      },
      "matmul");
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const int n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in) {
    throw Error(ErrorCode::kInvalidShape, "linear: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(n) * out_f);
  gemm<T>(false, true, n, out_f, in, T(1), x.data().data(), w.data().data(), T(0), out.data());
  Ptr<T> px = x.impl(), pw = w.impl();
  return detail::make_result<T>(
      {n, out_f}, std::move(out), {px, pw},
      [px, pw, n, in, out_f](const TensorImpl<T>& o) {
        if (px->requires_grad) {
          gemm<T>(false, false, n, in, out_f, T(1), o.grad.data(), pw->data.data(), T(1), px->grad_buffer().data());
        }
        if (pw->requires_grad) {
          gemm<T>(true, false, out_f, in, n, T(1), o.grad.data(), px->data.data(), T(1), pw->grad_buffer().data());
        }
      },
      "linear");
}

namespace {

struct ConvGeometry {
  int n, c, h, w, o, kh, kw, stride, pad, ho, wo;
  int rows() const { return c * kh * kw; }
  int plane() const { return ho * wo; }
  std::size_t image_in() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t image_out() const { return static_cast<std::size_t>(o) * ho * wo; }
};

// Grow-only per-thread buffers reused across conv calls; slot 0 holds the
// column matrix, 1 the column gradient.
template <typename T>
T* scratch(int slot, std::size_t n) {
  thread_local std::array<std::vector<T>, 2> buffers;
  auto& b = buffers[static_cast<std::size_t>(slot)];
  if (b.size() < n) b.resize(n);
  return b.data();
}

// Output columns [lo, hi) whose input column ox * stride - pad + j is inside
// the image.
inline std::pair<int, int> valid_range(int wo, int w, int stride, int pad, int j) {
  int lo = 0;
  while (lo < wo && lo * stride - pad + j < 0) ++lo;
  int hi = wo;
  while (hi > lo && (hi - 1) * stride - pad + j >= w) --hi;
  return {lo, hi};
}

// One image: col[r, p] with r = (ch * kh + i) * kw + j, p = oy * wo + ox.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const int plane = g.plane();
  for (int ch = 0; ch < g.c; ++ch) {
    const T* src = x + static_cast<std::size_t>(ch) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * plane;
        const auto [lo, hi] = valid_range(g.wo, g.w, g.stride, g.pad, j);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          T* d = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(d, d + g.wo, T(0));
            continue;
          }
          const T* s = src + static_cast<std::size_t>(iy) * g.w - g.pad + j;
          std::fill(d, d + lo, T(0));
          if (g.stride == 1) {
            std::copy(s + lo, s + hi, d + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) d[ox] = s[ox * g.stride];
          }
          std::fill(d + hi, d + g.wo, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const int plane = g.plane();
  for (int ch = 0; ch < g.c; ++ch) {
    T* dst = dx + static_cast<std::size_t>(ch) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + static_cast<std::size_t>((ch * g.kh + i) * g.kw + j) * plane;
        const auto [lo, hi] = valid_range(g.wo, g.w, g.stride, g.pad, j);
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          T* d = dst + static_cast<std::size_t>(iy) * g.w - g.pad + j;
          const T* s = row + oy * g.wo;
          for (int ox = lo; ox < hi; ++ox) d[ox * g.stride] += s[ox];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, int stride, int pad) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (input.dim(1) != weight.dim(1)) {
    throw Error(ErrorCode::kInvalidShape,
                "conv2d: input " + shape_str(input.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (stride < 1 || pad < 0) {
    throw Error(ErrorCode::kInvalidGeometry, "conv2d: stride must be >= 1 and pad >= 0");
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                 weight.dim(2), weight.dim(3), stride, pad, 0, 0};
  const int span_h = g.h + 2 * pad - g.kh;
  const int span_w = g.w + 2 * pad - g.kw;
  if (span_h < 0 || span_w < 0) {
    throw Error(ErrorCode::kInvalidGeometry, "conv2d: kernel larger than padded input");
  }
  g.ho = span_h / stride + 1;
  g.wo = span_w / stride + 1;

  // Image by image so the column matrix stays cache-sized; each GEMM writes
  // its (o, ho*wo) block straight into NCHW output.
  std::vector<T> out(static_cast<std::size_t>(g.n) * g.image_out());
  T* col = scratch<T>(0, static_cast<std::size_t>(g.rows()) * g.plane());
  for (int img = 0; img < g.n; ++img) {
    im2col(g, input.data().data() + img * g.image_in(), col);
    gemm<T>(false, false, g.o, g.plane(), g.rows(), T(1), weight.data().data(), col, T(0),
            out.data() + img * g.image_out());
  }
  Ptr<T> px = input.impl(), pw = weight.impl();
  return detail::make_result<T>(
      {g.n, g.o, g.ho, g.wo}, std::move(out), {px, pw},
      [px, pw, g](const TensorImpl<T>& o) {
        T* col = scratch<T>(0, static_cast<std::size_t>(g.rows()) * g.plane());
        T* dcol = scratch<T>(1, static_cast<std::size_t>(g.rows()) * g.plane());
        for (int img = 0; img < g.n; ++img) {
          const T* gout = o.grad.data() + img * g.image_out();
          if (pw->requires_grad) {
            im2col(g, px->data.data() + img * g.image_in(), col);
            gemm<T>(false, true, g.o, g.rows(), g.plane(), T(1), gout, col, T(1), pw->grad_buffer().data());
          }
          if (px->requires_grad) {
            gemm<T>(true, false, g.rows(), g.plane(), g.o, T(1), pw->data.data(), gout, T(0), dcol);
            col2im_add(g, dcol, px->grad_buffer().data() + img * g.image_in());
          }
        }
      },
      "conv2d");
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          BatchNormStats<T>& stats, Mode mode, T momentum, T eps) {
  if (x.ndim() < 2) throw Error(ErrorCode::kInvalidShape, "batch_norm: rank must be >= 2");
  const int n = x.dim(0), c = x.dim(1);
  const auto spatial = static_cast<int>(x.numel() / (static_cast<std::size_t>(n) * c));
  if (gamma.numel() != static_cast<std::size_t>(c) || beta.numel() != static_cast<std::size_t>(c)) {
    throw Error(ErrorCode::kInvalidShape, "batch_norm: gamma/beta length must equal channel count");
  }
  if (!(eps > T(0))) throw Error(ErrorCode::kInvalidInput, "batch_norm: eps must be positive");
  if (stats.mean.size() != static_cast<std::size_t>(c) || stats.var.size() != static_cast<std::size_t>(c)) {
    throw Error(ErrorCode::kInvalidShape, "batch_norm: running statistics size mismatch");
  }
  const std::size_t count = static_cast<std::size_t>(n) * spatial;
  if (mode == Mode::kTrain && count < 2) {
    throw Error(ErrorCode::kInvalidInput, "batch_norm: train mode needs more than one value per channel");
  }
  auto xs = x.data();
  auto at = [&](int img, int ch) { return static_cast<std::size_t>(img * c + ch) * spatial; };

  std::vector<T> mu(c), inv_std(c);
  if (mode == Mode::kTrain) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int img = 0; img < n; ++img) {
        const T* p = xs.data() + at(img, ch);
        for (int k = 0; k < spatial; ++k) s += p[k];
      }
      const double m = s / static_cast<double>(count);
      double v = 0;
      for (int img = 0; img < n; ++img) {
        const T* p = xs.data() + at(img, ch);
        for (int k = 0; k < spatial; ++k) v += (p[k] - m) * (p[k] - m);
      }
      const double var = v / static_cast<double>(count);
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = v / static_cast<double>(count - 1);
      stats.mean[ch] = static_cast<T>((1.0 - momentum) * stats.mean[ch] + momentum * m);
      stats.var[ch] = static_cast<T>((1.0 - momentum) * stats.var[ch] + momentum * unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = stats.mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[ch]) + static_cast<double>(eps)));
    }
  }

  std::vector<T> xhat(x.numel()), out(x.numel());
  auto gs = gamma.data();
  auto bs = beta.data();
  for (int img = 0; img < n; ++img) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = at(img, ch);
      for (int k = 0; k < spatial; ++k) {
        const T h = (xs[base + k] - mu[ch]) * inv_std[ch];
        xhat[base + k] = h;
        out[base + k] = gs[ch] * h + bs[ch];
      }
    }
  }

  Ptr<T> px = x.impl(), pg = gamma.impl(), pb = beta.impl();
  const bool train = mode == Mode::kTrain;
  return detail::make_result<T>(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, spatial, count,
       train](const TensorImpl<T>& o) {
        auto at = [&](int img, int ch) { return static_cast<std::size_t>(img * c + ch) * spatial; };
        for (int ch = 0; ch < c; ++ch) {
          double sg = 0, sgx = 0;
          for (int img = 0; img < n; ++img) {
            const std::size_t base = at(img, ch);
            for (int k = 0; k < spatial; ++k) {
              sg += o.grad[base + k];
              sgx += static_cast<double>(o.grad[base + k]) * xhat[base + k];
            }
          }
          if (pg->requires_grad) pg->grad_buffer()[ch] += static_cast<T>(sgx);
          if (pb->requires_grad) pb->grad_buffer()[ch] += static_cast<T>(sg);
          if (!px->requires_grad) continue;
          auto& gx = px->grad_buffer();
          const T gamma_c = pg->data[ch];
          if (train) {
            const double m = static_cast<double>(count);
            const double k1 = gamma_c * inv_std[ch] / m;
            for (int img = 0; img < n; ++img) {
              const std::size_t base = at(img, ch);
              for (int k = 0; k < spatial; ++k) {
                gx[base + k] += static_cast<T>(k1 * (m * o.grad[base + k] - sg - xhat[base + k] * sgx));
              }
            }
          } else {
            const T k1 = gamma_c * inv_std[ch];
            for (int img = 0; img < n; ++img) {
              const std::size_t base = at(img, ch);
              for (int k = 0; k < spatial; ++k) gx[base + k] += k1 * o.grad[base + k];
            }
          }
        }
      },
      "batch_norm");
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n) * c);
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0;
    for (int k = 0; k < s; ++k) acc += xs[i * s + k];
    out[i] = static_cast<T>(acc / s);
  }
  Ptr<T> px = x.impl();
  return detail::make_result<T>(
      {n, c}, std::move(out), {px},
      [px, s](const TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        const T inv = T(1) / static_cast<T>(s);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          const T v = o.grad[i] * inv;
          for (int k = 0; k < s; ++k) g[i * s + k] += v;
        }
      },
      "global_avg_pool");
}

template <typename T>
BasicTensor<T> shortcut_pad(const BasicTensor<T>& x, int out_channels, int stride) {
  require_rank(x, 4, "shortcut_pad");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (out_channels < c || stride < 1) {
    throw Error(ErrorCode::kInvalidGeometry, "shortcut_pad: cannot shrink channels");
  }
  if (out_channels == c && stride == 1) return x;
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(n) * out_channels * ho * wo, T(0));
  auto xs = x.data();
  for (int img = 0; img < n; ++img) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < ho; ++y) {
        for (int z = 0; z < wo; ++z) {
          out[((static_cast<std::size_t>(img) * out_channels + ch) * ho + y) * wo + z] =
              xs[((static_cast<std::size_t>(img) * c + ch) * h + y * stride) * w + z * stride];
        }
      }
    }
  }
  Ptr<T> px = x.impl();
  return detail::make_result<T>(
      {n, out_channels, ho, wo}, std::move(out), {px},
      [px, n, c, h, w, ho, wo, out_channels, stride](const TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        for (int img = 0; img < n; ++img) {
          for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < ho; ++y) {
              for (int z = 0; z < wo; ++z) {
                g[((static_cast<std::size_t>(img) * c + ch) * h + y * stride) * w + z * stride] +=
                    o.grad[((static_cast<std::size_t>(img) * out_channels + ch) * ho + y) * wo + z];
              }
            }
          }
        }
      },
      "shortcut_pad");
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const int n = logits.dim(0), c = logits.dim(1);
  std::vector<T> out(logits.numel());
  auto xs = logits.data();
  for (int i = 0; i < n; ++i) {
    const T* row = xs.data() + static_cast<std::size_t>(i) * c;
    const T mx = *std::max_element(row, row + c);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    for (int j = 0; j < c; ++j) {
      out[static_cast<std::size_t>(i) * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
  }
  Ptr<T> px = logits.impl();
  auto result = detail::make_result<T>({n, c}, out, {px}, nullptr, "softmax");
  if (result.impl()->grad_fn) {
    result.impl()->grad_fn->backward = [px, y = std::move(out), n, c](const TensorImpl<T>& o) {
      auto& g = px->grad_buffer();
      for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * c;
        double dot = 0;
        for (int j = 0; j < c; ++j) dot += static_cast<double>(o.grad[base + j]) * y[base + j];
        for (int j = 0; j < c; ++j) g[base + j] += static_cast<T>(y[base + j] * (o.grad[base + j] - dot));
      }
    };
  }
  return result;
}

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::kInvalidShape, "softmax_cross_entropy: label count does not match batch");
  }
  for (int label : labels) {
    if (label < 0 || label >= c) {
      throw Error(ErrorCode::kInvalidLabel, "label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  auto xs = logits.data();
  std::vector<T> probs(logits.numel());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const T* row = xs.data() + static_cast<std::size_t>(i) * c;
    const T mx = *std::max_element(row, row + c);
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(z) - static_cast<double>(row[labels[i]] - mx);
    for (int j = 0; j < c; ++j) {
      probs[static_cast<std::size_t>(i) * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx)) / z);
    }
  }
  std::vector<int> lab(labels.begin(), labels.end());
  Ptr<T> px = logits.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(total / n)}, {px},
      [px, probs = std::move(probs), lab = std::move(lab), n, c](const TensorImpl<T>& o) {
        auto& g = px->grad_buffer();
        const T k = o.grad[0] / static_cast<T>(n);
        for (int i = 0; i < n; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            g[base + j] += k * (probs[base + j] - (j == lab[i] ? T(1) : T(0)));
          }
        }
      },
      "softmax_cross_entropy");
}

template <typename T>
BasicTensor<T> kl_divergence(const BasicTensor<T>& p, const BasicTensor<T>& q) {
  require_rank(p, 2, "kl_divergence");
  if (p.shape() != q.shape()) {
    throw Error(ErrorCode::kInvalidDistribution,
                "kl_divergence: shape " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  }
  const int n = p.dim(0), c = p.dim(1);
  static constexpr double kFloor = 1e-12;
  constexpr double kSumTol = 1e-5;
  auto ps = p.data();
  auto qs = q.data();
  for (int i = 0; i < n; ++i) {
    double sp = 0, sq = 0;
    for (int j = 0; j < c; ++j) {
      const T a = ps[static_cast<std::size_t>(i) * c + j], b = qs[static_cast<std::size_t>(i) * c + j];
      if (!(a >= T(0)) || !(b >= T(0))) {
        throw Error(ErrorCode::kInvalidDistribution, "kl_divergence: negative or NaN probability");
      }
      sp += a;
      sq += b;
    }
    if (std::abs(sp - 1.0) > kSumTol || std::abs(sq - 1.0) > kSumTol) {
      throw Error(ErrorCode::kInvalidDistribution, "kl_divergence: row " + std::to_string(i) + " does not sum to 1");
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double a = ps[i];
    if (a > 0) total += a * std::log(a / std::max<double>(qs[i], kFloor));
  }
  Ptr<T> pp = p.impl(), pq = q.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(total / n)}, {pp, pq},
      [pp, pq, n](const TensorImpl<T>& o) {
        const double k = static_cast<double>(o.grad[0]) / n;
        if (pp->requires_grad) {
          auto& g = pp->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double a = pp->data[i];
            if (a > 0) g[i] += static_cast<T>(k * (std::log(a / std::max<double>(pq->data[i], kFloor)) + 1.0));
          }
        }
        if (pq->requires_grad) {
          auto& g = pq->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double b = pq->data[i];
            if (b >= kFloor) g[i] += static_cast<T>(-k * pp->data[i] / b);
          }
        }
      },
      "kl_divergence");
}

template <typename T>
BasicTensor<T> half_squared_distance(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "half_squared_distance");
  std::vector<T> diff(a.numel());
  double total = 0;
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = as[i] - bs[i];
    total += static_cast<double>(diff[i]) * diff[i];
  }
  Ptr<T> pa = a.impl(), pb = b.impl();
  return detail::make_result<T>(
      {1}, {static_cast<T>(0.5 * total)}, {pa, pb},
      [pa, pb, diff = std::move(diff)](const TensorImpl<T>& o) {
        const T k = o.grad[0];
        if (pa->requires_grad) {
          auto& g = pa->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * diff[i];
        }
        if (pb->requires_grad) {
          auto& g = pb->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * diff[i];
        }
      },
      "half_squared_distance");
}

#define QAT_INSTANTIATE_OPS(T)                                                                              \
  template void gemm<T>(bool, bool, int, int, int, T, const T*, const T*, T, T*);                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                  \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                       \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);                                     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&);                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, int, int);                   \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,   \
                                     BatchNormStats<T>&, Mode, T, T);                                       \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                           \
  template BasicTensor<T> shortcut_pad(const BasicTensor<T>&, int, int);                                    \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                                   \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);               \
  template BasicTensor<T> kl_divergence(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> half_squared_distance(const BasicTensor<T>&, const BasicTensor<T>&);

QAT_INSTANTIATE_OPS(float)
QAT_INSTANTIATE_OPS(double)

#undef QAT_INSTANTIATE_OPS

}  // namespace qat
