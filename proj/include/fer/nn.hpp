#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fer/errors.hpp"
#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {

enum class Mode { Train, Eval };

namespace detail {

// cols layout: [in_ch*kh*kw, oh*ow]. Out-of-image taps read as zero.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow, T* cols) {
  const std::size_t patch = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((ch * kh + ky) * kw + kx) * patch;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) -
              static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                static_cast<std::ptrdiff_t>(pad);
            T v{0};
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              v = x[(ch * h + static_cast<std::size_t>(iy)) * w +
                    static_cast<std::size_t>(ix)];
            }
            dst[oy * ow + ox] = v;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t c, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t stride,
                std::size_t pad, std::size_t oh, std::size_t ow, T* x) {
  const std::size_t patch = oh * ow;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((ch * kh + ky) * kw + kx) * patch;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * stride + ky) -
              static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) -
                static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            x[(ch * h + static_cast<std::size_t>(iy)) * w +
              static_cast<std::size_t>(ix)] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), im2col + GEMM. A naive loop reference for
// testing lives in the test suite, not here.
// ---------------------------------------------------------------------------

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
class ConvLayer {
 public:
  Tensor<T> weight;  // [out_ch, in_ch, kh, kw], kh/kw odd
  Tensor<T> bias;    // [out_ch]
  std::size_t stride = 1;
  std::size_t pad = 1;

  ConvLayer() = default;
  ConvLayer(std::size_t out_ch, std::size_t in_ch, std::size_t k,
            std::size_t stride_, std::size_t pad_)
      : weight({out_ch, in_ch, k, k}),
        bias({out_ch}),
        stride(stride_),
        pad(pad_) {
    if (k % 2 == 0) throw ConfigError("conv kernel extent must be odd");
  }

  void init_he(SeededRng& rng) {
    const std::size_t fan_in =
        weight.shape()[1] * weight.shape()[2] * weight.shape()[3];
    const T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] = static_cast<T>(rng.normal(0.0, std_dev));
    }
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = T{0};
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("conv: input must be [n,c,h,w]");
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                      w = x.shape()[3];
    const std::size_t oc = weight.shape()[0], ic = weight.shape()[1],
                      kh = weight.shape()[2], kw = weight.shape()[3];
    if (c != ic) {
      throw ShapeError("conv: input has " + std::to_string(c) +
                       " channels, layer expects " + std::to_string(ic));
    }
    if (h + 2 * pad < kh || w + 2 * pad < kw) {
      throw ShapeError("conv: spatial extents too small for kernel");
    }
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    const std::size_t kdim = ic * kh * kw;
    const std::size_t patch = oh * ow;

    Tensor<T> y({n, oc, oh, ow});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
      std::vector<T> cols(kdim * patch);
      detail::im2col(x.data() + ni * c * h * w, c, h, w, kh, kw, stride, pad,
                     oh, ow, cols.data());
      T* out = y.data() + ni * oc * patch;
      detail::gemm_nn(weight.data(), cols.data(), out, oc, kdim, patch, false);
      for (std::size_t o = 0; o < oc; ++o) {
        const T b = bias[o];
        T* row = out + o * patch;
        for (std::size_t p = 0; p < patch; ++p) row[p] += b;
      }
    }
    in_cache_ = x;
    has_cache_ = true;
    return y;
  }

  ConvGrads<T> backward(const Tensor<T>& upstream) {
    if (!has_cache_) throw StateError("conv backward without cached forward");
    const Tensor<T>& x = in_cache_;
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                      w = x.shape()[3];
    const std::size_t oc = weight.shape()[0], ic = weight.shape()[1],
                      kh = weight.shape()[2], kw = weight.shape()[3];
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
    if (upstream.shape() !=
        std::vector<std::size_t>{n, oc, oh, ow}) {
      throw ShapeError("conv backward: upstream shape mismatch");
    }
    const std::size_t kdim = ic * kh * kw;
    const std::size_t patch = oh * ow;

    ConvGrads<T> g{Tensor<T>::zeros(x.shape()), Tensor<T>::zeros(weight.shape()),
                   Tensor<T>::zeros(bias.shape())};

    // bias: sum over batch and spatial positions
    for (std::size_t ni = 0; ni < n; ++ni) {
      const T* up = upstream.data() + ni * oc * patch;
      for (std::size_t o = 0; o < oc; ++o) {
        T acc{0};
        const T* row = up + o * patch;
        for (std::size_t p = 0; p < patch; ++p) acc += row[p];
        g.bias[o] += acc;
      }
    }

    // weights: accumulate dY_n * cols_n^T sequentially over the batch so the
    // summation order is fixed
    {
      std::vector<T> cols(kdim * patch);
      for (std::size_t ni = 0; ni < n; ++ni) {
        detail::im2col(x.data() + ni * c * h * w, c, h, w, kh, kw, stride, pad,
                       oh, ow, cols.data());
        detail::gemm_nt(upstream.data() + ni * oc * patch, cols.data(),
                        g.weight.data(), oc, patch, kdim, true);
      }
    }

    // input: W^T * dY_n scattered back through col2im
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ni = 0; ni < static_cast<std::ptrdiff_t>(n); ++ni) {
      std::vector<T> colgrad(kdim * patch);
      detail::gemm_tn(weight.data(), upstream.data() + ni * oc * patch,
                      colgrad.data(), kdim, oc, patch, false);
      detail::col2im_add(colgrad.data(), c, h, w, kh, kw, stride, pad, oh, ow,
                         g.input.data() + ni * c * h * w);
    }
    return g;
  }

 private:
  Tensor<T> in_cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// ReLU. Subgradient at exactly 0 is defined as 0 for determinism.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return max_scalar(x, T{0});
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  detail::require_same_shape(x, upstream, "relu_backward");
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = x[i] > T{0} ? upstream[i] : T{0};
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
class BatchNormLayer {
 public:
  Tensor<T> gamma;         // [ch]
  Tensor<T> beta;          // [ch]
  Tensor<T> running_mean;  // [ch]
  Tensor<T> running_var;   // [ch], strictly positive
  double momentum = 0.1;   // weight on the fresh batch statistics
  double epsilon = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t ch)
      : gamma({ch}, T{1}),
        beta({ch}, T{0}),
        running_mean({ch}, T{0}),
        running_var({ch}, T{1}) {}

  std::size_t channels() const { return gamma.size(); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.shape()[1] != channels()) {
      throw ShapeError("batchnorm: input must be [n," +
                       std::to_string(channels()) + ",h,w]");
    }
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                      w = x.shape()[3];
    const std::size_t m = n * h * w;  // reduction set per channel
    Tensor<T> y(x.shape());

    if (mode == Mode::Train) {
      if (m < 2) {
        throw DegenerateBatchError(
            "batchnorm train mode needs at least 2 elements per channel");
      }
      xhat_ = Tensor<T>(x.shape());
      invstd_ = Tensor<T>({c});
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(c); ++ci) {
        const std::size_t cc = static_cast<std::size_t>(ci);
        double sum = 0;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* p = x.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) sum += p[i];
        }
        const double mean = sum / static_cast<double>(m);
        double var_acc = 0;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* p = x.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) {
            const double d = p[i] - mean;
            var_acc += d * d;
          }
        }
        const double var = var_acc / static_cast<double>(m);  // biased
        const double inv = 1.0 / std::sqrt(var + epsilon);
        invstd_[cc] = static_cast<T>(inv);
        const T gm = gamma[cc], bt = beta[cc];
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* p = x.data() + (ni * c + cc) * h * w;
          T* xh = xhat_.data() + (ni * c + cc) * h * w;
          T* out = y.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) {
            const T xv = static_cast<T>((p[i] - mean) * inv);
            xh[i] = xv;
            out[i] = gm * xv + bt;
          }
        }
        running_mean[cc] = static_cast<T>((1.0 - momentum) * running_mean[cc] +
                                          momentum * mean);
        running_var[cc] = static_cast<T>((1.0 - momentum) * running_var[cc] +
                                         momentum * var);
      }
      cached_mode_ = Mode::Train;
    } else {
      xhat_ = Tensor<T>(x.shape());
      invstd_ = Tensor<T>({c});
      for (std::size_t cc = 0; cc < c; ++cc) {
        const double inv =
            1.0 / std::sqrt(static_cast<double>(running_var[cc]) + epsilon);
        invstd_[cc] = static_cast<T>(inv);
        const double mean = running_mean[cc];
        const T gm = gamma[cc], bt = beta[cc];
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* p = x.data() + (ni * c + cc) * h * w;
          T* xh = xhat_.data() + (ni * c + cc) * h * w;
          T* out = y.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) {
            const T xv = static_cast<T>((p[i] - mean) * inv);
            xh[i] = xv;
            out[i] = gm * xv + bt;
          }
        }
      }
      cached_mode_ = Mode::Eval;
    }
    has_cache_ = true;
    return y;
  }

  /// Train-mode gradient includes the mean/variance dependence on x; in eval
  /// mode the transform is a frozen per-channel affine map.
  BatchNormGrads<T> backward(const Tensor<T>& upstream) {
    if (!has_cache_) throw StateError("batchnorm backward without forward");
    if (!upstream.same_shape(xhat_)) {
      throw ShapeError("batchnorm backward: upstream shape mismatch");
    }
    const std::size_t n = upstream.shape()[0], c = upstream.shape()[1],
                      h = upstream.shape()[2], w = upstream.shape()[3];
    const std::size_t m = n * h * w;
    BatchNormGrads<T> g{Tensor<T>(upstream.shape()), Tensor<T>({c}),
                        Tensor<T>({c})};

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < static_cast<std::ptrdiff_t>(c); ++ci) {
      const std::size_t cc = static_cast<std::size_t>(ci);
      double sum_up = 0, sum_up_xhat = 0;
      for (std::size_t ni = 0; ni < n; ++ni) {
        const T* up = upstream.data() + (ni * c + cc) * h * w;
        const T* xh = xhat_.data() + (ni * c + cc) * h * w;
        for (std::size_t i = 0; i < h * w; ++i) {
          sum_up += up[i];
          sum_up_xhat += up[i] * xh[i];
        }
      }
      g.beta[cc] = static_cast<T>(sum_up);
      g.gamma[cc] = static_cast<T>(sum_up_xhat);
      const double gm = gamma[cc];
      const double inv = invstd_[cc];
      if (cached_mode_ == Mode::Train) {
        const double scale = gm * inv / static_cast<double>(m);
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* up = upstream.data() + (ni * c + cc) * h * w;
          const T* xh = xhat_.data() + (ni * c + cc) * h * w;
          T* dx = g.input.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) {
            dx[i] = static_cast<T>(
                scale * (static_cast<double>(m) * up[i] - sum_up -
                         xh[i] * sum_up_xhat));
          }
        }
      } else {
        const double k = gm * inv;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const T* up = upstream.data() + (ni * c + cc) * h * w;
          T* dx = g.input.data() + (ni * c + cc) * h * w;
          for (std::size_t i = 0; i < h * w; ++i) {
            dx[i] = static_cast<T>(k * up[i]);
          }
        }
      }
    }
    return g;
  }

 private:
  Tensor<T> xhat_;
  Tensor<T> invstd_;
  Mode cached_mode_ = Mode::Train;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// 2x2 stride-2 max pooling. Ties go to the first window position in
// row-major order; odd trailing rows/columns are dropped.
// ---------------------------------------------------------------------------

template <typename T>
class MaxPoolLayer {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4) throw ShapeError("maxpool: input must be [n,c,h,w]");
    const std::size_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2],
                      w = x.shape()[3];
    if (h < 2 || w < 2) throw ShapeError("maxpool: spatial extents must be >= 2");
    const std::size_t oh = h / 2, ow = w / 2;
    Tensor<T> y({n, c, oh, ow});
    indices_.assign(y.size(), 0);
    in_shape_ = x.shape();
    std::size_t out = 0;
    for (std::size_t ni = 0; ni < n; ++ni) {
      for (std::size_t cc = 0; cc < c; ++cc) {
        const T* plane = x.data() + (ni * c + cc) * h * w;
        const std::size_t base = (ni * c + cc) * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox, ++out) {
            std::size_t best_off = (2 * oy) * w + 2 * ox;
            T best = plane[best_off];
            const std::size_t cand[3] = {(2 * oy) * w + 2 * ox + 1,
                                         (2 * oy + 1) * w + 2 * ox,
                                         (2 * oy + 1) * w + 2 * ox + 1};
            for (std::size_t k = 0; k < 3; ++k) {
              if (plane[cand[k]] > best) {  // strict: first max wins
                best = plane[cand[k]];
                best_off = cand[k];
              }
            }
            y[out] = best;
            indices_[out] = base + best_off;
          }
        }
      }
    }
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& upstream) {
    if (!has_cache_) throw StateError("maxpool backward without forward");
    if (upstream.size() != indices_.size()) {
      throw ShapeError("maxpool backward: upstream size mismatch");
    }
    Tensor<T> g = Tensor<T>::zeros(in_shape_);
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      g[indices_[i]] += upstream[i];
    }
    return g;
  }

  const std::vector<std::size_t>& argmax_indices() const { return indices_; }

 private:
  std::vector<std::size_t> indices_;
  std::vector<std::size_t> in_shape_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Fully connected layer: y = x W^T + b.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
class LinearLayer {
 public:
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::size_t out, std::size_t in)
      : weight({out, in}), bias({out}) {}

  void init_he(SeededRng& rng) {
    const std::size_t fan_in = weight.shape()[1];
    const T std_dev = static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] = static_cast<T>(rng.normal(0.0, std_dev));
    }
    for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = T{0};
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 2 || x.shape()[1] != weight.shape()[1]) {
      throw ShapeError("linear: input extent " +
                       (x.rank() == 2 ? std::to_string(x.shape()[1]) : "?") +
                       " does not match weight in-extent " +
                       std::to_string(weight.shape()[1]));
    }
    const std::size_t n = x.shape()[0], in = weight.shape()[1],
                      out = weight.shape()[0];
    Tensor<T> y({n, out});
    detail::gemm_nt(x.data(), weight.data(), y.data(), n, in, out, false);
    for (std::size_t r = 0; r < n; ++r) {
      T* row = y.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) row[o] += bias[o];
    }
    in_cache_ = x;
    has_cache_ = true;
    return y;
  }

  LinearGrads<T> backward(const Tensor<T>& upstream) {
    if (!has_cache_) throw StateError("linear backward without forward");
    const std::size_t n = in_cache_.shape()[0], in = weight.shape()[1],
                      out = weight.shape()[0];
    if (upstream.shape() != std::vector<std::size_t>{n, out}) {
      throw ShapeError("linear backward: upstream shape mismatch");
    }
    LinearGrads<T> g{Tensor<T>({n, in}), Tensor<T>({out, in}),
                     Tensor<T>::zeros({out})};
    detail::gemm_nn(upstream.data(), weight.data(), g.input.data(), n, out, in,
                    false);
    detail::gemm_tn(upstream.data(), in_cache_.data(), g.weight.data(), out, n,
                    in, false);
    for (std::size_t r = 0; r < n; ++r) {
      const T* row = upstream.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) g.bias[o] += row[o];
    }
    return g;
  }

 private:
  Tensor<T> in_cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Inverted dropout: train-mode mask values are 0 or 1/(1-p), eval mode is
// the identity, so no rescaling happens at inference time.
// ---------------------------------------------------------------------------

template <typename T>
class DropoutLayer {
 public:
  double p = 0.5;

  DropoutLayer() = default;
  explicit DropoutLayer(double drop_p) : p(drop_p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p must be in [0,1)");
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, SeededRng* rng) {
    if (mode == Mode::Eval || p == 0.0) {
      cached_mode_ = Mode::Eval;  // identity map either way
      has_cache_ = true;
      return x;
    }
    if (rng == nullptr) {
      throw StateError("dropout train mode requires an rng");
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    mask_ = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T m = rng->bernoulli(p) ? T{0} : keep_scale;
      mask_[i] = m;
      y[i] = x[i] * m;
    }
    cached_mode_ = Mode::Train;
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& upstream) {
    if (!has_cache_) throw StateError("dropout backward without forward");
    if (cached_mode_ == Mode::Eval) return upstream;
    return mul(upstream, mask_);
  }

  /// Re-applies the mask cached by the last train-mode forward. Lets the
  /// finite-difference suite probe the deterministic masked map.
  Tensor<T> replay(const Tensor<T>& x) const {
    if (!has_cache_ || cached_mode_ != Mode::Train) {
      throw StateError("dropout replay requires a cached train-mode mask");
    }
    return mul(x, mask_);
  }

  const Tensor<T>& mask() const { return mask_; }

 private:
  Tensor<T> mask_;
  Mode cached_mode_ = Mode::Train;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Softmax cross-entropy with max-subtraction for stability.
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0;        // mean over the batch, non-negative
  Tensor<T> logit_grad;   // (softmax - onehot) / n; rows sum to 0
};

/// Row softmax (used for ten-crop probability averaging).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: rank-2 tensor required");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor<T> probs(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data() + r * k;
    T* out = probs.data() + r * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      out[j] = static_cast<T>(e);
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) {
      out[j] = static_cast<T>(out[j] / denom);
    }
  }
  return probs;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits,
                                    const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [n,k]");
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw ShapeError("cross_entropy: label count mismatch");
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw LabelError("label " + std::to_string(labels[r]) +
                       " outside [0," + std::to_string(k) + ") at row " +
                       std::to_string(r));
    }
  }
  LossResult<T> res;
  res.logit_grad = Tensor<T>(logits.shape());
  double loss_acc = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data() + r * k;
    T* grad = res.logit_grad.data() + r * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max<double>(mx, row[j]);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    loss_acc += log_denom - (row[labels[r]] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - mx) / denom;
      const double onehot = (static_cast<std::size_t>(labels[r]) == j) ? 1.0 : 0.0;
      grad[j] = static_cast<T>((p - onehot) / static_cast<double>(n));
    }
  }
  res.loss = loss_acc / static_cast<double>(n);
  return res;
}

}  // namespace fer
