#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "fer/errors.hpp"
#include "fer/rng.hpp"

namespace fer {

/// Dense N-dimensional array, row-major, NCHW convention for image data.
/// The scalar type is float or double; training defaults to float, the
/// gradient-check and oracle suites instantiate double.
///
/// Values are treated as immutable once an operation returns a tensor;
/// operations build new tensors rather than mutating operands (the optimizer
/// and layer caches, which own their tensors, update them in place).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is float or double");

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_size(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape), T{0});
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    return Tensor(std::move(shape), value);
  }

  static Tensor normal(std::vector<std::size_t> shape, T mean, T stddev,
                       SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) {
      v = static_cast<T>(rng.normal(static_cast<double>(mean),
                                    static_cast<double>(stddev)));
    }
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> shape, T lo, T hi,
                        SeededRng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) {
      v = static_cast<T>(
          rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    }
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("axis " + std::to_string(axis) +
                       " out of range for rank " +
                       std::to_string(shape_.size()));
    }
    return shape_[axis];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Same data, new extents; the element count must be unchanged.
  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size()) {
      throw ShapeError("reshape to " + shape_string(new_shape) +
                       " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << 'x';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
      n *= e;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     Tensor<T>::shape_string(a.shape()) + " vs " +
                     Tensor<T>::shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <typename T>
Tensor<T> max_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > s ? a[i] : s;
  return out;
}

// ---------------------------------------------------------------------------
// Raw GEMM kernels. Inner accumulation order is fixed (k ascending), and
// threads only ever own whole output rows, so results are bitwise identical
// to the sequential loop for any thread count.
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[p * m + static_cast<std::size_t>(i)];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// Standard matrix product of rank-2 tensors.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: operands must be rank 2");
  }
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner extents differ, " +
                     Tensor<T>::shape_string(a.shape()) + " vs " +
                     Tensor<T>::shape_string(b.shape()));
  }
  Tensor<T> c({a.shape()[0], b.shape()[1]});
  detail::gemm_nn(a.data(), b.data(), c.data(), a.shape()[0], a.shape()[1],
                  b.shape()[1], false);
  return c;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
T reduce_sum(const Tensor<T>& a) {
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

template <typename T>
T reduce_mean(const Tensor<T>& a) {
  return reduce_sum(a) / static_cast<T>(a.size());
}

template <typename T>
T reduce_max(const Tensor<T>& a) {
  T best = a[0];
  for (std::size_t i = 1; i < a.size(); ++i) best = std::max(best, a[i]);
  return best;
}

/// Flat argmax; ties break toward the lowest index so downstream
/// classification decisions are deterministic.
template <typename T>
std::size_t argmax(const Tensor<T>& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (a[i] > a[best]) best = i;
  }
  return best;
}

namespace detail {

template <typename T, typename Fold>
Tensor<T> reduce_axis(const Tensor<T>& a, std::size_t axis, T init,
                      Fold fold, bool divide_by_extent) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce: axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(a.rank()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  const std::size_t extent = a.shape()[axis];

  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis) out_shape.push_back(a.shape()[i]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<T> out(out_shape, init);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t e = 0; e < extent; ++e) {
      const T* src = a.data() + (o * extent + e) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] = fold(dst[i], src[i]);
    }
  }
  if (divide_by_extent) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] /= static_cast<T>(extent);
    }
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> reduce_sum_axis(const Tensor<T>& a, std::size_t axis) {
  return detail::reduce_axis(
      a, axis, T{0}, [](T x, T y) { return x + y; }, false);
}

template <typename T>
Tensor<T> reduce_mean_axis(const Tensor<T>& a, std::size_t axis) {
  return detail::reduce_axis(
      a, axis, T{0}, [](T x, T y) { return x + y; }, true);
}

template <typename T>
Tensor<T> reduce_max_axis(const Tensor<T>& a, std::size_t axis) {
  return detail::reduce_axis(
      a, axis, std::numeric_limits<T>::lowest(),
      [](T x, T y) { return x > y ? x : y; }, false);
}

/// Row-wise argmax of a rank-2 tensor (ties to the lowest column).
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("argmax_rows: rank-2 tensor required");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = a.data() + r * cols;
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = best;
  }
  return out;
}

/// Validation hook for the "finite after finite" invariant; NaN/Inf
/// propagation is surfaced here rather than silently carried forward.
template <typename T>
void check_finite(const Tensor<T>& a, const std::string& context) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(static_cast<double>(a[i]))) {
      throw NumericError(context + ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

}  // namespace fer
