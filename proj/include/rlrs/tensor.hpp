// Copyright (c) 2026, The rlrs-lab Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef RLRS_TENSOR_HPP
#define RLRS_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rlrs/errors.hpp"

namespace rlrs {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array of doubles, rank 1 to 4.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_))
      throw DomainError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_string(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Row count when viewed as a matrix (all leading dims collapsed).
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw DomainError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), data_);
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    if (shape_.empty() || shape_.size() > 4)
      throw DomainError("tensor rank must be 1..4, got shape " + shape_string(shape_));
    for (auto d : shape_)
      if (d == 0) throw DomainError("tensor dimensions must be positive, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace kernels {

// C[m,n] += A[m,k] * B[k,n]. Four rows of C share each row of B; every
// C element still accumulates over p in order.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n], four rows of A and B at a time; every C
// element still accumulates over i in order.
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* b0 = b + i * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        double t = crow[j];
        t += v0 * b0[j];
        t += v1 * b1[j];
        t += v2 * b2[j];
        t += v3 * b3[j];
        crow[j] = t;
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T, via an explicit transpose of B so the inner
// loop stays contiguous and vectorizes.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(a, bt.data(), c, m, n, k);
}

}  // namespace kernels

}  // namespace rlrs

#endif  // RLRS_TENSOR_HPP
