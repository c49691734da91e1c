// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major double-precision matrix plus the raw kernels the
// autograd layer builds on. Every reduction accumulates in increasing index
// order so results are bitwise reproducible.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "amulet/errors.hpp"

namespace amulet {

class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Tensor2: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Tensor2: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Tensor2 row_vector(std::span<const double> v) {
    return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }
  static Tensor2 identity(std::size_t n) {
    Tensor2 t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool same_shape(const Tensor2& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

namespace kernels {

// out += a * b, accumulating over the inner index in increasing order.
inline void matmul_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t p = a.rows(), q = a.cols(), s = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    double* c = C + i * s;
    const double* ar = A + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = ar[k];
      const double* br = B + k * s;
      for (std::size_t j = 0; j < s; ++j) c[j] += av * br[j];
    }
  }
}

// out += a^T * b  (a: p x q, b: p x s, out: q x s); accumulates over rows of a.
inline void matmul_tn_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t p = a.rows(), q = a.cols(), s = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t r = 0; r < p; ++r) {
    const double* ar = A + r * q;
    const double* br = B + r * s;
    for (std::size_t i = 0; i < q; ++i) {
      const double av = ar[i];
      double* c = C + i * s;
      for (std::size_t j = 0; j < s; ++j) c[j] += av * br[j];
    }
  }
}

// out += a * b^T  (a: p x s, b: q x s, out: p x q).
inline void matmul_nt_acc(const Tensor2& a, const Tensor2& b, Tensor2& out) {
  const std::size_t p = a.rows(), s = a.cols(), q = b.rows();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < p; ++i) {
    const double* ar = A + i * s;
    for (std::size_t j = 0; j < q; ++j) {
      const double* br = B + j * s;
      double acc = 0.0;
      for (std::size_t k = 0; k < s; ++k) acc += ar[k] * br[k];
      C[i * q + j] += acc;
    }
  }
}

}  // namespace kernels

/// Plain (untracked) matrix product.
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree (" + a.shape_str() + " * " + b.shape_str() + ")");
  }
  Tensor2 out(a.rows(), b.cols());
  kernels::matmul_acc(a, b, out);
  return out;
}

inline Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline std::string to_string(const Tensor2& t) {
  std::ostringstream os;
  os.precision(6);
  os << "[";
  for (std::size_t i = 0; i < t.rows(); ++i) {
    os << (i ? ", [" : "[");
    for (std::size_t j = 0; j < t.cols(); ++j) os << (j ? ", " : "") << t(i, j);
    os << "]";
  }
  os << "]";
  return os.str();
}

}  // namespace amulet
