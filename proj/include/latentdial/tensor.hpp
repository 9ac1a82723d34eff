#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentdial/kernels.hpp"

namespace latentdial {

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }
  std::span<double> row_span(std::size_t r) { return {row(r), cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {row(r), cols_}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void resize(std::size_t rows, std::size_t cols) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, 0.0);
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

// out = a * w^T (+ bias per column). a: [m x in], w: [out x in].
inline void linear_forward(const Matrix& a, const Matrix& w, const std::vector<double>* bias,
                           Matrix& out) {
  require_shape(a.cols() == w.cols(), "linear_forward input width");
  out.resize(a.rows(), w.rows());
  kernels::active_kernels().gemm(kernels::Trans::No, kernels::Trans::Yes, a.rows(), w.rows(),
                                 a.cols(), 1.0, a.data(), a.cols(), w.data(), w.cols(), 0.0,
                                 out.data(), out.cols());
  if (bias) {
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double* o = out.row(r);
      for (std::size_t c = 0; c < out.cols(); ++c) o[c] += (*bias)[c];
    }
  }
}

// Generic accumulate: c = alpha * op(a) op(b) + beta * c over full matrices.
inline void gemm(kernels::Trans ta, kernels::Trans tb, double alpha, const Matrix& a,
                 const Matrix& b, double beta, Matrix& c) {
  const std::size_t m = ta == kernels::Trans::No ? a.rows() : a.cols();
  const std::size_t k = ta == kernels::Trans::No ? a.cols() : a.rows();
  const std::size_t kb = tb == kernels::Trans::No ? b.rows() : b.cols();
  const std::size_t n = tb == kernels::Trans::No ? b.cols() : b.rows();
  require_shape(k == kb && c.rows() == m && c.cols() == n, "gemm");
  kernels::active_kernels().gemm(ta, tb, m, n, k, alpha, a.data(), a.cols(), b.data(), b.cols(),
                                 beta, c.data(), c.cols());
}

}  // namespace latentdial
