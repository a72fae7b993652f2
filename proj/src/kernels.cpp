// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lrd/matrix.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace lrd::kernels {

bool parallel_enabled() {
#if defined(_OPENMP)
  return true;
#else
  return false;
#endif
}

int max_threads() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace reference {

void matmul(std::span<const double> A, std::span<const double> B, std::span<double> C,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[p * n + j];
      C[i * n + j] = accumulate ? C[i * n + j] + s : s;
    }
  }
}

void matmul_bt(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      C[i * n + j] = accumulate ? C[i * n + j] + s : s;
    }
  }
}

void matmul_at(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * B[p * n + j];
      C[i * n + j] = accumulate ? C[i * n + j] + s : s;
    }
  }
}

void softmax_rows(std::span<double> X, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* x = X.data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      x[c] = std::exp(x[c] - mx);
      z += x[c];
    }
    for (std::size_t c = 0; c < cols; ++c) x[c] /= z;
  }
}

}  // namespace reference

namespace {

// Both operands packed so that the reduction index is contiguous. The
// reduction order per output element is unchanged from the reference.
void dot_rows(const double* Ap, const double* Bp, double* C, std::size_t m, std::size_t k,
              std::size_t n, bool accumulate) {
  const bool par = m * n * k >= kParallelThreshold;
  (void)par;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* a = Ap + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b = Bp + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
      C[i * n + j] = accumulate ? C[i * n + j] + s : s;
    }
  }
}

std::vector<double> transpose(const double* X, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = X[r * cols + c];
  return t;
}

}  // namespace

void matmul(std::span<const double> A, std::span<const double> B, std::span<double> C,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::vector<double> bt = transpose(B.data(), k, n);
  dot_rows(A.data(), bt.data(), C.data(), m, k, n, accumulate);
}

void matmul_bt(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  dot_rows(A.data(), B.data(), C.data(), m, k, n, accumulate);
}

void matmul_at(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const std::vector<double> at = transpose(A.data(), k, m);
  const std::vector<double> bt = transpose(B.data(), k, n);
  dot_rows(at.data(), bt.data(), C.data(), m, k, n, accumulate);
}

void softmax_rows(std::span<double> X, std::size_t rows, std::size_t cols) {
  const bool par = rows * cols >= kParallelThreshold;
  (void)par;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t rr = 0; rr < static_cast<std::ptrdiff_t>(rows); ++rr) {
    reference::softmax_rows(X.subspan(static_cast<std::size_t>(rr) * cols, cols), 1, cols);
  }
}

}  // namespace lrd::kernels

namespace lrd {

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t(c, r) = m(r, c);
  return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("multiply: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  kernels::matmul(a.data, b.data, c.data, a.rows, a.cols, b.cols);
  return c;
}

double frobenius(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace lrd
