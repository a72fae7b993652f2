#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file kernels.hpp
 * @brief Dense row-major kernels used by the denoiser.
 *
 * Every kernel has a serial reference in `lrd::kernels::reference` and an
 * OpenMP version in `lrd::kernels`. The parallel versions split work over
 * output rows only, so each output element is accumulated by one thread in
 * the same order as the reference: results are bit-identical to it.
 */

#include <cstddef>
#include <span>

namespace lrd::kernels {

/// Problems with fewer multiply-adds than this run serially.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

/// Whether the library was compiled with OpenMP.
bool parallel_enabled();
/// Threads an OpenMP region would use (1 without OpenMP).
int max_threads();

/// C[m x n] (+)= A[m x k] * B[k x n]
void matmul(std::span<const double> A, std::span<const double> B, std::span<double> C,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// C[m x n] (+)= A[m x k] * B[n x k]^T
void matmul_bt(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// C[m x n] (+)= A[k x m]^T * B[k x n]
void matmul_at(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
/// In-place numerically stable softmax of each row of X[rows x cols].
void softmax_rows(std::span<double> X, std::size_t rows, std::size_t cols);

namespace reference {
void matmul(std::span<const double> A, std::span<const double> B, std::span<double> C,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_bt(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_at(std::span<const double> A, std::span<const double> B, std::span<double> C,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void softmax_rows(std::span<double> X, std::size_t rows, std::size_t cols);
}  // namespace reference

}  // namespace lrd::kernels
