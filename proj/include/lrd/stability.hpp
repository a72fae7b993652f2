#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file stability.hpp
 * @brief Local Lipschitz probes for a single attention map near e_MASK.
 *
 * The bound tracked here is
 *
 *   K(eps) = c * ||W_V||_2 * ||W_Q W_K^T||_2 * eps^2
 *
 * and the empirical side feeds pairs of inputs drawn from an eps-ball into
 * one attention layer (no layer norm, no residual, no feed-forward) and
 * measures ||f(x) - f(y)|| / ||x - y||.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lrd/common.hpp"
#include "lrd/denoiser.hpp"
#include "lrd/matrix.hpp"

namespace lrd {

struct SpectralEstimate {
  double sigma_max = 0.0;
  std::size_t iterations = 0;
  double residual = 0.0;  // |change in sigma| over the last iteration
};

/// Largest singular value by power iteration on M^T M from a fixed start
/// vector. Throws Error on non-finite entries and NonConvergence if the
/// residual is still >= 1e-8 after max_iter iterations.
SpectralEstimate spectral_norm(const Matrix& M, std::size_t max_iter = 200000);

/// c * sigma_v * sigma_qk * eps^2.
double lipschitz_bound(double sigma_v, double sigma_qk, double epsilon, double c);
/// Same, with the spectral norms taken from one head of `model`.
double lipschitz_bound(const DenoiserModel& model, std::size_t layer, std::size_t head, double epsilon, double c);

enum class BallCenter { Mask, Origin };

struct LipschitzSample {
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  std::size_t n_pairs = 0;  // pairs with a non-zero input difference
};

/// Map from an L x d input block to an output block.
using SequenceMap = std::function<Matrix(const Matrix&)>;

/// Draws n_samples pairs (x, y); every row of each lies uniformly in the
/// ball of radius epsilon around `center`. Pairs with x == y are skipped.
LipschitzSample empirical_lipschitz(const SequenceMap& f, std::span<const double> center, std::size_t seq_len,
                                    double epsilon, std::size_t n_samples, Rng& rng);

struct LipschitzOptions {
  std::size_t seq_len = 8;
  std::size_t n_samples = 200;
  BallCenter center = BallCenter::Mask;
};

/// One head (head < n_heads) or the whole projected layer (head == n_heads)
/// of `model`, with queries, keys and values from the same input.
LipschitzSample empirical_lipschitz(const DenoiserModel& model, std::size_t layer, std::size_t head, double epsilon,
                                    const LipschitzOptions& options, Rng& rng);

struct LipschitzRow {
  double epsilon = 0.0;
  double bound = 0.0;
  double max_ratio = 0.0;
  double median_ratio = 0.0;
  std::size_t n_pairs = 0;
};

struct LipschitzSweep {
  std::size_t layer = 0;
  std::size_t head = 0;
  double c = 1.0;
  std::vector<LipschitzRow> rows;
};

/// Probes every epsilon (strictly increasing, positive) with the same seed
/// so the samples differ only in scale. With calibrate set, c is chosen so
/// the bound equals max_ratio at the smallest epsilon; otherwise c is used
/// as given.
LipschitzSweep lipschitz_sweep(const DenoiserModel& model, std::size_t layer, std::size_t head,
                               std::span<const double> epsilons, const LipschitzOptions& options,
                               std::uint64_t seed, bool calibrate, double c = 1.0);

inline constexpr const char* kLipschitzCsvHeader = "epsilon,bound,max_ratio,median_ratio,n_pairs";
std::string lipschitz_csv(const LipschitzSweep& sweep);

struct EmbeddingNormStats {
  double mask_norm = 0.0;
  double mean_token_norm = 0.0;
  double ratio = 0.0;  // mask_norm / mean_token_norm
};

EmbeddingNormStats embedding_norm_stats(const EmbeddingTable& table);

}  // namespace lrd
