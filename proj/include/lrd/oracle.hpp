#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file oracle.hpp
 * @brief Brute-force ground truth on small enumerable instances.
 *
 * Everything here is exhaustive enumeration over an explicit support of
 * clean sequences. It is slow by design and capped at kMaxSupport entries.
 */

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lrd/common.hpp"
#include "lrd/denoiser.hpp"
#include "lrd/probcore.hpp"

namespace lrd {

inline constexpr std::size_t kMaxSupport = 4096;
inline constexpr double kSupportMassTol = 1e-12;

/// Explicit distribution over equal-length clean sequences.
class EnumerableDistribution {
 public:
  struct Entry {
    TokenSeq seq;
    double prob = 0.0;
  };

  /// Validates: positive probabilities summing to 1 within kSupportMassTol,
  /// distinct sequences of one length, ids in [0, V), size <= kMaxSupport.
  static EnumerableDistribution create(std::vector<Entry> entries, std::size_t V);
  /// Lines `probability<TAB>space-separated ids`; blank lines and `#` skipped.
  static EnumerableDistribution parse(std::istream& in, std::size_t V);
  static EnumerableDistribution load(const std::string& path, std::size_t V);

  std::size_t length() const { return length_; }
  std::size_t vocab() const { return vocab_; }
  const std::vector<Entry>& support() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::size_t length_ = 0;
  std::size_t vocab_ = 0;
};

/// Support entries consistent with the unmasked positions of x_t, with
/// probabilities renormalised. Throws Error on zero evidence mass.
std::vector<EnumerableDistribution::Entry> sequence_posterior(std::span<const TokenId> x_t,
                                                              const EnumerableDistribution& dist,
                                                              TokenId mask_token);

/// Per-position marginal of x0 given x_t. Unmasked positions come back as
/// point masses on the observed token.
std::vector<Categorical> exact_x0_posterior(std::span<const TokenId> x_t, const EnumerableDistribution& dist,
                                            TokenId mask_token);

/// Same closed form as true_posterior; kept here so oracle checks read
/// against one module.
PosteriorBelief exact_reverse_posterior(double alpha_prev, double alpha_cur, TokenId x0_token);

struct MonteCarloPosterior {
  std::size_t n_chains = 0;
  std::size_t n_masked = 0;     // chains masked at t
  std::size_t n_unmasked_prev = 0;  // of those, chains holding x0 at t - 1
  double frequency = 0.0;       // n_unmasked_prev / n_masked
  double expected = 0.0;        // closed-form p_x0
  double std_error = 0.0;       // binomial standard error around `expected`
  bool within(double n_sigma) const;
};

/// Simulates n_chains single-token forward chains step by step under
/// `schedule` up to t, conditions on MASK at t and counts x_{t-1} = x0.
MonteCarloPosterior simulate_reverse_posterior(const NoiseSchedule& schedule, std::size_t t, std::size_t n_chains,
                                               Rng& rng);

/// Approximation of the one-step reverse posterior at a masked position.
struct ApproxPosterior {
  enum class Kind { Hard, Soft };
  Kind kind = Kind::Hard;
  TokenId token = 0;  // Hard: point mass, MASK allowed (id V)
  Categorical soft;   // Soft: distribution over V + 1 outcomes, MASK last

  static ApproxPosterior hard(TokenId token) { return {Kind::Hard, token, {}}; }
  static ApproxPosterior soft_dist(Categorical dist) { return {Kind::Soft, 0, std::move(dist)}; }
};

struct HardSoftKl {
  double kl_hard = 0.0;  // kInfiniteKl when unbounded
  double kl_soft = 0.0;
};

/// Collapses an approximation onto the {x0, MASK, other} partition.
std::vector<double> partition_mass(const ApproxPosterior& approx, TokenId x0_token, std::size_t V);

/// Unsmoothed KL(q* || approx) on the {x0, MASK, other} partition for both
/// approximations. V is the content vocabulary; MASK is id V.
HardSoftKl kl_hard_vs_soft(const PosteriorBelief& q_star, const ApproxPosterior& hard, const ApproxPosterior& soft,
                           std::size_t V);

/// Distribution over noisy sequences, keyed by sequence.
using SequenceDist = std::vector<std::pair<TokenSeq, double>>;

/// q(x_{t-1} | x_t) by exhaustive enumeration of every clean sequence and
/// every per-position masking time under the per-step betas. Does not use
/// the cumulative survival products or the closed-form posterior.
SequenceDist brute_force_reverse_kernel(std::span<const TokenId> x_t, std::size_t t,
                                        const EnumerableDistribution& dist, std::span<const double> betas,
                                        TokenId mask_token);

/// Same kernel assembled from sequence_posterior and the closed-form
/// one-step posterior at every masked position.
SequenceDist factored_reverse_kernel(std::span<const TokenId> x_t, std::size_t t,
                                     const EnumerableDistribution& dist, const NoiseSchedule& schedule,
                                     TokenId mask_token);

/// Every x_t with positive probability at step t (noisy sequences of the
/// support under the schedule).
std::vector<TokenSeq> reachable_noisy_sequences(const EnumerableDistribution& dist, std::size_t t,
                                                const NoiseSchedule& schedule, TokenId mask_token);

/// Largest |p - q| over the union of both supports.
double max_abs_difference(const SequenceDist& a, const SequenceDist& b);

struct KernelCheck {
  std::size_t V = 0, L = 0, T = 0, t = 0;
  std::size_t n_observations = 0;  // reachable x_t compared
  double max_abs_error = 0.0;      // joint kernel and per-position marginals
};

/// For every V in 2..4, L in 1..3, T in 1..4 and t in 1..T, draws
/// `per_shape` random (support, betas) instances and compares the brute
/// force kernel with the factored one at every reachable x_t. The first
/// instance of each shape uses betas alternating 0, 1, 0, 1.
std::vector<KernelCheck> run_kernel_checks(std::uint64_t seed, std::size_t per_shape);

/// Exact tabular denoiser. An input row equal (bit for bit) to a token
/// embedding counts as observed; anything else counts as masked. Outputs
/// the exact x0 marginals. Positional vectors are zero.
class TabularDenoiser final : public Denoiser {
 public:
  TabularDenoiser(EnumerableDistribution dist, std::size_t d, Rng& rng);

  EmbeddingTable table() const override;
  std::size_t max_length() const override { return dist_.length(); }
  void add_positional(Matrix&) const override {}
  DenoiserOutput forward(const Matrix& embeddings) const override;

 private:
  EnumerableDistribution dist_;
  std::size_t d_;
  std::vector<double> rows_;
};

}  // namespace lrd
