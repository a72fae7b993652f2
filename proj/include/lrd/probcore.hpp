#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file probcore.hpp
 * @brief Probability primitives for the absorbing (masking) diffusion process.
 *
 * Categorical distributions, Shannon entropy, KL divergence, top-p nucleus
 * truncation, noise schedules, the forward masking process and the exact
 * one-step reverse posterior for a masked position.
 *
 * All logs are natural logs. Probabilities are doubles.
 */

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "lrd/common.hpp"

namespace lrd {

/// Returned by kl() when q has a zero where p has mass and no smoothing is
/// applied. Produced deliberately, never by overflow.
inline constexpr double kInfiniteKl = std::numeric_limits<double>::infinity();

/// Tolerance on the total mass of a validated Categorical.
inline constexpr double kSimplexTol = 1e-9;

/// Probability vector over V tokens.
class Categorical {
 public:
  Categorical() = default;

  /// Validates non-negativity and |sum - 1| <= kSimplexTol.
  static Categorical checked(std::vector<double> probs);
  /// Divides by the total mass. Rejects negative entries and zero mass.
  static Categorical normalized(std::vector<double> weights);
  /// Point mass on `token` over `size` outcomes.
  static Categorical one_hot(std::size_t size, std::size_t token);
  static Categorical uniform(std::size_t size);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  /// Lowest index among the maximal entries.
  std::size_t argmax() const;

  friend bool operator==(const Categorical&, const Categorical&) = default;

 private:
  explicit Categorical(std::vector<double> probs) : probs_(std::move(probs)) {}
  std::vector<double> probs_;
};

/// q*(x_{t-1} | x_t = MASK, x0): mass on the clean token and on MASK.
struct PosteriorBelief {
  double p_x0 = 0.0;
  double p_mask = 1.0;
  TokenId x0_token = 0;
};

/// Survival probabilities alpha*_0..T of the absorbing forward process.
class NoiseSchedule {
 public:
  /// alpha*_t = prod_{s<=t} (1 - beta_s). Rejects beta outside [0, 1].
  static NoiseSchedule from_betas(std::span<const double> betas);
  /// alpha*_t = 1 - t/T, so alpha*_T = 0.
  static NoiseSchedule linear(std::size_t T);

  std::size_t steps() const { return alphas_.size() - 1; }
  double alpha(std::size_t t) const { return alphas_.at(t); }
  /// Per-step masking probability beta_t, t in [1, T].
  double beta(std::size_t t) const { return betas_.at(t - 1); }
  std::span<const double> alphas() const { return alphas_; }

 private:
  std::vector<double> alphas_;
  std::vector<double> betas_;
};

/// Top-p nucleus: support in descending-probability order (ties by ascending
/// id) and the distribution renormalised over it.
struct NucleusResult {
  std::vector<std::size_t> support;
  std::vector<double> renorm_probs;  // aligned with support, sums to 1
  double mass = 0.0;                 // original mass covered by support
};

NoiseSchedule schedule_from_betas(std::span<const double> betas);

/// Each position independently keeps its token with probability alpha*_t,
/// otherwise becomes `mask_token`.
TokenSeq forward_mask(std::span<const TokenId> x0, std::size_t t,
                      const NoiseSchedule& schedule, TokenId mask_token, Rng& rng);

/// One forward transition x_{s-1} -> x_s with masking probability beta.
/// Already-masked positions stay masked.
TokenSeq forward_step(std::span<const TokenId> x_prev, double beta,
                      TokenId mask_token, Rng& rng);

/// Closed-form reverse posterior for a position masked at t.
PosteriorBelief true_posterior(double alpha_prev, double alpha_cur, TokenId x0_token);

/// Shannon entropy in nats, 0 log 0 = 0.
double entropy(std::span<const double> p);
inline double entropy(const Categorical& p) { return entropy(p.probs()); }

/// Entropy of the renormalised nucleus divided by log |support|, in [0, 1].
/// A singleton nucleus returns 0.
double normalized_entropy(const NucleusResult& nucleus);

/// Entropy of the full distribution divided by log V (alternative
/// normalisation, kept for comparison).
double normalized_entropy_full(const Categorical& p);

/// KL(p || q) in nats. smoothing = 0 is exact and may return kInfiniteKl.
/// smoothing > 0 adds it to every entry of both and renormalises first.
double kl(std::span<const double> p, std::span<const double> q, double smoothing);
inline double kl(const Categorical& p, const Categorical& q, double smoothing) {
  return kl(p.probs(), q.probs(), smoothing);
}

/// Minimal descending prefix with cumulative mass >= p_thresh.
NucleusResult top_p_nucleus(std::span<const double> p, double p_thresh);
inline NucleusResult top_p_nucleus(const Categorical& p, double p_thresh) {
  return top_p_nucleus(p.probs(), p_thresh);
}

}  // namespace lrd
