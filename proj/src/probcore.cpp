// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/probcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lrd {

// Slack when comparing a cumulative sum to the nucleus threshold; absorbs
// rounding such as 0.6 + 0.3 < 0.9 in binary floating point.
constexpr double kCumulativeSlack = 1e-12;

double normal01(Rng& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Categorical Categorical::checked(std::vector<double> probs) {
  double total = 0.0;
  for (double v : probs) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("Categorical: negative or non-finite entry");
    total += v;
  }
  if (probs.empty() || std::abs(total - 1.0) > kSimplexTol) {
    throw Error("Categorical: entries do not sum to 1");
  }
  return Categorical(std::move(probs));
}

Categorical Categorical::normalized(std::vector<double> weights) {
  double total = 0.0;
  for (double v : weights) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("Categorical: negative or non-finite weight");
    total += v;
  }
  if (!(total > 0.0)) throw Error("Categorical: zero total mass");
  for (double& v : weights) v /= total;
  return Categorical(std::move(weights));
}

Categorical Categorical::one_hot(std::size_t size, std::size_t token) {
  if (token >= size) throw Error("Categorical::one_hot: token out of range");
  std::vector<double> p(size, 0.0);
  p[token] = 1.0;
  return Categorical(std::move(p));
}

Categorical Categorical::uniform(std::size_t size) {
  if (size == 0) throw Error("Categorical::uniform: empty");
  return Categorical(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

std::size_t Categorical::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

NoiseSchedule NoiseSchedule::from_betas(std::span<const double> betas) {
  NoiseSchedule s;
  s.alphas_.reserve(betas.size() + 1);
  s.alphas_.push_back(1.0);
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw Error("schedule_from_betas: beta outside [0, 1]");
    s.alphas_.push_back(s.alphas_.back() * (1.0 - b));
    s.betas_.push_back(b);
  }
  return s;
}

NoiseSchedule NoiseSchedule::linear(std::size_t T) {
  if (T == 0) throw Error("NoiseSchedule::linear: T must be >= 1");
  std::vector<double> betas(T);
  double prev = 1.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const double cur = 1.0 - static_cast<double>(t) / static_cast<double>(T);
    betas[t - 1] = prev > 0.0 ? 1.0 - cur / prev : 1.0;
    prev = cur;
  }
  NoiseSchedule s = from_betas(betas);
  // Pin the closed form exactly rather than the rounded running product.
  for (std::size_t t = 0; t <= T; ++t) {
    s.alphas_[t] = 1.0 - static_cast<double>(t) / static_cast<double>(T);
  }
  return s;
}

NoiseSchedule schedule_from_betas(std::span<const double> betas) {
  return NoiseSchedule::from_betas(betas);
}

TokenSeq forward_mask(std::span<const TokenId> x0, std::size_t t,
                      const NoiseSchedule& schedule, TokenId mask_token, Rng& rng) {
  if (t > schedule.steps()) throw Error("forward_mask: t exceeds schedule length");
  const double keep = schedule.alpha(t);
  TokenSeq out(x0.begin(), x0.end());
  for (auto& tok : out) {
    if (uniform01(rng) >= keep) tok = mask_token;
  }
  return out;
}

TokenSeq forward_step(std::span<const TokenId> x_prev, double beta,
                      TokenId mask_token, Rng& rng) {
  TokenSeq out(x_prev.begin(), x_prev.end());
  for (auto& tok : out) {
    const bool flip = uniform01(rng) < beta;
    if (flip) tok = mask_token;
  }
  return out;
}

PosteriorBelief true_posterior(double alpha_prev, double alpha_cur, TokenId x0_token) {
  if (!(alpha_cur >= 0.0 && alpha_cur <= 1.0) || !(alpha_prev >= 0.0 && alpha_prev <= 1.0)) {
    throw Error("true_posterior: alphas must lie in [0, 1]");
  }
  if (alpha_cur >= 1.0) throw Error("true_posterior: alpha_cur = 1, position cannot be masked");
  if (alpha_prev < alpha_cur) throw Error("true_posterior: non-monotone schedule");
  PosteriorBelief b;
  b.x0_token = x0_token;
  const double denom = 1.0 - alpha_cur;
  b.p_x0 = (alpha_prev - alpha_cur) / denom;
  b.p_mask = 1.0 - b.p_x0;
  return b;
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double normalized_entropy(const NucleusResult& nucleus) {
  const std::size_t n = nucleus.support.size();
  if (n == 0) throw Error("normalized_entropy: empty nucleus");
  if (n == 1) return 0.0;
  const double h = entropy(nucleus.renorm_probs) / std::log(static_cast<double>(n));
  return std::clamp(h, 0.0, 1.0);
}

double normalized_entropy_full(const Categorical& p) {
  if (p.size() <= 1) return 0.0;
  return std::clamp(entropy(p) / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

double kl(std::span<const double> p, std::span<const double> q, double smoothing) {
  if (p.size() != q.size()) throw Error("kl: dimension mismatch");
  if (smoothing < 0.0) throw Error("kl: negative smoothing");
  if (smoothing == 0.0) {
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] <= 0.0) continue;
      if (q[i] <= 0.0) return kInfiniteKl;
      d += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(d, 0.0);
  }
  const double n = static_cast<double>(p.size());
  double zp = 0.0, zq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    zp += p[i];
    zq += q[i];
  }
  zp += n * smoothing;
  zq += n * smoothing;
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double ps = (p[i] + smoothing) / zp;
    const double qs = (q[i] + smoothing) / zq;
    d += ps * std::log(ps / qs);
  }
  return std::max(d, 0.0);
}

NucleusResult top_p_nucleus(std::span<const double> p, double p_thresh) {
  if (!(p_thresh > 0.0) || p_thresh > 1.0) throw Error("top_p_nucleus: p_thresh must lie in (0, 1]");
  std::vector<std::size_t> order;
  order.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) order.push_back(i);
  }
  if (order.empty()) throw Error("top_p_nucleus: distribution has no positive mass");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });

  NucleusResult r;
  double cum = 0.0;
  for (std::size_t idx : order) {
    r.support.push_back(idx);
    cum += p[idx];
    if (p_thresh < 1.0 && cum >= p_thresh - kCumulativeSlack) break;
  }
  r.mass = cum;
  r.renorm_probs.reserve(r.support.size());
  for (std::size_t idx : r.support) r.renorm_probs.push_back(p[idx] / cum);
  return r;
}

}  // namespace lrd
