// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/stability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace lrd {

namespace {

constexpr double kSpectralTol = 1e-8;
constexpr std::uint64_t kPowerSeed = 0x9e3779b97f4a7c15ULL;

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// y = M v
void apply(const Matrix& M, std::span<const double> v, std::span<double> y) {
  for (std::size_t r = 0; r < M.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < M.cols; ++c) s += M(r, c) * v[c];
    y[r] = s;
  }
}

// y = M^T u
void apply_t(const Matrix& M, std::span<const double> u, std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t r = 0; r < M.rows; ++r)
    for (std::size_t c = 0; c < M.cols; ++c) y[c] += M(r, c) * u[r];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SpectralEstimate spectral_norm(const Matrix& M, std::size_t max_iter) {
  for (double x : M.data) {
    if (!std::isfinite(x)) throw Error("spectral_norm: matrix has non-finite entries");
  }
  SpectralEstimate est;
  if (M.rows == 0 || M.cols == 0) return est;

  Rng rng(kPowerSeed);
  std::vector<double> v(M.cols), u(M.rows), w(M.cols);
  for (double& x : v) x = normal01(rng);
  double n = norm2(v);
  for (double& x : v) x /= n;

  double sigma = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    apply(M, v, u);
    const double next = norm2(u);  // ||M v|| with ||v|| = 1
    est.iterations = it;
    est.residual = std::abs(next - sigma);
    sigma = next;
    if (sigma == 0.0) break;  // v in the null space; M is zero on the start direction
    apply_t(M, u, w);
    n = norm2(w);
    if (n == 0.0) break;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = w[i] / n;
    // Tighter than the reported tolerance: sigma error is roughly the
    // residual times 1 / (1 - contraction), so stop only when it is tiny.
    if (it > 1 && est.residual <= 1e-15 * std::max(1.0, sigma)) break;
  }
  est.sigma_max = sigma;
  if (est.residual >= kSpectralTol) {
    throw NonConvergence("spectral_norm: residual " + fmt(est.residual) + " after " +
                         std::to_string(est.iterations) + " iterations");
  }
  return est;
}

double lipschitz_bound(double sigma_v, double sigma_qk, double epsilon, double c) {
  if (!(epsilon >= 0.0)) throw Error("lipschitz_bound: epsilon must be >= 0");
  return c * sigma_v * sigma_qk * epsilon * epsilon;
}

double lipschitz_bound(const DenoiserModel& model, std::size_t layer, std::size_t head, double epsilon, double c) {
  const SpectralInputs s = model.spectral_inputs(layer, head);
  return lipschitz_bound(spectral_norm(s.v).sigma_max, spectral_norm(s.qk).sigma_max, epsilon, c);
}

LipschitzSample empirical_lipschitz(const SequenceMap& f, std::span<const double> center, std::size_t seq_len,
                                    double epsilon, std::size_t n_samples, Rng& rng) {
  if (!(epsilon > 0.0)) throw Error("empirical_lipschitz: epsilon must be > 0");
  if (n_samples < 2) throw Error("empirical_lipschitz: n_samples must be >= 2");
  const std::size_t d = center.size();
  auto draw = [&] {
    Matrix x(seq_len, d);
    for (std::size_t i = 0; i < seq_len; ++i) {
      auto row = x.row(i);
      for (double& v : row) v = normal01(rng);
      const double n = norm2(row);
      const double radius = epsilon * std::pow(uniform01(rng), 1.0 / static_cast<double>(d));
      for (std::size_t j = 0; j < d; ++j) row[j] = center[j] + (n > 0.0 ? radius * row[j] / n : 0.0);
    }
    return x;
  };

  std::vector<double> ratios;
  ratios.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const Matrix x = draw();
    const Matrix y = draw();
    double din = 0.0;
    for (std::size_t k = 0; k < x.data.size(); ++k) din += (x.data[k] - y.data[k]) * (x.data[k] - y.data[k]);
    if (din == 0.0) continue;
    const Matrix fx = f(x);
    const Matrix fy = f(y);
    double dout = 0.0;
    for (std::size_t k = 0; k < fx.data.size(); ++k) dout += (fx.data[k] - fy.data[k]) * (fx.data[k] - fy.data[k]);
    ratios.push_back(std::sqrt(dout) / std::sqrt(din));
  }

  LipschitzSample r;
  r.n_pairs = ratios.size();
  if (ratios.empty()) return r;
  std::sort(ratios.begin(), ratios.end());
  r.max_ratio = ratios.back();
  const std::size_t m = ratios.size() / 2;
  r.median_ratio = ratios.size() % 2 ? ratios[m] : 0.5 * (ratios[m - 1] + ratios[m]);
  return r;
}

LipschitzSample empirical_lipschitz(const DenoiserModel& model, std::size_t layer, std::size_t head, double epsilon,
                                    const LipschitzOptions& options, Rng& rng) {
  const auto& cfg = model.config();
  if (layer >= cfg.n_layers || head > cfg.n_heads) throw Error("empirical_lipschitz: index out of range");
  if (options.seq_len < 1 || options.seq_len > cfg.L_max) throw Error("empirical_lipschitz: bad seq_len");
  std::vector<double> center(cfg.d, 0.0);
  if (options.center == BallCenter::Mask) {
    const auto m = model.table().mask_row();
    center.assign(m.begin(), m.end());
  }
  const SequenceMap f = [&](const Matrix& x) { return model.attention_map(layer, head, x, x); };
  return empirical_lipschitz(f, center, options.seq_len, epsilon, options.n_samples, rng);
}

LipschitzSweep lipschitz_sweep(const DenoiserModel& model, std::size_t layer, std::size_t head,
                               std::span<const double> epsilons, const LipschitzOptions& options,
                               std::uint64_t seed, bool calibrate, double c) {
  if (epsilons.empty()) throw Error("lipschitz_sweep: empty epsilon grid");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0.0) || (i > 0 && !(epsilons[i] > epsilons[i - 1]))) {
      throw Error("lipschitz_sweep: epsilons must be positive and strictly increasing");
    }
  }
  const SpectralInputs s = model.spectral_inputs(layer, head);
  const double sv = spectral_norm(s.v).sigma_max;
  const double sqk = spectral_norm(s.qk).sigma_max;

  LipschitzSweep sweep;
  sweep.layer = layer;
  sweep.head = head;
  for (double eps : epsilons) {
    Rng rng(seed);  // same draws at every radius
    const LipschitzSample e = empirical_lipschitz(model, layer, head, eps, options, rng);
    sweep.rows.push_back({eps, 0.0, e.max_ratio, e.median_ratio, e.n_pairs});
  }
  const double unit = lipschitz_bound(sv, sqk, epsilons.front(), 1.0);
  sweep.c = calibrate ? (unit > 0.0 ? sweep.rows.front().max_ratio / unit : 0.0) : c;
  for (auto& row : sweep.rows) row.bound = lipschitz_bound(sv, sqk, row.epsilon, sweep.c);
  return sweep;
}

std::string lipschitz_csv(const LipschitzSweep& sweep) {
  std::string out = kLipschitzCsvHeader;
  out += '\n';
  for (const auto& r : sweep.rows) {
    out += fmt(r.epsilon) + ',' + fmt(r.bound) + ',' + fmt(r.max_ratio) + ',' + fmt(r.median_ratio) + ',' +
           std::to_string(r.n_pairs) + '\n';
  }
  return out;
}

EmbeddingNormStats embedding_norm_stats(const EmbeddingTable& table) {
  EmbeddingNormStats s;
  s.mask_norm = norm2(table.mask_row());
  double total = 0.0;
  for (std::size_t v = 0; v < table.vocab(); ++v) total += norm2(table.row(v));
  s.mean_token_norm = table.vocab() ? total / static_cast<double>(table.vocab()) : 0.0;
  s.ratio = s.mean_token_norm > 0.0 ? s.mask_norm / s.mean_token_norm : 0.0;
  return s;
}

}  // namespace lrd
