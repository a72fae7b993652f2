// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lrd {

EnumerableDistribution EnumerableDistribution::create(std::vector<Entry> entries, std::size_t V) {
  if (entries.empty()) throw Error("EnumerableDistribution: empty support");
  if (entries.size() > kMaxSupport) {
    throw Error("EnumerableDistribution: support of " + std::to_string(entries.size()) + " exceeds " +
                std::to_string(kMaxSupport));
  }
  if (V < 1) throw Error("EnumerableDistribution: V must be >= 1");
  const std::size_t L = entries.front().seq.size();
  double total = 0.0;
  std::set<TokenSeq> seen;
  for (const auto& e : entries) {
    if (e.seq.size() != L) throw Error("EnumerableDistribution: sequences differ in length");
    if (!(e.prob > 0.0) || !std::isfinite(e.prob)) throw Error("EnumerableDistribution: probabilities must be > 0");
    for (TokenId t : e.seq) {
      if (t < 0 || static_cast<std::size_t>(t) >= V) throw Error("EnumerableDistribution: token id out of range");
    }
    if (!seen.insert(e.seq).second) throw Error("EnumerableDistribution: duplicate sequence");
    total += e.prob;
  }
  if (std::abs(total - 1.0) > kSupportMassTol) throw Error("EnumerableDistribution: probabilities do not sum to 1");
  EnumerableDistribution d;
  d.entries_ = std::move(entries);
  d.length_ = L;
  d.vocab_ = V;
  return d;
}

EnumerableDistribution EnumerableDistribution::parse(std::istream& in, std::size_t V) {
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("EnumerableDistribution: line " + std::to_string(lineno) + " has no tab");
    Entry e;
    try {
      std::size_t used = 0;
      e.prob = std::stod(line.substr(0, tab), &used);
      if (used != tab) throw Error("trailing characters");
    } catch (const std::exception&) {
      throw Error("EnumerableDistribution: bad probability on line " + std::to_string(lineno));
    }
    std::istringstream ids(line.substr(tab + 1));
    long long id = 0;
    while (ids >> id) e.seq.push_back(static_cast<TokenId>(id));
    if (!ids.eof()) throw Error("EnumerableDistribution: bad token id on line " + std::to_string(lineno));
    entries.push_back(std::move(e));
  }
  return create(std::move(entries), V);
}

EnumerableDistribution EnumerableDistribution::load(const std::string& path, std::size_t V) {
  std::ifstream f(path);
  if (!f) throw Error("EnumerableDistribution: cannot open " + path);
  return parse(f, V);
}

std::vector<EnumerableDistribution::Entry> sequence_posterior(std::span<const TokenId> x_t,
                                                              const EnumerableDistribution& dist,
                                                              TokenId mask_token) {
  if (x_t.size() != dist.length()) throw Error("sequence_posterior: length mismatch");
  std::vector<EnumerableDistribution::Entry> out;
  double mass = 0.0;
  for (const auto& e : dist.support()) {
    bool ok = true;
    for (std::size_t i = 0; i < x_t.size() && ok; ++i) ok = x_t[i] == mask_token || x_t[i] == e.seq[i];
    if (!ok) continue;
    out.push_back(e);
    mass += e.prob;
  }
  if (out.empty()) throw Error("sequence_posterior: evidence has zero probability under the distribution");
  for (auto& e : out) e.prob /= mass;
  return out;
}

std::vector<Categorical> exact_x0_posterior(std::span<const TokenId> x_t, const EnumerableDistribution& dist,
                                            TokenId mask_token) {
  const auto post = sequence_posterior(x_t, dist, mask_token);
  const std::size_t V = dist.vocab();
  std::vector<Categorical> out;
  out.reserve(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (x_t[i] != mask_token) {
      out.push_back(Categorical::one_hot(V, static_cast<std::size_t>(x_t[i])));
      continue;
    }
    std::vector<double> w(V, 0.0);
    for (const auto& e : post) w[static_cast<std::size_t>(e.seq[i])] += e.prob;
    out.push_back(Categorical::normalized(std::move(w)));
  }
  return out;
}

PosteriorBelief exact_reverse_posterior(double alpha_prev, double alpha_cur, TokenId x0_token) {
  return true_posterior(alpha_prev, alpha_cur, x0_token);
}

bool MonteCarloPosterior::within(double n_sigma) const {
  return std::abs(frequency - expected) <= n_sigma * std_error;
}

MonteCarloPosterior simulate_reverse_posterior(const NoiseSchedule& schedule, std::size_t t, std::size_t n_chains,
                                               Rng& rng) {
  if (t < 1 || t > schedule.steps()) throw Error("simulate_reverse_posterior: t out of range");
  constexpr TokenId kToken = 0;
  constexpr TokenId kMask = 1;
  MonteCarloPosterior r;
  r.n_chains = n_chains;
  TokenSeq x(1);
  for (std::size_t c = 0; c < n_chains; ++c) {
    x[0] = kToken;
    TokenId prev = kToken;
    for (std::size_t s = 1; s <= t; ++s) {
      prev = x[0];
      x = forward_step(x, schedule.beta(s), kMask, rng);
    }
    if (x[0] != kMask) continue;
    ++r.n_masked;
    if (prev == kToken) ++r.n_unmasked_prev;
  }
  if (r.n_masked == 0) throw Error("simulate_reverse_posterior: no chain was masked at t");
  const PosteriorBelief b = true_posterior(schedule.alpha(t - 1), schedule.alpha(t), kToken);
  r.expected = b.p_x0;
  r.frequency = static_cast<double>(r.n_unmasked_prev) / static_cast<double>(r.n_masked);
  r.std_error = std::sqrt(b.p_x0 * b.p_mask / static_cast<double>(r.n_masked));
  return r;
}

std::vector<double> partition_mass(const ApproxPosterior& approx, TokenId x0_token, std::size_t V) {
  const auto mask = static_cast<TokenId>(V);
  if (x0_token < 0 || x0_token >= mask) throw Error("partition_mass: x0 must be a content token");
  if (approx.kind == ApproxPosterior::Kind::Hard) {
    if (approx.token < 0 || approx.token > mask) throw Error("partition_mass: hard token out of range");
    if (approx.token == x0_token) return {1.0, 0.0, 0.0};
    if (approx.token == mask) return {0.0, 1.0, 0.0};
    return {0.0, 0.0, 1.0};
  }
  if (approx.soft.size() != V + 1) throw Error("partition_mass: soft posterior must cover V + 1 outcomes");
  const double on_x0 = approx.soft[static_cast<std::size_t>(x0_token)];
  const double on_mask = approx.soft[V];
  double other = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    if (v != static_cast<std::size_t>(x0_token)) other += approx.soft[v];
  }
  return {on_x0, on_mask, other};
}

HardSoftKl kl_hard_vs_soft(const PosteriorBelief& q_star, const ApproxPosterior& hard, const ApproxPosterior& soft,
                           std::size_t V) {
  const std::vector<double> q = {q_star.p_x0, q_star.p_mask, 0.0};
  HardSoftKl r;
  r.kl_hard = kl(q, partition_mass(hard, q_star.x0_token, V), 0.0);
  r.kl_soft = kl(q, partition_mass(soft, q_star.x0_token, V), 0.0);
  return r;
}

namespace {

void accumulate(std::map<TokenSeq, double>& acc, const TokenSeq& key, double w) { acc[key] += w; }

SequenceDist normalise(const std::map<TokenSeq, double>& acc) {
  double total = 0.0;
  for (const auto& [k, w] : acc) total += w;
  if (!(total > 0.0)) throw Error("reverse kernel: evidence has zero probability");
  SequenceDist out;
  for (const auto& [k, w] : acc) {
    if (w > 0.0) out.emplace_back(k, w / total);
  }
  return out;
}

}  // namespace

SequenceDist brute_force_reverse_kernel(std::span<const TokenId> x_t, std::size_t t,
                                        const EnumerableDistribution& dist, std::span<const double> betas,
                                        TokenId mask_token) {
  const std::size_t T = betas.size();
  const std::size_t L = dist.length();
  if (t < 1 || t > T) throw Error("brute_force_reverse_kernel: t out of range");
  if (x_t.size() != L) throw Error("brute_force_reverse_kernel: length mismatch");

  // Masking time per position: 1..T, or T + 1 for never.
  std::vector<double> p_time(T + 2, 0.0);
  double survive = 1.0;
  for (std::size_t s = 1; s <= T; ++s) {
    p_time[s] = survive * betas[s - 1];
    survive *= 1.0 - betas[s - 1];
  }
  p_time[T + 1] = survive;

  std::map<TokenSeq, double> acc;
  std::vector<std::size_t> tau(L, 1);
  TokenSeq prev(L), cur(L);
  for (const auto& e : dist.support()) {
    std::fill(tau.begin(), tau.end(), 1);
    while (true) {
      double w = e.prob;
      for (std::size_t i = 0; i < L; ++i) {
        w *= p_time[tau[i]];
        prev[i] = tau[i] <= t - 1 ? mask_token : e.seq[i];
        cur[i] = tau[i] <= t ? mask_token : e.seq[i];
      }
      if (w > 0.0 && cur == TokenSeq(x_t.begin(), x_t.end())) accumulate(acc, prev, w);
      std::size_t i = 0;
      while (i < L && ++tau[i] > T + 1) tau[i++] = 1;
      if (i == L) break;
    }
  }
  return normalise(acc);
}

SequenceDist factored_reverse_kernel(std::span<const TokenId> x_t, std::size_t t,
                                     const EnumerableDistribution& dist, const NoiseSchedule& schedule,
                                     TokenId mask_token) {
  if (t < 1 || t > schedule.steps()) throw Error("factored_reverse_kernel: t out of range");
  const auto post = sequence_posterior(x_t, dist, mask_token);
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    if (x_t[i] == mask_token) masked.push_back(i);
  }
  std::map<TokenSeq, double> acc;
  TokenSeq prev(x_t.begin(), x_t.end());
  for (const auto& e : post) {
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << masked.size()); ++bits) {
      double w = e.prob;
      for (std::size_t m = 0; m < masked.size(); ++m) {
        const std::size_t i = masked[m];
        const PosteriorBelief b = true_posterior(schedule.alpha(t - 1), schedule.alpha(t), e.seq[i]);
        const bool revealed = (bits >> m) & 1U;
        w *= revealed ? b.p_x0 : b.p_mask;
        prev[i] = revealed ? e.seq[i] : mask_token;
      }
      if (w > 0.0) accumulate(acc, prev, w);
    }
  }
  return normalise(acc);
}

std::vector<TokenSeq> reachable_noisy_sequences(const EnumerableDistribution& dist, std::size_t t,
                                                const NoiseSchedule& schedule, TokenId mask_token) {
  const double a = schedule.alpha(t);
  const std::size_t L = dist.length();
  std::set<TokenSeq> out;
  for (const auto& e : dist.support()) {
    for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << L); ++bits) {
      TokenSeq x = e.seq;
      bool possible = true;
      for (std::size_t i = 0; i < L; ++i) {
        const bool is_masked = (bits >> i) & 1U;
        if (is_masked) {
          possible = possible && a < 1.0;
          x[i] = mask_token;
        } else {
          possible = possible && a > 0.0;
        }
      }
      if (possible) out.insert(std::move(x));
    }
  }
  return {out.begin(), out.end()};
}

double max_abs_difference(const SequenceDist& a, const SequenceDist& b) {
  std::map<TokenSeq, std::pair<double, double>> joined;
  for (const auto& [k, w] : a) joined[k].first = w;
  for (const auto& [k, w] : b) joined[k].second = w;
  double m = 0.0;
  for (const auto& [k, ab] : joined) m = std::max(m, std::abs(ab.first - ab.second));
  return m;
}

namespace {

// Per-position marginals of a sequence distribution, as a flat V+1 table.
std::vector<double> marginals(const SequenceDist& d, std::size_t L, std::size_t V, TokenId mask) {
  std::vector<double> m(L * (V + 1), 0.0);
  for (const auto& [seq, w] : d) {
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t v = seq[i] == mask ? V : static_cast<std::size_t>(seq[i]);
      m[i * (V + 1) + v] += w;
    }
  }
  return m;
}

EnumerableDistribution random_distribution(std::size_t V, std::size_t L, Rng& rng) {
  std::size_t total = 1;
  for (std::size_t i = 0; i < L; ++i) total *= V;
  std::vector<EnumerableDistribution::Entry> entries;
  for (std::size_t code = 0; code < total; ++code) {
    if (uniform01(rng) < 0.5) continue;
    TokenSeq s(L);
    std::size_t c = code;
    for (std::size_t i = 0; i < L; ++i, c /= V) s[i] = static_cast<TokenId>(c % V);
    entries.push_back({std::move(s), 0.05 + uniform01(rng)});
  }
  if (entries.empty()) entries.push_back({TokenSeq(L, 0), 1.0});
  double sum = 0.0;
  for (const auto& e : entries) sum += e.prob;
  for (auto& e : entries) e.prob /= sum;
  return EnumerableDistribution::create(std::move(entries), V);
}

}  // namespace

std::vector<KernelCheck> run_kernel_checks(std::uint64_t seed, std::size_t per_shape) {
  std::vector<KernelCheck> out;
  std::uint64_t instance = 0;
  for (std::size_t V = 2; V <= 4; ++V) {
    for (std::size_t L = 1; L <= 3; ++L) {
      for (std::size_t T = 1; T <= 4; ++T) {
        for (std::size_t rep = 0; rep < per_shape; ++rep) {
          Rng rng(derive_seed(seed, instance++));
          const EnumerableDistribution dist = random_distribution(V, L, rng);
          std::vector<double> betas(T);
          for (std::size_t s = 0; s < T; ++s) betas[s] = rep == 0 ? static_cast<double>(s % 2) : uniform01(rng);
          const NoiseSchedule schedule = NoiseSchedule::from_betas(betas);
          const auto mask = static_cast<TokenId>(V);
          for (std::size_t t = 1; t <= T; ++t) {
            KernelCheck kc{V, L, T, t, 0, 0.0};
            for (const TokenSeq& x_t : reachable_noisy_sequences(dist, t, schedule, mask)) {
              const SequenceDist brute = brute_force_reverse_kernel(x_t, t, dist, betas, mask);
              const SequenceDist fact = factored_reverse_kernel(x_t, t, dist, schedule, mask);
              double err = max_abs_difference(brute, fact);

              // Marginals from exact_x0_posterior pushed through one reverse step.
              const auto post = exact_x0_posterior(x_t, dist, mask);
              std::vector<double> m(L * (V + 1), 0.0);
              for (std::size_t i = 0; i < L; ++i) {
                if (x_t[i] != mask) {
                  m[i * (V + 1) + static_cast<std::size_t>(x_t[i])] = 1.0;
                  continue;
                }
                for (std::size_t v = 0; v < V; ++v) {
                  const PosteriorBelief b = true_posterior(schedule.alpha(t - 1), schedule.alpha(t), static_cast<TokenId>(v));
                  m[i * (V + 1) + v] += post[i][v] * b.p_x0;
                  m[i * (V + 1) + V] += post[i][v] * b.p_mask;
                }
              }
              const auto bm = marginals(brute, L, V, mask);
              for (std::size_t j = 0; j < m.size(); ++j) err = std::max(err, std::abs(m[j] - bm[j]));
              kc.max_abs_error = std::max(kc.max_abs_error, err);
              ++kc.n_observations;
            }
            out.push_back(kc);
          }
        }
      }
    }
  }
  return out;
}

TabularDenoiser::TabularDenoiser(EnumerableDistribution dist, std::size_t d, Rng& rng)
    : dist_(std::move(dist)), d_(d), rows_((dist_.vocab() + 1) * d) {
  if (d < 1) throw Error("TabularDenoiser: d must be >= 1");
  for (double& v : rows_) v = normal01(rng);
}

EmbeddingTable TabularDenoiser::table() const { return EmbeddingTable(rows_, dist_.vocab(), d_); }

DenoiserOutput TabularDenoiser::forward(const Matrix& embeddings) const {
  if (embeddings.rows != dist_.length() || embeddings.cols != d_) throw Error("TabularDenoiser: input shape mismatch");
  const std::size_t V = dist_.vocab();
  const auto mask = static_cast<TokenId>(V);
  const EmbeddingTable tab = table();
  TokenSeq x_t(embeddings.rows, mask);
  for (std::size_t i = 0; i < embeddings.rows; ++i) {
    const auto row = embeddings.row(i);
    for (std::size_t v = 0; v < V; ++v) {
      const auto ref = tab.row(v);
      if (std::equal(row.begin(), row.end(), ref.begin())) {
        x_t[i] = static_cast<TokenId>(v);
        break;
      }
    }
  }
  DenoiserOutput out;
  out.dists = exact_x0_posterior(x_t, dist_, mask);
  out.logits = Matrix(embeddings.rows, V);
  for (std::size_t i = 0; i < embeddings.rows; ++i) {
    for (std::size_t v = 0; v < V; ++v) out.logits(i, v) = std::log(out.dists[i][v]);
  }
  return out;
}

}  // namespace lrd
