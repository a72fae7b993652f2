// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lrd/oracle.hpp"
#include "lrd/sampler.hpp"

using namespace lrd;
using doctest::Approx;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d = 8;
  c.d_ff = 8;
  c.L_max = 10;
  c.V = 6;
  return c;
}

// Random weights everywhere (head included) so predictions are not uniform.
DenoiserModel random_model(std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  DenoiserModel m = DenoiserModel::init(tiny_config(), rng);
  for (double& p : m.params()) p += scale * normal01(rng);
  return m;
}

TokenSeq random_prompt(std::size_t n, std::size_t V, Rng& rng) {
  TokenSeq p(n);
  for (auto& t : p) t = static_cast<TokenId>(uniform_index(rng, V));
  return p;
}

Categorical random_dist(std::size_t V, Rng& rng) {
  std::vector<double> w(V);
  const double sharp = 1.0 + 6.0 * uniform01(rng);
  for (auto& x : w) x = std::pow(uniform01(rng), sharp);
  if (uniform01(rng) < 0.2) w[uniform_index(rng, V)] = 0.0;
  w[uniform_index(rng, V)] += 1e-3;
  return Categorical::normalized(w);
}

// Solves A^T c = y for square A (rows are the basis vectors).
std::vector<double> coordinates(const std::vector<std::vector<double>>& rows, std::vector<double> y) {
  const std::size_t n = rows.size();
  std::vector<std::vector<double>> m(n, std::vector<double>(n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m[i][j] = rows[j][i];
    m[i][n] = y[i];
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
    std::swap(m[c], m[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = m[r][c] / m[c][c];
      for (std::size_t j = c; j <= n; ++j) m[r][j] -= f * m[c][j];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = m[i][n] / m[i][i];
  return x;
}

SamplerConfig plain_config() {
  SamplerConfig s;
  s.T_refine = 0;
  s.early_stop = false;
  return s;
}

EnumerableDistribution abba() {
  return EnumerableDistribution::create({{{0, 1, 1, 0}, 1.0}}, 2);
}

EnumerableDistribution random_support(std::size_t V, std::size_t L, std::size_t n, Rng& rng) {
  std::set<TokenSeq> seen;
  std::vector<EnumerableDistribution::Entry> entries;
  while (entries.size() < n) {
    TokenSeq s = random_prompt(L, V, rng);
    if (!seen.insert(s).second) continue;
    entries.push_back({s, 0.1 + uniform01(rng)});
  }
  double total = 0;
  for (auto& e : entries) total += e.prob;
  for (auto& e : entries) e.prob /= total;
  return EnumerableDistribution::create(entries, V);
}

}  // namespace

TEST_CASE("mix_embedding identities") {
  const auto m = random_model(1);
  const auto table = m.table();
  const std::size_t V = table.vocab();
  const auto mask = table.mask_row();

  const auto u = mix_embedding(Categorical::uniform(V), table, 0.15, 1.0);
  CHECK(std::equal(u.begin(), u.end(), mask.begin(), mask.end()));
  const auto u1 = mix_embedding(Categorical::uniform(V), table, 1.0, 1.0);
  CHECK(std::equal(u1.begin(), u1.end(), mask.begin(), mask.end()));

  for (std::size_t v = 0; v < V; ++v) {
    const auto e = mix_embedding(Categorical::one_hot(V, v), table, 1.0, 0.9);
    const auto row = table.row(v);
    CHECK(std::equal(e.begin(), e.end(), row.begin(), row.end()));

    const auto f = mix_embedding(Categorical::one_hot(V, v), table, 0.2, 0.9);
    for (std::size_t j = 0; j < table.dim(); ++j) CHECK(f[j] == Approx(0.8 * mask[j] + 0.2 * row[j]).epsilon(1e-14));
  }

  // top_p = 0 and r_f = 0 both give e_MASK.
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto d = random_dist(V, rng);
    const auto a = mix_embedding(d, table, 0.5, 0.0);
    const auto b = mix_embedding(d, table, 0.0, 0.9);
    CHECK(std::equal(a.begin(), a.end(), mask.begin(), mask.end()));
    CHECK(std::equal(b.begin(), b.end(), mask.begin(), mask.end()));
  }

  CHECK_THROWS_AS(mix_embedding(Categorical::uniform(V + 1), table, 0.1, 0.9), Error);
}

TEST_CASE("mixing weight follows the nucleus entropy") {
  const auto m = random_model(3);
  const auto table = m.table();
  const std::size_t V = table.vocab();
  const auto r = mix_embedding_detailed(Categorical::uniform(V), table, 0.15, 1.0);
  CHECK(r.alpha == 0.0);
  CHECK(r.nucleus_size == V);
  const auto s = mix_embedding_detailed(Categorical::one_hot(V, 2), table, 0.15, 0.9);
  CHECK(s.alpha == 0.15);
  CHECK(s.nucleus_size == 1);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = random_dist(V, rng);
    const double r_f = uniform01(rng);
    const double top_p = 0.01 + 0.99 * uniform01(rng);
    const auto mix = mix_embedding_detailed(d, table, r_f, top_p);
    const double h = normalized_entropy(top_p_nucleus(d, top_p));
    CHECK(mix.alpha == r_f * (1.0 - h));
    CHECK(mix.alpha >= 0.0);
    CHECK(mix.alpha <= r_f);
  }
}

TEST_CASE("1000 random mixtures lie in the convex hull of MASK and the nucleus") {
  // Random invertible table in R^{V+1}: coordinates are unique.
  const std::size_t V = 5, d = V + 1;
  Rng rng(5);
  std::vector<double> flat((V + 1) * d);
  for (double& x : flat) x = normal01(rng);
  const EmbeddingTable table(flat, V, d);
  std::vector<std::vector<double>> rows;
  for (std::size_t v = 0; v <= V; ++v) rows.emplace_back(table.row(v).begin(), table.row(v).end());

  for (int trial = 0; trial < 1000; ++trial) {
    const auto dist = random_dist(V, rng);
    const double r_f = uniform01(rng);
    const double top_p = 0.01 + 0.99 * uniform01(rng);
    const auto e = mix_embedding(dist, table, r_f, top_p);
    const auto c = coordinates(rows, e);
    const auto nucleus = top_p_nucleus(dist, top_p);
    double sum = 0;
    for (std::size_t v = 0; v <= V; ++v) {
      CHECK(c[v] >= -1e-6);
      sum += c[v];
      const bool in_nucleus = std::find(nucleus.support.begin(), nucleus.support.end(), v) != nucleus.support.end();
      if (v < V && !in_nucleus) CHECK(std::abs(c[v]) <= 1e-6);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
    CHECK(1.0 - c[V] <= r_f + 1e-6);
  }
}

TEST_CASE("mean_step_kl examples") {
  const std::vector<Categorical> a = {Categorical::uniform(3), Categorical::one_hot(3, 1)};
  CHECK(mean_step_kl(a, a, 1e-10) == 0.0);
  CHECK(mean_step_kl(std::span<const Categorical>{}, std::span<const Categorical>{}, 1e-10) == 0.0);

  // Binary p with KL(p || uniform) equal to a target, by bisection.
  auto with_kl = [](double target) {
    double lo = 0.5, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      const double k = std::log(2.0) + mid * std::log(mid) + (1 - mid) * std::log(1 - mid);
      (k < target ? lo : hi) = mid;
    }
    return Categorical::checked({lo, 1 - lo});
  };
  const std::vector<Categorical> prev = {Categorical::uniform(2), Categorical::uniform(2)};
  const std::vector<Categorical> cur = {with_kl(0.2), with_kl(0.4)};
  CHECK(mean_step_kl(prev, cur, 0.0) == Approx(0.3).epsilon(1e-12));

  const std::vector<Categorical> p1 = {Categorical::checked({0.5, 0.5})};
  const std::vector<Categorical> c1 = {Categorical::checked({0.9, 0.1})};
  CHECK(mean_step_kl(p1, c1, 0.0) == Approx(0.368064).epsilon(1e-6));

  CHECK_THROWS_AS(mean_step_kl(prev, c1, 0.0), Error);
}

TEST_CASE("select_commits examples") {
  const std::vector<std::size_t> open3 = {0, 1, 2};
  const std::vector<double> h = {0.5, 0.1, 0.9};
  CHECK(select_commits(h, open3, 1) == std::vector<std::size_t>{1});
  CHECK(select_commits(h, open3, 2) == std::vector<std::size_t>{1, 0});
  const std::vector<double> tie = {0.1, 0.1};
  const std::vector<std::size_t> open2 = {0, 1};
  CHECK(select_commits(tie, open2, 1) == std::vector<std::size_t>{0});
  const auto all = select_commits(h, open3, 7);
  CHECK(std::set<std::size_t>(all.begin(), all.end()) == std::set<std::size_t>{0, 1, 2});
  const std::vector<std::size_t> subset = {0, 2};
  CHECK(select_commits(h, subset, 1) == std::vector<std::size_t>{0});
  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(select_commits(h, none, 1), Error);

  const std::vector<Categorical> dists = {Categorical::uniform(4), Categorical::one_hot(4, 3)};
  CHECK(select_commits(dists, open2, 1) == std::vector<std::size_t>{1});
}

TEST_CASE("phase1 with T_refine = 0 does nothing") {
  const auto m = random_model(6);
  const TokenSeq prompt = {1, 2};
  SamplerState s = init_state(m, prompt, 5);
  const SamplerState before = s;
  SamplerConfig cfg;
  cfg.T_refine = 0;
  DecodeTrace trace;
  phase1_refine(m, s, cfg, trace);
  CHECK(trace.records.empty());
  CHECK(s.step == 0);
  for (std::size_t i = 0; i < s.positions.size(); ++i) {
    CHECK(s.positions[i].committed == before.positions[i].committed);
    CHECK(s.positions[i].soft_embed == before.positions[i].soft_embed);
  }
}

TEST_CASE("phase1 with tau_refine = 0 runs every iteration and commits nothing") {
  const auto m = random_model(7);
  const TokenSeq prompt = {3};
  SamplerState s = init_state(m, prompt, 6);
  SamplerConfig cfg;
  cfg.tau_refine = 0.0;
  cfg.T_refine = 7;
  DecodeTrace trace;
  phase1_refine(m, s, cfg, trace);
  CHECK(trace.records.size() == 7);
  CHECK(s.step == 7);
  CHECK(s.n_committed_generated() == 0);
  CHECK(s.t_star == 7u);
  for (const auto& r : trace.records) CHECK(r.n_committed == 0);
}

TEST_CASE("phase2 commits one position per pass without early stop") {
  const auto m = random_model(8);
  for (std::size_t G : {1u, 4u, 8u}) {
    SamplerState s = init_state(m, TokenSeq{2}, G);
    DecodeTrace trace;
    phase2_decode(m, s, plain_config(), trace);
    CHECK(trace.records.size() == G);
    CHECK(s.n_committed_generated() == G);
    for (std::size_t i = 0; i < trace.records.size(); ++i) CHECK(trace.records[i].n_committed == i + 1);
  }

  SamplerState done = init_state(m, TokenSeq{1, 2}, 0);
  DecodeTrace empty;
  phase2_decode(m, done, SamplerConfig{}, empty);
  CHECK(empty.records.empty());
  CHECK(done.step == 0);
}

TEST_CASE("phase2 raises on an exhausted step budget") {
  const auto m = random_model(9);
  SamplerConfig cfg = plain_config();
  cfg.max_steps = 3;
  CHECK_THROWS_AS(decode_lrd(m, TokenSeq{1}, 6, cfg), NonConvergence);
  cfg.early_stop = true;
  cfg.tau_decode = 0.0;
  const auto r = decode_lrd(m, TokenSeq{1}, 6, cfg);
  CHECK(r.forward_passes == 3);
  CHECK(r.early_stopped);
  for (TokenId t : r.tokens) CHECK(t >= 0);
}

TEST_CASE("baseline examples") {
  const auto m = random_model(10);
  const auto empty = decode_baseline(m, TokenSeq{1, 2}, 0, 1);
  CHECK(empty.tokens.empty());
  CHECK(empty.forward_passes == 0);
  for (std::size_t G : {1u, 5u, 8u}) {
    const auto r = decode_baseline(m, TokenSeq{4}, G, 1);
    CHECK(r.forward_passes == G);
    CHECK(r.tokens.size() == G);
    const auto again = decode_baseline(m, TokenSeq{4}, G, 1);
    CHECK(again.tokens == r.tokens);
  }
  CHECK(decode_baseline(m, TokenSeq{4}, 8, 3).forward_passes == 3);
  CHECK_THROWS_AS(decode_baseline(m, TokenSeq{4}, 8, 0), Error);
  CHECK_THROWS_AS(decode_baseline(m, TokenSeq{4}, 10, 1), Error);
}

TEST_CASE("degenerate LRD reduces to the baseline on 100 random models") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_model(1000 + trial, 0.5 + uniform01(rng));
    const std::size_t plen = uniform_index(rng, 4);
    const std::size_t G = 1 + uniform_index(rng, 10 - plen);
    const TokenSeq prompt = random_prompt(plen, 6, rng);
    const std::size_t k = 1 + uniform_index(rng, 2);
    const auto base = decode_baseline(m, prompt, G, k);

    for (int variant = 0; variant < 2; ++variant) {
      SamplerConfig cfg = plain_config();
      cfg.commits_per_step = k;
      if (variant == 0) cfg.r_f = 0.0;
      else cfg.top_p = 0.0;
      const auto lrd = decode_lrd(m, prompt, G, cfg);
      CHECK(lrd.tokens == base.tokens);
      CHECK(lrd.forward_passes == base.forward_passes);
      REQUIRE(lrd.trace.records.size() == base.trace.records.size());
      for (std::size_t i = 0; i < lrd.trace.records.size(); ++i)
        CHECK(lrd.trace.records[i].argmax == base.trace.records[i].argmax);
    }
  }
}

TEST_CASE("open embeddings stay reconstructible from their recorded prediction") {
  const auto m = random_model(12);
  const auto table = m.table();
  SamplerConfig cfg;
  cfg.r_f = 0.6;
  cfg.tau_refine = 0.0;
  cfg.T_refine = 4;
  cfg.early_stop = false;
  SamplerState s = init_state(m, TokenSeq{1, 5}, 6);
  DecodeTrace trace;
  phase1_refine(m, s, cfg, trace);
  for (std::size_t i : s.open_positions()) {
    const auto& p = s.positions[i];
    REQUIRE(p.last_dist);
    const auto mix = mix_embedding_detailed(*p.last_dist, table, cfg.r_f, cfg.top_p);
    CHECK(p.alpha == mix.alpha);
    CHECK(p.alpha >= 0.0);
    CHECK(p.alpha <= cfg.r_f);
    const auto nucleus = top_p_nucleus(*p.last_dist, cfg.top_p);
    for (std::size_t j = 0; j < table.dim(); ++j) {
      double expect = (1 - p.alpha) * table.mask_row()[j];
      for (std::size_t n = 0; n < nucleus.support.size(); ++n)
        expect += p.alpha * nucleus.renorm_probs[n] * table.row(nucleus.support[n])[j];
      CHECK(std::abs(p.soft_embed[j] - expect) <= 1e-6);
    }
  }
}

TEST_CASE("commitment is monotone and decoding terminates") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(2000 + trial);
    SamplerConfig cfg;
    cfg.early_stop = false;
    cfg.commits_per_step = 1 + uniform_index(rng, 3);
    cfg.T_refine = uniform_index(rng, 6);
    cfg.r_f = uniform01(rng);
    const std::size_t G = 1 + uniform_index(rng, 8);
    cfg.max_steps = cfg.T_refine + (G + cfg.commits_per_step - 1) / cfg.commits_per_step;
    const TokenSeq prompt = random_prompt(2, 6, rng);

    SamplerState s = init_state(m, prompt, G);
    DecodeTrace trace;
    phase1_refine(m, s, cfg, trace);
    phase2_decode(m, s, cfg, trace);
    CHECK(s.n_committed_generated() == G);
    CHECK(s.step <= cfg.max_steps);
    CHECK(std::set<std::size_t>(s.commit_log.begin(), s.commit_log.end()).size() == s.commit_log.size());
    for (std::size_t i = 1; i < trace.records.size(); ++i)
      CHECK(trace.records[i].n_committed >= trace.records[i - 1].n_committed);

    // A token committed at pass p equals that pass's argmax and survives.
    std::size_t c = 0;
    for (const auto& r : trace.records) {
      for (; c < r.n_committed; ++c) {
        const std::size_t pos = s.commit_log[c];
        CHECK(*s.positions[pos].committed == r.argmax[pos - s.prompt_len]);
      }
    }
    const auto res = decode_lrd(m, prompt, G, cfg);
    CHECK(res.tokens.size() == G);
    for (TokenId t : res.tokens) CHECK(t >= 0);
  }
}

TEST_CASE("early stop finalizes open positions to the last argmax") {
  Rng rng(14);
  std::size_t fired = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(3000 + trial, 0.3);
    SamplerConfig cfg;
    cfg.tau_decode = 0.05 + uniform01(rng);
    cfg.T_refine = uniform_index(rng, 4);
    SamplerState s = init_state(m, TokenSeq{1}, 8);
    DecodeTrace trace;
    phase1_refine(m, s, cfg, trace);
    phase2_decode(m, s, cfg, trace);
    if (!s.early_stopped) continue;
    ++fired;
    const auto& last = trace.records.back();
    const std::size_t before = trace.records.size() >= 2 ? trace.records[trace.records.size() - 2].n_committed : 0;
    for (std::size_t c = before; c < s.commit_log.size(); ++c) {
      const std::size_t pos = s.commit_log[c];
      CHECK(*s.positions[pos].committed == last.argmax[pos - 1]);
    }
  }
  CHECK(fired > 0);
}

TEST_CASE("early stop with the exact denoiser returns the final argmax everywhere") {
  Rng rng(15);
  std::size_t fired = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto dist = random_support(3, 5, 6, rng);
    Rng init(100 + trial);
    const TabularDenoiser model(dist, 6, init);
    SamplerConfig cfg;
    cfg.tau_decode = 0.5;
    cfg.T_refine = 2;
    const auto r = decode_lrd(model, TokenSeq{}, 5, cfg);
    if (!r.early_stopped) continue;
    ++fired;
    const auto& last = r.trace.records[r.trace.records.size() - 2];
    CHECK(r.tokens == last.argmax);
  }
  CHECK(fired > 0);
}

TEST_CASE("exact denoiser on ABBA decodes ABBA") {
  Rng rng(16);
  const TabularDenoiser model(abba(), 4, rng);
  const TokenSeq expect = {0, 1, 1, 0};
  CHECK(decode_lrd(model, TokenSeq{}, 4, SamplerConfig{}).tokens == expect);
  CHECK(decode_lrd(model, TokenSeq{}, 4, plain_config()).tokens == expect);
  CHECK(decode_baseline(model, TokenSeq{}, 4, 1).tokens == expect);
  SamplerConfig semi;
  semi.block_size = 1;
  CHECK(decode_semi_ar(model, TokenSeq{}, 4, semi).tokens == expect);
  CHECK(decode_lrd(model, TokenSeq{0}, 3, SamplerConfig{}).tokens == TokenSeq{1, 1, 0});
}

TEST_CASE("exact denoiser outputs always lie in the support") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto dist = random_support(4, 4, 5, rng);
    Rng init(200 + trial);
    const TabularDenoiser model(dist, 8, init);
    SamplerConfig cfg;
    cfg.early_stop = false;
    cfg.r_f = uniform01(rng);
    const auto r = decode_lrd(model, TokenSeq{}, 4, cfg);
    bool found = false;
    for (const auto& e : dist.support()) found = found || e.seq == r.tokens;
    CHECK(found);
  }
}

TEST_CASE("semi-AR block semantics") {
  const auto m = random_model(18);
  const TokenSeq prompt = {2, 3};
  SamplerConfig cfg;
  cfg.T_refine = 3;

  cfg.block_size = 6;
  const auto one = decode_semi_ar(m, prompt, 6, cfg);
  const auto whole = decode_lrd(m, prompt, 6, cfg);
  CHECK(one.tokens == whole.tokens);
  CHECK(one.forward_passes == whole.forward_passes);
  REQUIRE(one.block_traces.size() == 1);
  CHECK(one.block_traces[0].to_csv() == whole.trace.to_csv());

  cfg.block_size = 1;
  const auto single = decode_semi_ar(m, prompt, 6, cfg);
  CHECK(single.commit_order == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

  cfg.block_size = 4;
  const auto blocks = decode_semi_ar(m, prompt, 7, cfg);
  REQUIRE(blocks.block_snapshots.size() == 2);
  for (std::size_t b = 0; b < blocks.block_snapshots.size(); ++b) {
    const std::size_t end = std::min<std::size_t>(7, (b + 1) * 4);
    for (std::size_t i = 0; i < end; ++i) CHECK(blocks.block_snapshots[b][i] == blocks.tokens[i]);
    for (std::size_t i = end; i < 7; ++i) CHECK(blocks.block_snapshots[b][i] == -1);
  }
  for (std::size_t c = 0; c < blocks.commit_order.size(); ++c) {
    if (c > 0) CHECK(blocks.commit_order[c] / 4 >= blocks.commit_order[c - 1] / 4);
  }
}

TEST_CASE("trace phase discipline and CSV") {
  const auto m = random_model(19);
  SamplerConfig cfg;
  cfg.tau_refine = 0.0;
  cfg.T_refine = 3;
  cfg.early_stop = false;
  const auto r = decode_lrd(m, TokenSeq{1}, 4, cfg);
  const auto& rec = r.trace.records;
  REQUIRE(rec.size() == 3 + 4 + 1);
  CHECK(rec[0].phase == Phase::Refine);
  CHECK(!rec[0].mean_kl);
  CHECK(rec[1].mean_kl);
  CHECK(rec[2].mean_kl);
  CHECK(rec[3].phase == Phase::Decode);
  CHECK(!rec[3].mean_kl);
  for (std::size_t i = 4; i < 7; ++i) CHECK(rec[i].mean_kl);
  CHECK(rec.back().phase == Phase::Done);
  CHECK(r.trace.forward_passes() == 7);

  std::size_t transitions = 0;
  for (std::size_t i = 1; i < rec.size(); ++i) {
    CHECK(static_cast<int>(rec[i].phase) >= static_cast<int>(rec[i - 1].phase));
    transitions += rec[i - 1].phase == Phase::Refine && rec[i].phase == Phase::Decode;
    CHECK(rec[i].step >= rec[i - 1].step);
  }
  CHECK(transitions == 1);

  const std::string csv = r.trace.to_csv();
  CHECK(csv.rfind("step,phase,mean_kl,n_committed,min_open_entropy,wallclock_ns\n", 0) == 0);
  CHECK(csv.find("\n1,refine,,0,") != std::string::npos);
  CHECK(csv.find(",decode,") != std::string::npos);
  CHECK(csv.find(",done,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(rec.size() + 1));
  CHECK(decode_lrd(m, TokenSeq{1}, 4, cfg).trace.to_csv() == csv);
}

TEST_CASE("forced and automatic refinement between commits") {
  const auto m = random_model(20);
  SamplerConfig cfg = plain_config();
  cfg.refine_per_commit = 2;
  const auto lf = decode_lrd(m, TokenSeq{1}, 5, cfg);
  CHECK(lf.forward_passes == 15);
  CHECK(lf.tokens.size() == 5);

  cfg.refine_per_commit = 0;
  cfg.auto_refine_per_commit = true;
  cfg.T_refine = 0;
  const auto a = decode_lrd(m, TokenSeq{1}, 5, cfg);
  CHECK(a.forward_passes == 5);
  cfg.T_refine = 4;
  cfg.tau_refine = 0.0;
  const auto b = decode_lrd(m, TokenSeq{1}, 5, cfg);
  CHECK(b.forward_passes == 4 + 5 * 5);
}

TEST_CASE("KL averaging over all positions scales by the open share") {
  const auto m = random_model(21);
  SamplerConfig open_cfg = plain_config();
  open_cfg.early_stop = true;
  open_cfg.tau_decode = 0.0;
  SamplerConfig all_cfg = open_cfg;
  all_cfg.kl_average = KlAverage::AllPositions;
  const auto a = decode_lrd(m, TokenSeq{2}, 6, open_cfg);
  const auto b = decode_lrd(m, TokenSeq{2}, 6, all_cfg);
  REQUIRE(a.trace.records.size() == b.trace.records.size());
  for (std::size_t i = 1; i + 1 < a.trace.records.size(); ++i) {
    REQUIRE(a.trace.records[i].mean_kl);
    const double open = static_cast<double>(6 - a.trace.records[i - 1].n_committed);
    CHECK(*b.trace.records[i].mean_kl == Approx(*a.trace.records[i].mean_kl * open / 6.0).epsilon(1e-12));
  }
}

TEST_CASE("sampler config validation") {
  SamplerConfig c;
  CHECK_NOTHROW(c.validate());
  c.r_f = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.top_p = -0.1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.commits_per_step = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.tau_decode = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}
