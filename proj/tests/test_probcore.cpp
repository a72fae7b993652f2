// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "lrd/probcore.hpp"

using namespace lrd;
using doctest::Approx;

TEST_CASE("schedule_from_betas running product") {
  const std::vector<double> none = {0, 0, 0};
  const auto s0 = schedule_from_betas(none);
  CHECK(s0.steps() == 3);
  for (double a : s0.alphas()) CHECK(a == 1.0);

  const std::vector<double> half = {0.5, 0.5};
  const auto s1 = schedule_from_betas(half);
  CHECK(s1.alpha(0) == 1.0);
  CHECK(s1.alpha(1) == 0.5);
  CHECK(s1.alpha(2) == 0.25);

  const std::vector<double> absorb = {1.0, 0.3};
  const auto s2 = schedule_from_betas(absorb);
  CHECK(s2.alpha(1) == 0.0);
  CHECK(s2.alpha(2) == 0.0);

  const std::vector<double> bad = {0.2, 1.5};
  CHECK_THROWS_AS(schedule_from_betas(bad), Error);
  const std::vector<double> neg = {-0.1};
  CHECK_THROWS_AS(schedule_from_betas(neg), Error);
}

TEST_CASE("linear schedule is monotone and absorbing") {
  const auto s = NoiseSchedule::linear(8);
  CHECK(s.alpha(0) == 1.0);
  CHECK(s.alpha(8) == 0.0);
  for (std::size_t t = 1; t <= 8; ++t) CHECK(s.alpha(t) <= s.alpha(t - 1));
}

TEST_CASE("forward_mask edge cases and binomial count") {
  Rng rng(1);
  const TokenSeq x0 = {1, 2, 3, 4};
  const std::vector<double> zero = {0.0};
  CHECK(forward_mask(x0, 1, schedule_from_betas(zero), 9, rng) == x0);
  const std::vector<double> one = {1.0};
  CHECK(forward_mask(x0, 1, schedule_from_betas(one), 9, rng) == TokenSeq(4, 9));

  const std::vector<double> b = {0.3};
  const auto s = schedule_from_betas(b);
  const TokenSeq long_x(1000, 1);
  const TokenSeq y = forward_mask(long_x, 1, s, 9, rng);
  const auto masked = std::count(y.begin(), y.end(), 9);
  const double sigma = std::sqrt(1000 * 0.3 * 0.7);
  CHECK(std::abs(static_cast<double>(masked) - 300.0) <= 3 * sigma);

  Rng a(5), c(5);
  CHECK(forward_mask(long_x, 1, s, 9, a) == forward_mask(long_x, 1, s, 9, c));
}

TEST_CASE("stepwise forward process matches cumulative survival") {
  const std::vector<double> betas = {0.1, 0.25, 0.4};
  const auto s = schedule_from_betas(betas);
  Rng rng(11);
  const std::size_t n = 200000;
  TokenSeq x(n, 1);
  for (std::size_t t = 1; t <= 3; ++t) x = forward_step(x, s.beta(t), 9, rng);
  const double kept = static_cast<double>(std::count(x.begin(), x.end(), 1)) / n;
  const double a = s.alpha(3);
  CHECK(std::abs(kept - a) <= 3 * std::sqrt(a * (1 - a) / n));
}

TEST_CASE("true_posterior closed form") {
  auto b = true_posterior(1.0, 0.5, 3);
  CHECK(b.p_x0 == 1.0);
  CHECK(b.p_mask == 0.0);
  b = true_posterior(0.5, 0.5, 3);
  CHECK(b.p_x0 == 0.0);
  CHECK(b.p_mask == 1.0);
  b = true_posterior(0.8, 0.5, 3);
  CHECK(b.p_x0 == Approx(0.6).epsilon(1e-14));
  CHECK(b.p_mask == Approx(0.4).epsilon(1e-14));
  CHECK(b.p_x0 + b.p_mask == 1.0);
  CHECK(b.x0_token == 3);
  CHECK_THROWS_AS(true_posterior(1.0, 1.0, 0), Error);
  CHECK_THROWS_AS(true_posterior(0.4, 0.5, 0), Error);
}

TEST_CASE("entropy values") {
  CHECK(entropy(Categorical::one_hot(4, 2)) == 0.0);
  CHECK(entropy(Categorical::uniform(4)) == Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<double> p = {0.5, 0.5, 0, 0};
  CHECK(entropy(p) == Approx(0.69315).epsilon(1e-5));
}

TEST_CASE("normalized_entropy values") {
  NucleusResult single{{3}, {1.0}, 1.0};
  CHECK(normalized_entropy(single) == 0.0);
  NucleusResult uni{{0, 1, 2}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1.0};
  CHECK(normalized_entropy(uni) == Approx(1.0).epsilon(1e-14));
  NucleusResult two{{0, 1}, {2.0 / 3, 1.0 / 3}, 1.0};
  const double hand = (std::log(3.0) - (2.0 / 3) * std::log(2.0)) / std::log(2.0);
  CHECK(normalized_entropy(two) == Approx(hand).epsilon(1e-14));
  CHECK(normalized_entropy(two) == Approx(0.91830).epsilon(1e-5));
}

TEST_CASE("kl values and infinite sentinel") {
  const auto u = Categorical::uniform(4);
  CHECK(kl(u, u, 0.0) == 0.0);
  CHECK(kl(Categorical::one_hot(4, 1), u, 0.0) == Approx(std::log(4.0)).epsilon(1e-14));
  const std::vector<double> p = {0.9, 0.1}, q = {0.5, 0.5};
  const double hand = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  CHECK(kl(p, q, 0.0) == Approx(hand).epsilon(1e-14));
  CHECK(kl(p, q, 0.0) == Approx(0.368064).epsilon(1e-6));

  const std::vector<double> a = {1, 0}, b = {0, 1};
  CHECK(kl(a, b, 0.0) == kInfiniteKl);
  CHECK(std::isfinite(kl(a, b, 1e-10)));
  const std::vector<double> short_q = {1.0};
  CHECK_THROWS_AS(kl(a, short_q, 0.0), Error);
}

TEST_CASE("kl is non-negative and finite on shared support") {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> p(6), q(6);
    for (auto& x : p) x = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
    for (auto& x : q) x = 0.01 + uniform01(rng);
    p[0] += 0.1;
    const auto P = Categorical::normalized(p);
    const auto Q = Categorical::normalized(q);
    const double d = kl(P, Q, 0.0);
    CHECK(d >= 0.0);
    CHECK(std::isfinite(d));
    CHECK(kl(P, P, 0.0) == 0.0);
  }
}

TEST_CASE("top_p_nucleus examples") {
  const std::vector<double> p = {0.6, 0.3, 0.08, 0.02};
  const auto r = top_p_nucleus(p, 0.9);
  CHECK(r.support == std::vector<std::size_t>{0, 1});
  CHECK(r.renorm_probs[0] == Approx(2.0 / 3).epsilon(1e-14));
  CHECK(r.renorm_probs[1] == Approx(1.0 / 3).epsilon(1e-14));

  const std::vector<double> q = {0.1, 0.0, 0.6, 0.3};
  const auto full = top_p_nucleus(q, 1.0);
  CHECK(full.support == std::vector<std::size_t>{2, 3, 0});
  CHECK(full.renorm_probs[0] == Approx(0.6));

  const auto oh = top_p_nucleus(Categorical::one_hot(5, 3), 0.9);
  CHECK(oh.support == std::vector<std::size_t>{3});

  CHECK_THROWS_AS(top_p_nucleus(p, 0.0), Error);
  CHECK_THROWS_AS(top_p_nucleus(p, 1.5), Error);
}

TEST_CASE("top_p_nucleus ties by ascending id") {
  const std::vector<double> p = {0.25, 0.25, 0.25, 0.25};
  const auto r = top_p_nucleus(p, 0.5);
  CHECK(r.support == std::vector<std::size_t>{0, 1});
}

TEST_CASE("top_p_nucleus is deterministic and idempotent on the original distribution") {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> w(8);
    for (auto& x : w) x = uniform01(rng);
    const auto p = Categorical::normalized(w);
    const double thresh = 0.05 + 0.95 * uniform01(rng);
    const auto a = top_p_nucleus(p, thresh);
    const auto b = top_p_nucleus(p, thresh);
    CHECK(a.support == b.support);
    CHECK(a.renorm_probs == b.renorm_probs);
    const double sum = std::accumulate(a.renorm_probs.begin(), a.renorm_probs.end(), 0.0);
    CHECK(sum == Approx(1.0).epsilon(1e-12));

    // Restrict to the support and truncate again.
    std::vector<double> restricted(p.size(), 0.0);
    for (std::size_t v : a.support) restricted[v] = p[v];
    const auto again = top_p_nucleus(restricted, thresh);
    CHECK(again.support == a.support);
  }
}

TEST_CASE("normalized_entropy stays in [0, 1]") {
  Rng rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> w(10);
    for (auto& x : w) x = std::pow(uniform01(rng), 4.0);
    w[0] += 1e-3;
    const auto n = top_p_nucleus(Categorical::normalized(w), 0.9);
    const double h = normalized_entropy(n);
    CHECK(h >= 0.0);
    CHECK(h <= 1.0);
  }
}

TEST_CASE("Categorical validation") {
  CHECK_THROWS_AS(Categorical::checked({0.5, 0.6}), Error);
  CHECK_THROWS_AS(Categorical::checked({-0.1, 1.1}), Error);
  CHECK_THROWS_AS(Categorical::normalized({0.0, 0.0}), Error);
  const auto c = Categorical::normalized({1, 3});
  CHECK(c[1] == 0.75);
  CHECK(Categorical::normalized({1, 1}).argmax() == 0);
}
