// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lrd/config.hpp"
#include "lrd/denoiser.hpp"
#include "lrd/harness.hpp"

using namespace lrd;
using doctest::Approx;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d = 16;
  c.d_ff = 24;
  c.L_max = 6;
  c.V = 5;
  return c;
}

// Every parameter random, so no gradient vanishes by construction.
DenoiserModel random_model(const DenoiserConfig& c, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  DenoiserModel m = DenoiserModel::init(c, rng);
  for (double& p : m.params()) p += scale * normal01(rng);
  return m;
}

Matrix random_embeddings(std::size_t L, std::size_t d, double scale, Rng& rng) {
  Matrix x(L, d);
  for (double& v : x.data) v = scale * normal01(rng);
  return x;
}

std::vector<MaskedExample> small_batch(const DenoiserConfig& c) {
  const auto M = static_cast<TokenId>(c.V);
  return {
      {{0, 1, 2, 3}, {0, M, 2, M}},
      {{4, 4, 1, 0, 2}, {M, 4, M, M, 2}},
  };
}

}  // namespace

TEST_CASE("config validation") {
  DenoiserConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.n_layers = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.V = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("embed_tokens is lookup plus position") {
  const auto c = small_config();
  const auto m = random_model(c, 1);
  const auto M = static_cast<TokenId>(c.V);
  const TokenSeq all_mask(4, M);
  const Matrix x = m.embed_tokens(all_mask);
  const auto table = m.table();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < c.d; ++j) CHECK(x(i, j) == table.mask_row()[j] + m.positional_row(i)[j]);
  }
  const TokenSeq one = {3};
  const Matrix y = m.embed_tokens(one);
  for (std::size_t j = 0; j < c.d; ++j) CHECK(y(0, j) == table.row(3)[j] + m.positional_row(0)[j]);
  CHECK(m.embed_tokens(one) == y);

  const TokenSeq bad = {M + 1};
  CHECK_THROWS_AS(m.embed_tokens(bad), Error);
  const TokenSeq neg = {-1};
  CHECK_THROWS_AS(m.embed_tokens(neg), Error);
}

TEST_CASE("forward rows lie on the simplex for any input scale") {
  const auto c = small_config();
  const auto m = random_model(c, 2);
  Rng rng(3);
  for (double scale : {0.0, 1e-6, 1.0, 1e3, 1e8}) {
    const Matrix x = random_embeddings(5, c.d, scale, rng);
    const auto out = m.forward(x);
    REQUIRE(out.dists.size() == 5);
    for (const auto& d : out.dists) {
      CHECK(d.size() == c.V);
      double s = 0;
      for (double p : d.probs()) {
        CHECK(p >= 0.0);
        CHECK(std::isfinite(p));
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("forward is pure and rejects overlong input") {
  const auto c = small_config();
  const auto m = random_model(c, 4);
  Rng rng(5);
  const Matrix x = random_embeddings(4, c.d, 1.0, rng);
  const auto a = m.forward(x);
  const auto b = m.forward(x);
  CHECK(a.logits == b.logits);
  CHECK(a.dists == b.dists);
  CHECK_THROWS_AS(m.forward(random_embeddings(c.L_max + 1, c.d, 1.0, rng)), Error);
}

TEST_CASE("untrained model predicts uniform and has loss ln V") {
  const auto c = small_config();
  Rng rng(6);
  const auto m = DenoiserModel::init(c, rng);
  const auto batch = small_batch(c);
  CHECK(m.masked_loss(batch) == Approx(std::log(static_cast<double>(c.V))).epsilon(1e-12));

  const std::vector<MaskedExample> nothing_masked = {{{1, 2}, {1, 2}}};
  CHECK(m.masked_loss(nothing_masked) == 0.0);
}

TEST_CASE("gradient check on a 2-layer d=16 model") {
  const auto c = small_config();
  const auto m = random_model(c, 7);
  const auto batch = small_batch(c);
  const auto report = grad_check(m, batch, 1e-4);
  MESSAGE("worst tensor " << report.worst_tensor << " rel error " << report.max_rel_error);
  CHECK(report.per_tensor.size() == m.tensors().size());
  for (const auto& [name, err] : report.per_tensor) {
    INFO(name);
    CHECK(err < 1e-4);
  }
}

// Larger perturbations put some units near saturation, where a plain
// h = 1e-4 difference is dominated by truncation and rounding. Richardson
// extrapolation of two central differences is accurate to O(h^4).
TEST_CASE("gradient matches an extrapolated difference on saturated models") {
  DenoiserConfig c = small_config();
  c.d_ff = 32;
  c.V = 6;
  const auto M = static_cast<TokenId>(c.V);
  const std::vector<MaskedExample> batch = {{{0, 1, 2, 3, 4}, {0, M, 2, M, M}}, {{5, 5, 1, 0}, {M, 5, M, 0}}};
  const std::vector<std::pair<std::uint64_t, double>> instances = {{101, 0.5}, {103, 0.5}, {105, 0.2}};
  for (const auto& [seed, scale] : instances) {
    Rng rng(seed);
    DenoiserModel m = DenoiserModel::init(c, rng);
    for (double& p : m.params()) p += scale * normal01(rng);
    std::vector<double> grad(m.params().size());
    m.loss_and_grad(batch, grad);
    auto central = [&](std::size_t i, double h) {
      const double keep = m.params()[i];
      m.params()[i] = keep + h;
      const double up = m.masked_loss(batch);
      m.params()[i] = keep - h;
      const double down = m.masked_loss(batch);
      m.params()[i] = keep;
      return (up - down) / (2 * h);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double h = 1e-3;
      const double extrapolated = (4 * central(i, h / 2) - central(i, h)) / 3;
      worst = std::max(worst, std::abs(grad[i] - extrapolated) / (1e-6 + std::abs(grad[i])));
    }
    INFO("seed " << seed << " scale " << scale);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("parameters the loss never reads get zero gradient") {
  const auto c = small_config();
  const auto m = random_model(c, 8);
  const auto M = static_cast<TokenId>(c.V);
  // Length 3 of L_max 6; token 4 never appears.
  const std::vector<MaskedExample> batch = {{{0, 1, 2}, {0, M, 2}}};
  std::vector<double> grad(m.params().size());
  m.loss_and_grad(batch, grad);
  const auto& pos = m.tensor("embed.positional");
  for (std::size_t i = 3 * c.d; i < pos.size(); ++i) CHECK(std::abs(grad[pos.offset + i]) <= 1e-10);
  const auto& table = m.tensor("embed.table");
  for (std::size_t j = 0; j < c.d; ++j) CHECK(std::abs(grad[table.offset + 4 * c.d + j]) <= 1e-10);
}

TEST_CASE("gradient is linear in the loss scale") {
  const auto c = small_config();
  const auto m = random_model(c, 9);
  const auto batch = small_batch(c);
  std::vector<double> g1(m.params().size()), g2(m.params().size());
  const double l1 = m.loss_and_grad(batch, g1, 1.0);
  const double l2 = m.loss_and_grad(batch, g2, 2.0);
  CHECK(l2 == Approx(2.0 * l1).epsilon(1e-12));
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(std::abs(g2[i] - 2.0 * g1[i]) <= 1e-9);
}

TEST_CASE("spectral_inputs with identity projections") {
  DenoiserConfig c = small_config();
  c.n_heads = 1;
  c.d = 4;
  c.d_ff = 4;
  Rng rng(10);
  auto m = DenoiserModel::init(c, rng);
  for (const char* name : {"layer0.attn.wq", "layer0.attn.wk"}) {
    auto w = m.view(m.tensor(name));
    for (std::size_t i = 0; i < c.d; ++i)
      for (std::size_t j = 0; j < c.d; ++j) w[i * c.d + j] = i == j ? 1.0 : 0.0;
  }
  const auto s = m.spectral_inputs(0, 0);
  for (std::size_t i = 0; i < c.d; ++i)
    for (std::size_t j = 0; j < c.d; ++j) CHECK(s.qk(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("spectral_inputs shapes and round trip") {
  const auto c = small_config();
  const auto m = random_model(c, 11);
  const std::size_t dh = c.d_head();
  for (std::size_t layer = 0; layer < c.n_layers; ++layer) {
    const std::string p = "layer" + std::to_string(layer) + ".attn.";
    const auto wq = m.view(m.tensor(p + "wq"));
    const auto wk = m.view(m.tensor(p + "wk"));
    const auto wv = m.view(m.tensor(p + "wv"));
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      const auto s = m.spectral_inputs(layer, h);
      CHECK(s.qk.rows == c.d);
      CHECK(s.qk.cols == c.d);
      CHECK(s.v.rows == c.d);
      CHECK(s.v.cols == dh);
      for (std::size_t r = 0; r < c.d; ++r) {
        for (std::size_t j = 0; j < dh; ++j) CHECK(s.v(r, j) == wv[r * c.d + h * dh + j]);
        for (std::size_t r2 = 0; r2 < c.d; ++r2) {
          double acc = 0;
          for (std::size_t j = 0; j < dh; ++j) acc += wq[r * c.d + h * dh + j] * wk[r2 * c.d + h * dh + j];
          CHECK(s.qk(r, r2) == Approx(acc).epsilon(1e-14));
        }
      }
    }
  }
  CHECK_THROWS_AS(m.spectral_inputs(c.n_layers, 0), Error);
  CHECK_THROWS_AS(m.spectral_inputs(0, c.n_heads), Error);
}

TEST_CASE("attention output is linear in the values with queries and keys frozen") {
  DenoiserConfig c = small_config();
  c.n_layers = 1;
  const auto m = random_model(c, 12);
  Rng rng(13);
  const Matrix qk = random_embeddings(5, c.d, 1.0, rng);
  const Matrix v1 = random_embeddings(5, c.d, 1.0, rng);
  const Matrix v2 = random_embeddings(5, c.d, 1.0, rng);
  const double a = 0.7, b = -1.3;
  Matrix mix(5, c.d);
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * v1.data[i] + b * v2.data[i];
  for (std::size_t head = 0; head <= c.n_heads; ++head) {
    const Matrix f1 = m.attention_map(0, head, qk, v1);
    const Matrix f2 = m.attention_map(0, head, qk, v2);
    const Matrix fm = m.attention_map(0, head, qk, mix);
    for (std::size_t i = 0; i < fm.data.size(); ++i)
      CHECK(std::abs(fm.data[i] - (a * f1.data[i] + b * f2.data[i])) <= 1e-12);
  }
}

TEST_CASE("overfitting a single sequence") {
  DenoiserConfig c = small_config();
  c.V = 8;
  c.L_max = 8;
  Rng rng(14);
  auto m = DenoiserModel::init(c, rng);
  Trainer trainer(m, {});
  const std::vector<TrainExample> batch(8, TrainExample{{3, 1, 4, 1, 5, 2, 6, 5}, 0});
  const auto schedule = NoiseSchedule::linear(8);
  for (int s = 0; s < 500; ++s) trainer.step(batch, schedule, rng);
  const auto M = m.mask_token();
  const std::vector<MaskedExample> all_masked = {{batch[0].tokens, TokenSeq(8, M)}};
  CHECK(m.masked_loss(all_masked) < 0.01);
}

TEST_CASE("overfit on ABBA decodes ABBA from all-MASK input") {
  DenoiserConfig c = small_config();
  c.V = 2;
  c.L_max = 4;
  Rng rng(15);
  auto m = DenoiserModel::init(c, rng);
  Trainer trainer(m, {});
  const TokenId A = 0, B = 1;
  const std::vector<TrainExample> batch(4, TrainExample{{A, B, B, A}, 0});
  const auto schedule = NoiseSchedule::linear(4);
  for (int s = 0; s < 300; ++s) trainer.step(batch, schedule, rng);
  const auto out = m.forward(m.embed_tokens(TokenSeq(4, m.mask_token())));
  const TokenSeq expect = {A, B, B, A};
  for (std::size_t i = 0; i < 4; ++i) CHECK(static_cast<TokenId>(out.dists[i].argmax()) == expect[i]);
}

TEST_CASE("trainer rejects an empty batch") {
  const auto c = small_config();
  Rng rng(16);
  auto m = DenoiserModel::init(c, rng);
  Trainer trainer(m, {});
  const std::vector<TrainExample> none;
  CHECK_THROWS_AS(trainer.step(none, NoiseSchedule::linear(4), rng), Error);
}

TEST_CASE("copy-task loss decreases block by block and training is deterministic") {
  RunConfig cfg;
  cfg.train.steps = 250;
  cfg.train.log_every = 1;
  cfg.finalize();
  TrainReport r1, r2;
  const auto m1 = train_model(cfg, 5, &r1);
  const auto m2 = train_model(cfg, 5, &r2);
  CHECK(std::equal(m1.params().begin(), m1.params().end(), m2.params().begin(), m2.params().end()));
  REQUIRE(r1.losses.size() == 250);

  std::vector<double> blocks;
  for (std::size_t b = 0; b < 5; ++b) {
    double s = 0;
    for (std::size_t i = 0; i < 50; ++i) s += r1.losses[b * 50 + i].second;
    blocks.push_back(s / 50);
  }
  for (std::size_t b = 1; b < blocks.size(); ++b) {
    INFO("block " << b << ": " << blocks[b - 1] << " -> " << blocks[b]);
    CHECK(blocks[b] < blocks[b - 1]);
  }
}

TEST_CASE("MASK row starts at about 0.38 of the token-row norm") {
  DenoiserConfig c = small_config();
  c.d = 256;
  c.n_heads = 1;
  c.d_ff = 4;
  c.n_layers = 1;
  c.V = 20;
  double ratio = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + s);
    const auto m = DenoiserModel::init(c, rng);
    const auto t = m.table();
    double mask = 0, tok = 0;
    for (double v : t.mask_row()) mask += v * v;
    for (std::size_t v = 0; v < c.V; ++v) {
      double n = 0;
      for (double x : t.row(v)) n += x * x;
      tok += std::sqrt(n);
    }
    ratio += std::sqrt(mask) / (tok / c.V);
  }
  CHECK(ratio / seeds == Approx(0.38).epsilon(0.03));
}

TEST_CASE("checkpoint round trip is exact") {
  const auto c = small_config();
  const auto m = random_model(c, 17);
  std::stringstream ss;
  save_checkpoint(m, ss);
  const std::string text = ss.str();
  CHECK(text.rfind("lrd-ckpt v1\n", 0) == 0);
  const auto back = load_checkpoint(ss);
  CHECK(back.config() == m.config());
  CHECK(std::equal(back.params().begin(), back.params().end(), m.params().begin(), m.params().end()));

  std::stringstream again;
  save_checkpoint(back, again);
  CHECK(again.str() == text);
}

TEST_CASE("checkpoint loader rejects malformed input") {
  const auto c = small_config();
  const auto m = random_model(c, 18);
  std::stringstream ss;
  save_checkpoint(m, ss);
  const std::string text = ss.str();

  std::stringstream wrong_version("lrd-ckpt v2\n" + text.substr(text.find('\n') + 1));
  CHECK_THROWS_AS(load_checkpoint(wrong_version), Error);

  std::stringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(truncated), Error);

  std::stringstream empty("");
  CHECK_THROWS_AS(load_checkpoint(empty), Error);

  std::string renamed = text;
  renamed.replace(renamed.find("head.w"), 6, "head.x");
  std::stringstream bad_name(renamed);
  CHECK_THROWS_AS(load_checkpoint(bad_name), Error);
}
