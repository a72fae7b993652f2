// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace lrd {

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point start, bool enabled) {
  if (!enabled) return 0;
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Rows: committed -> e_tok, otherwise the stored soft vector; plus positional.
Matrix build_inputs(const Denoiser& model, const SamplerState& state) {
  const auto table = model.table();
  const std::size_t d = table.dim();
  Matrix x(state.positions.size(), d);
  for (std::size_t i = 0; i < state.positions.size(); ++i) {
    const auto& p = state.positions[i];
    if (p.committed) {
      const auto row = table.row(static_cast<std::size_t>(*p.committed));
      std::copy(row.begin(), row.end(), x.row(i).begin());
    } else {
      std::copy(p.soft_embed.begin(), p.soft_embed.end(), x.row(i).begin());
    }
  }
  model.add_positional(x);
  return x;
}

std::vector<TokenId> generated_argmax(const SamplerState& state, const std::vector<Categorical>& dists) {
  std::vector<TokenId> out;
  out.reserve(state.positions.size() - state.prompt_len);
  for (std::size_t i = state.prompt_len; i < dists.size(); ++i) out.push_back(static_cast<TokenId>(dists[i].argmax()));
  return out;
}

// KL monitor over the given open positions; nullopt when any lacks a
// predecessor in this phase.
std::optional<double> monitor_kl(const SamplerState& state, const std::vector<Categorical>& cur,
                                 const std::vector<std::size_t>& open, bool have_prev, const SamplerConfig& cfg) {
  if (!have_prev) return std::nullopt;
  if (open.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i : open) {
    const auto& prev = state.positions[i].last_dist;
    if (!prev) return std::nullopt;
    sum += kl(cur[i], *prev, cfg.kl_smoothing);
  }
  const std::size_t denom =
      cfg.kl_average == KlAverage::OpenPositions ? open.size() : state.scope_end - state.scope_begin;
  return sum / static_cast<double>(denom);
}

double min_entropy(const std::vector<Categorical>& dists, const std::vector<std::size_t>& open) {
  if (open.empty()) return 0.0;
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i : open) m = std::min(m, entropy(dists[i]));
  return m;
}

// Stores the prediction and rebuilds the soft vector for every open position.
void refresh_open(const Denoiser& model, SamplerState& state, const std::vector<Categorical>& dists,
                  const SamplerConfig& cfg, DecodeRecord& rec) {
  const auto table = model.table();
  const double V = static_cast<double>(table.vocab());
  double alpha_sum = 0.0, nucleus_sum = 0.0, positive_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i : state.open_positions()) {
    auto& pos = state.positions[i];
    MixResult mix = mix_embedding_detailed(dists[i], table, cfg.r_f, cfg.top_p, cfg.entropy_norm);
    pos.soft_embed = std::move(mix.embedding);
    pos.alpha = mix.alpha;
    pos.last_dist = dists[i];
    alpha_sum += mix.alpha;
    nucleus_sum += static_cast<double>(mix.nucleus_size) / V;
    const auto probs = dists[i].probs();
    positive_sum += static_cast<double>(std::count_if(probs.begin(), probs.end(), [](double p) { return p > 0.0; })) / V;
    ++n;
  }
  rec.n_mixed = n;
  if (n > 0) {
    rec.mean_alpha = alpha_sum / static_cast<double>(n);
    rec.nucleus_fraction = nucleus_sum / static_cast<double>(n);
    rec.positive_fraction = positive_sum / static_cast<double>(n);
  }
}

void commit(SamplerState& state, std::size_t pos, TokenId token) {
  state.positions[pos].committed = token;
  state.commit_log.push_back(pos);
}

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Refine:
      return "refine";
    case Phase::Decode:
      return "decode";
    case Phase::Done:
      return "done";
  }
  return "unknown";
}

void SamplerConfig::validate() const {
  if (!(r_f >= 0.0 && r_f <= 1.0)) throw Error("SamplerConfig: r_f must lie in [0, 1]");
  if (!(top_p >= 0.0 && top_p <= 1.0)) throw Error("SamplerConfig: top_p must lie in [0, 1]");
  if (!(tau_refine >= 0.0) || !(tau_decode >= 0.0)) throw Error("SamplerConfig: thresholds must be >= 0");
  if (commits_per_step < 1) throw Error("SamplerConfig: commits_per_step must be >= 1");
  if (!(kl_smoothing >= 0.0)) throw Error("SamplerConfig: kl_smoothing must be >= 0");
  if (max_steps < 1) throw Error("SamplerConfig: max_steps must be >= 1");
}

MixResult mix_embedding_detailed(const Categorical& dist, const EmbeddingTable& table, double r_f, double top_p,
                                 EntropyNorm norm) {
  if (dist.size() != table.vocab()) throw Error("mix_embedding: distribution size does not match vocabulary");
  const auto mask = table.mask_row();
  MixResult r;
  r.embedding.assign(mask.begin(), mask.end());
  if (top_p <= 0.0) return r;  // no nucleus, no mixing

  const NucleusResult nucleus = top_p_nucleus(dist, top_p);
  r.nucleus_size = nucleus.support.size();
  const double h = norm == EntropyNorm::Nucleus ? normalized_entropy(nucleus) : normalized_entropy_full(dist);
  r.alpha = r_f * (1.0 - h);
  if (r.alpha == 0.0) return r;

  const std::size_t d = table.dim();
  std::vector<double> expected(d, 0.0);
  for (std::size_t s = 0; s < nucleus.support.size(); ++s) {
    const auto row = table.row(nucleus.support[s]);
    const double w = nucleus.renorm_probs[s];
    for (std::size_t j = 0; j < d; ++j) expected[j] += w * row[j];
  }
  for (std::size_t j = 0; j < d; ++j) r.embedding[j] = (1.0 - r.alpha) * mask[j] + r.alpha * expected[j];
  return r;
}

std::vector<double> mix_embedding(const Categorical& dist, const EmbeddingTable& table, double r_f, double top_p,
                                  EntropyNorm norm) {
  return mix_embedding_detailed(dist, table, r_f, top_p, norm).embedding;
}

double mean_step_kl(std::span<const Categorical> prev, std::span<const Categorical> cur, double smoothing) {
  if (prev.size() != cur.size()) throw Error("mean_step_kl: length mismatch");
  if (cur.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) sum += kl(cur[i], prev[i], smoothing);
  return sum / static_cast<double>(cur.size());
}

std::vector<std::size_t> select_commits(std::span<const double> entropies, std::span<const std::size_t> open,
                                        std::size_t k) {
  if (open.empty()) throw Error("select_commits: no open positions");
  if (k < 1) throw Error("select_commits: k must be >= 1");
  std::vector<std::size_t> order(open.begin(), open.end());
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (entropies[a] != entropies[b]) return entropies[a] < entropies[b];
    return a < b;
  });
  order.resize(std::min(k, order.size()));
  return order;
}

std::vector<std::size_t> select_commits(std::span<const Categorical> dists, std::span<const std::size_t> open,
                                        std::size_t k) {
  std::vector<double> h(dists.size(), 0.0);
  for (std::size_t i : open) h.at(i) = entropy(dists[i]);
  return select_commits(h, open, k);
}

std::vector<std::size_t> SamplerState::open_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = scope_begin; i < scope_end; ++i) {
    if (!positions[i].committed) out.push_back(i);
  }
  return out;
}

std::size_t SamplerState::n_committed_generated() const {
  std::size_t n = 0;
  for (std::size_t i = prompt_len; i < positions.size(); ++i) n += positions[i].committed ? 1 : 0;
  return n;
}

SamplerState init_state(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len) {
  const auto table = model.table();
  if (prompt.size() + gen_len > model.max_length()) throw Error("init_state: prompt + generation exceeds L_max");
  const auto mask = table.mask_row();
  SamplerState s;
  s.prompt_len = prompt.size();
  s.positions.resize(prompt.size() + gen_len);
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    if (prompt[i] < 0 || static_cast<std::size_t>(prompt[i]) >= table.vocab()) throw Error("init_state: bad prompt token");
    s.positions[i].committed = prompt[i];
  }
  for (std::size_t i = prompt.size(); i < s.positions.size(); ++i) {
    s.positions[i].soft_embed.assign(mask.begin(), mask.end());
  }
  s.scope_begin = prompt.size();
  s.scope_end = s.positions.size();
  return s;
}

std::size_t DecodeTrace::forward_passes() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const DecodeRecord& r) { return r.phase != Phase::Done; }));
}

void DecodeTrace::append_csv_rows(std::string& out) const {
  for (const auto& r : records) {
    out += std::to_string(r.step);
    out += ',';
    out += phase_name(r.phase);
    out += ',';
    if (r.mean_kl) out += format_double(*r.mean_kl);
    out += ',';
    out += std::to_string(r.n_committed);
    out += ',';
    out += format_double(r.min_open_entropy);
    out += ',';
    out += std::to_string(r.wallclock_ns);
    out += '\n';
  }
}

std::string DecodeTrace::to_csv() const {
  std::string out = kTraceCsvHeader;
  out += '\n';
  append_csv_rows(out);
  return out;
}

void phase1_refine(const Denoiser& model, SamplerState& state, const SamplerConfig& config, DecodeTrace& trace) {
  config.validate();
  state.phase = Phase::Refine;
  const auto start = Clock::now();
  for (std::size_t it = 1; it <= config.T_refine; ++it) {
    if (state.step >= config.max_steps) break;
    const auto open = state.open_positions();
    if (open.empty()) break;
    const DenoiserOutput out = model.forward(build_inputs(model, state));
    ++state.step;

    DecodeRecord rec;
    rec.step = state.step;
    rec.phase = Phase::Refine;
    rec.mean_kl = monitor_kl(state, out.dists, open, it > 1, config);
    rec.min_open_entropy = min_entropy(out.dists, open);
    rec.argmax = generated_argmax(state, out.dists);
    refresh_open(model, state, out.dists, config, rec);
    rec.n_committed = state.n_committed_generated();
    rec.wallclock_ns = elapsed_ns(start, config.record_wallclock);
    trace.records.push_back(std::move(rec));

    const auto& kl_now = trace.records.back().mean_kl;
    if (kl_now && *kl_now < config.tau_refine) {
      state.t_star = state.step;
      break;
    }
  }
  if (!state.t_star) state.t_star = state.step;
  state.phase = Phase::Decode;
}

void phase2_decode(const Denoiser& model, SamplerState& state, const SamplerConfig& config, DecodeTrace& trace) {
  config.validate();
  state.phase = Phase::Decode;
  const auto start = Clock::now();
  bool have_prev = false;
  std::size_t cycle_refines = 0;

  while (!state.open_positions().empty()) {
    const auto open = state.open_positions();
    if (state.step >= config.max_steps) {
      if (!config.early_stop) {
        throw NonConvergence("phase2_decode: max_steps reached with " + std::to_string(open.size()) +
                             " open positions");
      }
      for (std::size_t i : open) {
        const auto& last = state.positions[i].last_dist;
        if (!last) throw NonConvergence("phase2_decode: max_steps reached before any prediction");
        commit(state, i, static_cast<TokenId>(last->argmax()));
      }
      state.early_stopped = true;
      break;
    }

    const DenoiserOutput out = model.forward(build_inputs(model, state));
    ++state.step;

    DecodeRecord rec;
    rec.step = state.step;
    rec.phase = Phase::Decode;
    rec.mean_kl = monitor_kl(state, out.dists, open, have_prev, config);
    rec.min_open_entropy = min_entropy(out.dists, open);
    rec.argmax = generated_argmax(state, out.dists);

    if (config.early_stop && rec.mean_kl && *rec.mean_kl < config.tau_decode) {
      for (std::size_t i : open) commit(state, i, static_cast<TokenId>(out.dists[i].argmax()));
      state.early_stopped = true;
      rec.n_committed = state.n_committed_generated();
      rec.wallclock_ns = elapsed_ns(start, config.record_wallclock);
      trace.records.push_back(std::move(rec));
      break;
    }

    bool refine_only = false;
    if (config.refine_per_commit > 0) {
      refine_only = cycle_refines < config.refine_per_commit;
    } else if (config.auto_refine_per_commit) {
      const bool settled = rec.mean_kl && *rec.mean_kl < config.tau_refine;
      refine_only = !settled && cycle_refines < config.T_refine;
    }

    if (refine_only) {
      ++cycle_refines;
    } else {
      for (std::size_t i : select_commits(out.dists, open, config.commits_per_step)) {
        commit(state, i, static_cast<TokenId>(out.dists[i].argmax()));
      }
      cycle_refines = 0;
    }
    refresh_open(model, state, out.dists, config, rec);
    rec.n_committed = state.n_committed_generated();
    rec.wallclock_ns = elapsed_ns(start, config.record_wallclock);
    trace.records.push_back(std::move(rec));
    have_prev = true;
  }
  state.phase = Phase::Done;
}

namespace {

TokenSeq generated_tokens(const SamplerState& state) {
  TokenSeq out;
  for (std::size_t i = state.prompt_len; i < state.positions.size(); ++i) {
    out.push_back(state.positions[i].committed ? *state.positions[i].committed : static_cast<TokenId>(-1));
  }
  return out;
}

DecodeRecord done_record(const SamplerState& state) {
  DecodeRecord r;
  r.step = state.step;
  r.phase = Phase::Done;
  r.n_committed = state.n_committed_generated();
  return r;
}

}  // namespace

DecodeResult decode_baseline(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                             std::size_t k, bool record_wallclock) {
  if (k < 1) throw Error("decode_baseline: k must be >= 1");
  SamplerState state = init_state(model, prompt, gen_len);
  DecodeResult res;
  const auto start = Clock::now();
  const auto mask = model.table().mask_row();
  state.phase = Phase::Decode;
  while (true) {
    const auto open = state.open_positions();
    if (open.empty()) break;
    const DenoiserOutput out = model.forward(build_inputs(model, state));
    ++state.step;
    DecodeRecord rec;
    rec.step = state.step;
    rec.phase = Phase::Decode;
    rec.min_open_entropy = min_entropy(out.dists, open);
    rec.argmax = generated_argmax(state, out.dists);
    for (std::size_t i : select_commits(out.dists, open, k)) {
      commit(state, i, static_cast<TokenId>(out.dists[i].argmax()));
    }
    for (std::size_t i : state.open_positions()) {
      state.positions[i].soft_embed.assign(mask.begin(), mask.end());
      state.positions[i].last_dist = out.dists[i];
    }
    rec.n_committed = state.n_committed_generated();
    rec.wallclock_ns = elapsed_ns(start, record_wallclock);
    res.trace.records.push_back(std::move(rec));
  }
  state.phase = Phase::Done;
  res.trace.records.push_back(done_record(state));
  res.tokens = generated_tokens(state);
  res.forward_passes = state.step;
  return res;
}

SemiArResult decode_semi_ar(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                            const SamplerConfig& config) {
  config.validate();
  SamplerState state = init_state(model, prompt, gen_len);
  SemiArResult res;
  const std::size_t block = config.block_size == 0 ? std::max<std::size_t>(gen_len, 1) : config.block_size;
  for (std::size_t b0 = 0; b0 < gen_len; b0 += block) {
    state.scope_begin = state.prompt_len + b0;
    state.scope_end = state.prompt_len + std::min(gen_len, b0 + block);
    state.t_star.reset();
    DecodeTrace trace;
    phase1_refine(model, state, config, trace);
    phase2_decode(model, state, config, trace);
    trace.records.push_back(done_record(state));
    res.early_stopped = res.early_stopped || state.early_stopped;
    state.early_stopped = false;
    res.block_traces.push_back(std::move(trace));
    res.block_snapshots.push_back(generated_tokens(state));
  }
  res.tokens = generated_tokens(state);
  res.forward_passes = state.step;
  for (std::size_t p : state.commit_log) res.commit_order.push_back(p - state.prompt_len);
  return res;
}

DecodeResult decode_lrd(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                        const SamplerConfig& config) {
  config.validate();
  SamplerState state = init_state(model, prompt, gen_len);
  DecodeResult res;
  if (gen_len > 0) {
    phase1_refine(model, state, config, res.trace);
    phase2_decode(model, state, config, res.trace);
  }
  state.phase = Phase::Done;
  res.trace.records.push_back(done_record(state));
  res.tokens = generated_tokens(state);
  res.forward_passes = state.step;
  res.early_stopped = state.early_stopped;
  res.t_star = state.t_star;
  return res;
}

}  // namespace lrd
