#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file sampler.hpp
 * @brief Latent refinement decoding and the hard-assignment baseline.
 *
 * Open (uncommitted) positions are fed to the denoiser as soft embeddings
 *
 *   e = (1 - a) * e_MASK + a * sum_{v in nucleus} pbar(v) * e_v,
 *   a = r_f * (1 - Hnorm(nucleus)),
 *
 * built from the previous step's prediction at that position. Decoding runs
 * in two phases:
 *
 *  - Refine: forward, rebuild every open embedding, repeat until the mean
 *    KL between consecutive predictions drops below tau_refine or T_refine
 *    iterations have run. Nothing is committed.
 *  - Decode: forward, commit the k lowest-entropy open positions to their
 *    argmax, rebuild the rest as soft embeddings. With early stopping on, a
 *    mean KL below tau_decode finalises every open position to its argmax.
 *
 * The baseline commits the same way but resets open positions to e_MASK.
 * Temperature is always 0; every decode is deterministic.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrd/common.hpp"
#include "lrd/denoiser.hpp"
#include "lrd/probcore.hpp"

namespace lrd {

enum class Phase { Refine, Decode, Done };
const char* phase_name(Phase p);

/// How the KL monitor averages over positions.
enum class KlAverage {
  OpenPositions,  // mean over currently open positions
  AllPositions,   // sum over open positions divided by all generated positions
};

/// How the mixing weight normalises entropy.
enum class EntropyNorm {
  Nucleus,    // entropy of renormalised nucleus / log |nucleus|
  FullVocab,  // entropy of the full distribution / log V
};

struct SamplerConfig {
  double r_f = 0.15;
  double top_p = 0.9;
  double tau_refine = 0.1;
  double tau_decode = 0.1;
  std::size_t T_refine = 20;
  std::size_t commits_per_step = 1;
  std::size_t block_size = 0;  // 0 = whole generation as one block
  double kl_smoothing = 1e-10;
  std::size_t max_steps = 100000;
  bool early_stop = true;
  KlAverage kl_average = KlAverage::OpenPositions;
  EntropyNorm entropy_norm = EntropyNorm::Nucleus;

  /// Forced refinement passes before every commit during decoding (LFxk).
  std::size_t refine_per_commit = 0;
  /// Refine before every commit until the KL monitor drops below
  /// tau_refine, capped at T_refine passes (Auto).
  bool auto_refine_per_commit = false;

  /// Record wall-clock per step. Off by default so traces are reproducible.
  bool record_wallclock = false;

  /// Throws Error if any field is out of range.
  void validate() const;
};

/// Soft embedding plus the quantities it was built from.
struct MixResult {
  std::vector<double> embedding;
  double alpha = 0.0;
  std::size_t nucleus_size = 0;  // 0 when mixing was disabled (top_p = 0)
};

/// Soft embedding for one position. top_p = 0 or r_f = 0 gives e_MASK.
MixResult mix_embedding_detailed(const Categorical& dist, const EmbeddingTable& table, double r_f,
                                 double top_p, EntropyNorm norm = EntropyNorm::Nucleus);
std::vector<double> mix_embedding(const Categorical& dist, const EmbeddingTable& table, double r_f,
                                  double top_p, EntropyNorm norm = EntropyNorm::Nucleus);

/// Arithmetic mean of KL(cur_i || prev_i). 0 for empty input.
double mean_step_kl(std::span<const Categorical> prev, std::span<const Categorical> cur, double smoothing);

/// The k open positions of lowest entropy, ties by ascending position;
/// returned in selection order. Throws Error if `open` is empty.
std::vector<std::size_t> select_commits(std::span<const double> entropies, std::span<const std::size_t> open,
                                        std::size_t k);
/// Same, with entropies taken from per-position distributions.
std::vector<std::size_t> select_commits(std::span<const Categorical> dists, std::span<const std::size_t> open,
                                        std::size_t k);

struct PositionState {
  std::optional<TokenId> committed;
  std::vector<double> soft_embed;  // content vector for an open position
  std::optional<Categorical> last_dist;
  double alpha = 0.0;
};

struct SamplerState {
  std::vector<PositionState> positions;  // prompt followed by generation
  std::size_t prompt_len = 0;
  std::size_t scope_begin = 0;  // positions eligible for refinement/commit
  std::size_t scope_end = 0;
  Phase phase = Phase::Refine;
  std::size_t step = 0;  // forward passes so far
  std::optional<std::size_t> t_star;
  bool early_stopped = false;
  std::vector<std::size_t> commit_log;  // absolute positions in commit order

  bool is_open(std::size_t i) const {
    return i >= scope_begin && i < scope_end && !positions[i].committed;
  }
  std::vector<std::size_t> open_positions() const;
  std::size_t n_committed_generated() const;
};

/// Prompt committed; every generated position open with e_MASK.
SamplerState init_state(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len);

struct DecodeRecord {
  std::size_t step = 0;
  Phase phase = Phase::Refine;
  std::optional<double> mean_kl;
  std::size_t n_committed = 0;
  double min_open_entropy = 0.0;
  std::int64_t wallclock_ns = 0;

  // Not serialised.
  std::vector<TokenId> argmax;  // per generated position, this pass
  double mean_alpha = 0.0;
  double nucleus_fraction = 0.0;   // mean |nucleus| / V over rebuilt positions
  double positive_fraction = 0.0;  // mean |{v: p(v) > 0}| / V over the same
  std::size_t n_mixed = 0;
};

struct DecodeTrace {
  std::vector<DecodeRecord> records;

  /// Records that correspond to a forward pass (everything except Done).
  std::size_t forward_passes() const;
  /// Header `step,phase,mean_kl,n_committed,min_open_entropy,wallclock_ns`.
  std::string to_csv() const;
  void append_csv_rows(std::string& out) const;
};

inline constexpr const char* kTraceCsvHeader = "step,phase,mean_kl,n_committed,min_open_entropy,wallclock_ns";

struct DecodeResult {
  TokenSeq tokens;  // generated positions only
  DecodeTrace trace;
  std::size_t forward_passes = 0;
  bool early_stopped = false;
  std::optional<std::size_t> t_star;
};

/// Runs up to T_refine refinement iterations. Appends to trace.
void phase1_refine(const Denoiser& model, SamplerState& state, const SamplerConfig& config,
                   DecodeTrace& trace);
/// Commits until every in-scope position is committed or early stop fires.
/// Throws NonConvergence if max_steps runs out with open positions and
/// early stopping disabled.
void phase2_decode(const Denoiser& model, SamplerState& state, const SamplerConfig& config,
                   DecodeTrace& trace);

/// Hard-assignment decoding: k commits per pass, other open positions e_MASK.
DecodeResult decode_baseline(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                             std::size_t k, bool record_wallclock = false);

/// Refine then decode over the whole generation.
DecodeResult decode_lrd(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                        const SamplerConfig& config);

struct SemiArResult {
  TokenSeq tokens;
  std::vector<DecodeTrace> block_traces;
  std::vector<TokenSeq> block_snapshots;  // generated tokens after each block
  std::vector<std::size_t> commit_order;  // generated-position index per commit
  std::size_t forward_passes = 0;
  bool early_stopped = false;
};

/// Left-to-right blocks of config.block_size (0 = one block); each block is
/// refined and decoded with later blocks held at e_MASK.
SemiArResult decode_semi_ar(const Denoiser& model, std::span<const TokenId> prompt, std::size_t gen_len,
                            const SamplerConfig& config);

}  // namespace lrd
