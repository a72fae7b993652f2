#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file harness.hpp
 * @brief Training, evaluation corpora and the benchmark / ablation / sweep
 * runners behind the CLI.
 *
 * Speed is reported as denoiser forward passes per sequence. Wall-clock is
 * recorded only when timing is requested, so every CSV is byte-identical
 * across runs with the same seed unless timing is on.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrd/config.hpp"
#include "lrd/denoiser.hpp"
#include "lrd/sampler.hpp"
#include "lrd/tasks.hpp"

namespace lrd {

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> losses;  // (step, loss) every log_every steps
  double final_loss = 0.0;
};

/// Seed layout: init, corruption and data each get their own stream
/// derived from `seed`.
DenoiserModel train_model(const RunConfig& cfg, std::uint64_t seed, TrainReport* report = nullptr);
std::string train_log_csv(const TrainReport& report);

/// Evaluation corpus of cfg.eval.n examples on a stream disjoint from the
/// training data.
std::vector<TaskExample> eval_corpus(const RunConfig& cfg, std::uint64_t seed);

enum class MethodKind { Baseline, Lrd, SemiAr };

struct Method {
  std::string label;
  MethodKind kind = MethodKind::Lrd;
  SamplerConfig sampler;
  std::size_t k = 1;  // baseline commits per step
};

struct SequenceOutcome {
  std::size_t index = 0;
  TokenSeq tokens;
  bool exact = false;
  std::size_t forward_passes = 0;
  std::size_t e_token = 0;
  bool early_stopped = false;
  std::int64_t wallclock_ns = 0;
  std::optional<std::size_t> t_star;
  DecodeTrace trace;  // concatenated block traces for semi-AR
};

struct BenchResult {
  std::string method;
  double exact_match = 0.0;
  double mean_forward_passes = 0.0;
  double mean_wallclock_ns = 0.0;
  double e_token = 0.0;
  std::size_t n_sequences = 0;
  // Weighted by rebuilt positions over every forward pass.
  double nucleus_fraction = 0.0;
  double positive_fraction = 0.0;
  double mean_alpha = 0.0;
};

struct MethodRun {
  BenchResult summary;
  std::vector<SequenceOutcome> sequences;  // sorted by index
};

/// Decodes every corpus example with one method; sequences run in
/// parallel, results are ordered by index.
MethodRun run_method(const Denoiser& model, const std::vector<TaskExample>& corpus, const Method& method,
                     TokenId eos, bool timing = false);

std::vector<MethodRun> run_benchmark(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                     const std::vector<Method>& methods, TokenId eos, bool timing = false);

/// Baseline plus LRD with `sampler`.
std::vector<Method> benchmark_methods(const SamplerConfig& sampler, std::size_t k);

/// baseline, full, w/o latent refinement, w/o mix embed, w/o early stop,
/// LFx1..LFx5, Auto.
std::vector<Method> ablation_methods(const SamplerConfig& base, std::size_t k);
std::vector<MethodRun> run_ablations(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                     const SamplerConfig& base, std::size_t k, TokenId eos, bool timing = false);

inline constexpr const char* kBenchCsvHeader =
    "method,exact_match,mean_forward_passes,mean_wallclock_ns,e_token,n_sequences";
inline constexpr const char* kSequenceCsvHeader = "method,index,exact,forward_passes,e_token,early_stopped,tokens";
std::string bench_csv(const std::vector<MethodRun>& runs);
std::string sequences_csv(const std::vector<MethodRun>& runs);

struct SweepRow {
  std::string param;  // "r_f" or "top_p"
  double value = 0.0;
  BenchResult result;
};

inline const std::vector<double> kRfGrid = {0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0};
inline const std::vector<double> kTopPGrid = {0.0, 0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0};

/// The sweeps isolate the mixing rule: they run `base` with latent
/// refinement and early stopping switched off, so the r_f = 0 and top_p = 0
/// rows reduce to the baseline exactly.
std::vector<SweepRow> run_sweeps(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                 const SamplerConfig& base, TokenId eos);
inline constexpr const char* kSweepCsvHeader =
    "param,value,exact_match,mean_forward_passes,nucleus_fraction,positive_fraction";
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Mean KL per refinement iteration (index 0 is iteration 1).
std::vector<std::optional<double>> phase1_kl(const DecodeTrace& trace);

struct KlDynamics {
  std::string aligned_csv;      // step,phase,offset,mean_kl,n
  std::string convergence_csv;  // iteration,two_step_fraction,three_step_fraction
};

/// Throws Error unless every trace has the same number of refinement
/// iterations.
KlDynamics emit_kl_dynamics(const std::vector<DecodeTrace>& traces, double tau_refine);

}  // namespace lrd
