// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <map>

namespace lrd {

namespace {

// Stream ids under the master seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kNoiseStream = 2;
constexpr std::uint64_t kDataStream = 3;
constexpr std::uint64_t kEvalStreamBase = 1000;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_tokens(const TokenSeq& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s[i]);
  }
  return out;
}

SequenceOutcome decode_one(const Denoiser& model, const TaskExample& ex, const Method& m, bool timing) {
  SequenceOutcome o;
  const auto start = std::chrono::steady_clock::now();
  switch (m.kind) {
    case MethodKind::Baseline: {
      DecodeResult r = decode_baseline(model, ex.prompt, ex.target.size(), m.k);
      o.tokens = std::move(r.tokens);
      o.forward_passes = r.forward_passes;
      o.trace = std::move(r.trace);
      break;
    }
    case MethodKind::Lrd: {
      DecodeResult r = decode_lrd(model, ex.prompt, ex.target.size(), m.sampler);
      o.tokens = std::move(r.tokens);
      o.forward_passes = r.forward_passes;
      o.early_stopped = r.early_stopped;
      o.t_star = r.t_star;
      o.trace = std::move(r.trace);
      break;
    }
    case MethodKind::SemiAr: {
      SemiArResult r = decode_semi_ar(model, ex.prompt, ex.target.size(), m.sampler);
      o.tokens = std::move(r.tokens);
      o.forward_passes = r.forward_passes;
      o.early_stopped = r.early_stopped;
      for (auto& t : r.block_traces) {
        o.trace.records.insert(o.trace.records.end(), t.records.begin(), t.records.end());
      }
      break;
    }
  }
  if (timing) {
    o.wallclock_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - start).count();
  }
  return o;
}

}  // namespace

DenoiserModel train_model(const RunConfig& cfg, std::uint64_t seed, TrainReport* report) {
  RunConfig c = cfg;
  c.finalize();
  Rng init_rng(derive_seed(seed, kInitStream));
  Rng noise_rng(derive_seed(seed, kNoiseStream));
  DenoiserModel model = DenoiserModel::init(c.model, init_rng);
  Trainer trainer(model, c.train.optim);
  const NoiseSchedule schedule = NoiseSchedule::linear(c.train.schedule_steps);
  SyntheticTask data = c.task;
  data.seed = derive_seed(seed, kDataStream);

  std::vector<TrainExample> batch(c.train.batch);
  double loss = 0.0;
  for (std::size_t step = 0; step < c.train.steps; ++step) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      const TaskExample ex = generate_example(data, step * c.train.batch + j);
      batch[j].tokens = ex.prompt;
      batch[j].tokens.insert(batch[j].tokens.end(), ex.target.begin(), ex.target.end());
      batch[j].prompt_len = ex.prompt.size();
    }
    loss = trainer.step(batch, schedule, noise_rng);
    if (report && c.train.log_every > 0 && (step % c.train.log_every == 0 || step + 1 == c.train.steps)) {
      report->losses.emplace_back(step, loss);
    }
  }
  if (report) report->final_loss = loss;
  return model;
}

std::string train_log_csv(const TrainReport& report) {
  std::string out = "step,loss\n";
  for (const auto& [step, loss] : report.losses) out += std::to_string(step) + ',' + fmt(loss) + '\n';
  return out;
}

std::vector<TaskExample> eval_corpus(const RunConfig& cfg, std::uint64_t seed) {
  SyntheticTask t = cfg.task;
  t.seed = derive_seed(seed, kEvalStreamBase + cfg.eval.seed_stream);
  return generate_task(t, cfg.eval.n);
}

MethodRun run_method(const Denoiser& model, const std::vector<TaskExample>& corpus, const Method& method,
                     TokenId eos, bool timing) {
  if (corpus.empty()) throw Error("run_method: empty corpus");
  MethodRun run;
  run.sequences.resize(corpus.size());
  std::exception_ptr failure;
  const auto n = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      SequenceOutcome o = decode_one(model, corpus[i], method, timing);
      o.index = i;
      o.exact = exact_match(o.tokens, corpus[i].target, eos);
      o.e_token = effective_tokens(o.tokens, eos);
      run.sequences[i] = std::move(o);
    } catch (...) {
#pragma omp critical(lrd_run_method_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  BenchResult& b = run.summary;
  b.method = method.label;
  b.n_sequences = corpus.size();
  double mixed = 0.0;
  for (const auto& o : run.sequences) {
    b.exact_match += o.exact ? 1.0 : 0.0;
    b.mean_forward_passes += static_cast<double>(o.forward_passes);
    b.mean_wallclock_ns += static_cast<double>(o.wallclock_ns);
    b.e_token += static_cast<double>(o.e_token);
    for (const auto& r : o.trace.records) {
      const double w = static_cast<double>(r.n_mixed);
      mixed += w;
      b.nucleus_fraction += w * r.nucleus_fraction;
      b.positive_fraction += w * r.positive_fraction;
      b.mean_alpha += w * r.mean_alpha;
    }
  }
  const double count = static_cast<double>(corpus.size());
  b.exact_match /= count;
  b.mean_forward_passes /= count;
  b.mean_wallclock_ns /= count;
  b.e_token /= count;
  if (mixed > 0.0) {
    b.nucleus_fraction /= mixed;
    b.positive_fraction /= mixed;
    b.mean_alpha /= mixed;
  }
  return run;
}

std::vector<MethodRun> run_benchmark(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                     const std::vector<Method>& methods, TokenId eos, bool timing) {
  std::vector<MethodRun> out;
  out.reserve(methods.size());
  for (const auto& m : methods) out.push_back(run_method(model, corpus, m, eos, timing));
  return out;
}

std::vector<Method> benchmark_methods(const SamplerConfig& sampler, std::size_t k) {
  std::vector<Method> m;
  m.push_back({"baseline", MethodKind::Baseline, sampler, k});
  m.push_back({"lrd", MethodKind::Lrd, sampler, k});
  return m;
}

std::vector<Method> ablation_methods(const SamplerConfig& base, std::size_t k) {
  std::vector<Method> m;
  m.push_back({"baseline", MethodKind::Baseline, base, k});
  m.push_back({"full", MethodKind::Lrd, base, k});

  SamplerConfig c = base;
  c.T_refine = 0;
  m.push_back({"w/o latent refinement", MethodKind::Lrd, c, k});

  c = base;
  c.r_f = 0.0;
  m.push_back({"w/o mix embed", MethodKind::Lrd, c, k});

  c = base;
  c.early_stop = false;
  m.push_back({"w/o early stop", MethodKind::Lrd, c, k});

  for (std::size_t lf = 1; lf <= 5; ++lf) {
    c = base;
    c.refine_per_commit = lf;
    m.push_back({"LFx" + std::to_string(lf), MethodKind::Lrd, c, k});
  }

  c = base;
  c.auto_refine_per_commit = true;
  m.push_back({"Auto", MethodKind::Lrd, c, k});
  return m;
}

std::vector<MethodRun> run_ablations(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                     const SamplerConfig& base, std::size_t k, TokenId eos, bool timing) {
  return run_benchmark(model, corpus, ablation_methods(base, k), eos, timing);
}

std::string bench_csv(const std::vector<MethodRun>& runs) {
  std::string out = kBenchCsvHeader;
  out += '\n';
  for (const auto& r : runs) {
    const BenchResult& b = r.summary;
    out += b.method + ',' + fmt(b.exact_match) + ',' + fmt(b.mean_forward_passes) + ',' + fmt(b.mean_wallclock_ns) +
           ',' + fmt(b.e_token) + ',' + std::to_string(b.n_sequences) + '\n';
  }
  return out;
}

std::string sequences_csv(const std::vector<MethodRun>& runs) {
  std::string out = kSequenceCsvHeader;
  out += '\n';
  for (const auto& r : runs) {
    for (const auto& o : r.sequences) {
      out += r.summary.method + ',' + std::to_string(o.index) + ',' + (o.exact ? "1" : "0") + ',' +
             std::to_string(o.forward_passes) + ',' + std::to_string(o.e_token) + ',' +
             (o.early_stopped ? "1" : "0") + ',' + join_tokens(o.tokens) + '\n';
    }
  }
  return out;
}

std::vector<SweepRow> run_sweeps(const Denoiser& model, const std::vector<TaskExample>& corpus,
                                 const SamplerConfig& base, TokenId eos) {
  SamplerConfig iso = base;
  iso.T_refine = 0;
  iso.early_stop = false;
  iso.refine_per_commit = 0;
  iso.auto_refine_per_commit = false;

  std::vector<SweepRow> rows;
  for (double v : kRfGrid) {
    SamplerConfig c = iso;
    c.r_f = v;
    rows.push_back({"r_f", v, run_method(model, corpus, {"r_f=" + fmt(v), MethodKind::Lrd, c, c.commits_per_step}, eos).summary});
  }
  for (double v : kTopPGrid) {
    SamplerConfig c = iso;
    c.top_p = v;
    rows.push_back(
        {"top_p", v, run_method(model, corpus, {"top_p=" + fmt(v), MethodKind::Lrd, c, c.commits_per_step}, eos).summary});
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = kSweepCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.param + ',' + fmt(r.value) + ',' + fmt(r.result.exact_match) + ',' + fmt(r.result.mean_forward_passes) +
           ',' + fmt(r.result.nucleus_fraction) + ',' + fmt(r.result.positive_fraction) + '\n';
  }
  return out;
}

std::vector<std::optional<double>> phase1_kl(const DecodeTrace& trace) {
  std::vector<std::optional<double>> out;
  for (const auto& r : trace.records) {
    if (r.phase == Phase::Refine) out.push_back(r.mean_kl);
  }
  return out;
}

KlDynamics emit_kl_dynamics(const std::vector<DecodeTrace>& traces, double tau_refine) {
  if (traces.empty()) throw Error("emit_kl_dynamics: no traces");
  std::size_t R = 0;
  std::vector<std::vector<std::optional<double>>> refine(traces.size()), decode(traces.size());
  for (std::size_t s = 0; s < traces.size(); ++s) {
    for (const auto& r : traces[s].records) {
      if (r.phase == Phase::Refine) refine[s].push_back(r.mean_kl);
      if (r.phase == Phase::Decode) decode[s].push_back(r.mean_kl);
    }
    if (s == 0) R = refine[s].size();
    if (refine[s].size() != R) {
      throw Error("emit_kl_dynamics: traces have different refinement lengths; run with a fixed T_refine");
    }
  }

  KlDynamics out;
  out.aligned_csv = "step,phase,offset,mean_kl,n\n";
  auto emit = [&](std::size_t step, const char* phase, long offset, const std::vector<std::vector<std::optional<double>>>& col,
                  std::size_t idx) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& seq : col) {
      if (idx < seq.size() && seq[idx]) {
        sum += *seq[idx];
        ++n;
      }
    }
    out.aligned_csv += std::to_string(step) + ',' + phase + ',' + std::to_string(offset) + ',' +
                       (n ? fmt(sum / static_cast<double>(n)) : std::string()) + ',' + std::to_string(n) + '\n';
  };
  std::size_t longest = 0;
  for (const auto& d : decode) longest = std::max(longest, d.size());
  std::size_t step = 1;
  for (std::size_t i = 0; i < R; ++i, ++step) emit(step, "refine", static_cast<long>(i) - static_cast<long>(R), refine, i);
  for (std::size_t j = 0; j < longest; ++j, ++step) emit(step, "decode", static_cast<long>(j), decode, j);

  std::vector<std::size_t> two(R + 1, 0), three(R + 1, 0);
  for (const auto& seq : refine) {
    for (std::size_t i = 2; i <= seq.size(); ++i) {
      if (seq[i - 1] && *seq[i - 1] < tau_refine) {
        ++two[i];
        break;
      }
    }
    for (std::size_t i = 3; i <= seq.size(); ++i) {
      if (seq[i - 1] && seq[i - 2] && std::abs(*seq[i - 1] - *seq[i - 2]) < tau_refine) {
        ++three[i];
        break;
      }
    }
  }
  out.convergence_csv = "iteration,two_step_fraction,three_step_fraction\n";
  const double n = static_cast<double>(traces.size());
  for (std::size_t i = 1; i <= R; ++i) {
    out.convergence_csv += std::to_string(i) + ',' + fmt(static_cast<double>(two[i]) / n) + ',' +
                           fmt(static_cast<double>(three[i]) / n) + '\n';
  }
  return out;
}

}  // namespace lrd
