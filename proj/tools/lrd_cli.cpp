// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

// Command-line front end. Every command reads the same run configuration
// (--config plus --set overrides), takes its randomness from --seed and
// writes CSV files under --out.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lrd/config.hpp"
#include "lrd/harness.hpp"
#include "lrd/oracle.hpp"
#include "lrd/stability.hpp"

namespace fs = std::filesystem;
using namespace lrd;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string ckpt;
  bool timing = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_timing) {
  cmd->add_option("--config", c.config_path, "key = value configuration file");
  cmd->add_option("--set", c.overrides, "override, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "master seed")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--ckpt", c.ckpt, "checkpoint path");
  if (with_timing) cmd->add_flag("--timing", c.timing, "record wall-clock (makes outputs run-dependent)");
}

RunConfig load(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.finalize();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

DenoiserModel load_model(const Common& c, const RunConfig& cfg) {
  if (c.ckpt.empty()) throw Error("--ckpt is required for this command (produce one with `train`)");
  DenoiserModel m = load_checkpoint(c.ckpt);
  if (m.config().V != cfg.model.V || m.config().L_max < cfg.task.length()) {
    throw Error("checkpoint does not match the task (V or length)");
  }
  return m;
}

std::string traces_csv(const std::vector<MethodRun>& runs) {
  std::string out = std::string("method,index,") + kTraceCsvHeader + "\n";
  for (const auto& r : runs) {
    for (const auto& o : r.sequences) {
      std::string rows;
      o.trace.append_csv_rows(rows);
      std::istringstream in(rows);
      std::string line;
      while (std::getline(in, line)) out += r.summary.method + ',' + std::to_string(o.index) + ',' + line + '\n';
    }
  }
  return out;
}

TokenSeq parse_tokens(const std::string& s) {
  TokenSeq out;
  std::istringstream in(s);
  long long v = 0;
  while (in >> v) out.push_back(static_cast<TokenId>(v));
  if (!in.eof()) throw Error("bad token list '" + s + "'");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = load(c);
  const fs::path dir = out_dir(c);
  TrainReport report;
  const DenoiserModel model = train_model(cfg, c.seed, &report);
  const std::string ckpt = c.ckpt.empty() ? (dir / "model.ckpt").string() : c.ckpt;
  save_checkpoint(model, ckpt);
  write_file(dir / "train_log.csv", train_log_csv(report));
  write_file(dir / "config.txt", dump_config(cfg));
  std::cout << "final loss " << fmt(report.final_loss) << "\ncheckpoint " << ckpt << "\n";
  return 0;
}

int cmd_decode(const Common& c, const std::string& method, const std::string& prompt) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  Method m{method, MethodKind::Lrd, cfg.sampler, cfg.eval.k};
  if (method == "baseline") m.kind = MethodKind::Baseline;
  else if (method == "semi-ar") m.kind = MethodKind::SemiAr;
  else if (method != "lrd") throw Error("unknown method '" + method + "'");

  std::vector<TaskExample> corpus;
  if (!prompt.empty()) {
    corpus.push_back({parse_tokens(prompt), TokenSeq(cfg.task.gen_len, cfg.task.eos_token)});
  } else {
    corpus = eval_corpus(cfg, c.seed);
  }
  const std::vector<MethodRun> runs = {run_method(model, corpus, m, cfg.task.eos_token, c.timing)};
  write_file(dir / "decode.csv", sequences_csv(runs));
  write_file(dir / "traces.csv", traces_csv(runs));
  if (!prompt.empty()) {
    for (TokenId t : runs[0].sequences[0].tokens) std::cout << t << ' ';
    std::cout << '\n';
  } else {
    std::cout << bench_csv(runs);
  }
  return 0;
}

int cmd_bench(const Common& c) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  const auto corpus = eval_corpus(cfg, c.seed);
  const auto runs = run_benchmark(model, corpus, benchmark_methods(cfg.sampler, cfg.eval.k), cfg.task.eos_token, c.timing);
  write_file(dir / "bench.csv", bench_csv(runs));
  write_file(dir / "bench_sequences.csv", sequences_csv(runs));
  std::cout << bench_csv(runs);
  return 0;
}

int cmd_ablate(const Common& c) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  const auto corpus = eval_corpus(cfg, c.seed);
  const auto runs = run_ablations(model, corpus, cfg.sampler, cfg.eval.k, cfg.task.eos_token, c.timing);
  write_file(dir / "ablations.csv", bench_csv(runs));
  write_file(dir / "ablation_sequences.csv", sequences_csv(runs));
  std::cout << bench_csv(runs);
  return 0;
}

int cmd_sweep(const Common& c) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  const auto rows = run_sweeps(model, eval_corpus(cfg, c.seed), cfg.sampler, cfg.task.eos_token);
  write_file(dir / "sweep.csv", sweep_csv(rows));
  std::cout << sweep_csv(rows);
  return 0;
}

int cmd_trace(const Common& c) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  SamplerConfig fixed = cfg.sampler;
  fixed.tau_refine = 0.0;  // every sequence runs all T_refine iterations
  const auto runs = std::vector<MethodRun>{
      run_method(model, eval_corpus(cfg, c.seed), {"fixed_refine", MethodKind::Lrd, fixed, 1}, cfg.task.eos_token)};
  std::vector<DecodeTrace> traces;
  for (const auto& o : runs[0].sequences) traces.push_back(o.trace);
  const KlDynamics k = emit_kl_dynamics(traces, cfg.sampler.tau_refine);
  write_file(dir / "kl_aligned.csv", k.aligned_csv);
  write_file(dir / "kl_convergence.csv", k.convergence_csv);
  write_file(dir / "traces.csv", traces_csv(runs));
  std::cout << k.convergence_csv;
  return 0;
}

int cmd_oracle(const Common& c, std::size_t per_shape, std::size_t chains) {
  const fs::path dir = out_dir(c);
  bool ok = true;

  std::string kernels = "V,L,T,t,n_observations,max_abs_error\n";
  double worst = 0.0;
  for (const auto& k : run_kernel_checks(c.seed, per_shape)) {
    kernels += std::to_string(k.V) + ',' + std::to_string(k.L) + ',' + std::to_string(k.T) + ',' +
               std::to_string(k.t) + ',' + std::to_string(k.n_observations) + ',' + fmt(k.max_abs_error) + '\n';
    worst = std::max(worst, k.max_abs_error);
  }
  ok = ok && worst < 1e-12;
  write_file(dir / "oracle_kernels.csv", kernels);

  std::string mc = "T,t,n_chains,n_masked,frequency,expected,std_error,within_3sigma\n";
  Rng rng(derive_seed(c.seed, 1));
  const std::vector<std::vector<double>> schedules = {{0.2, 0.375}, {0.1, 0.3, 0.5, 0.2}, {0.5, 0.5, 0.5}};
  for (const auto& betas : schedules) {
    const NoiseSchedule s = NoiseSchedule::from_betas(betas);
    for (std::size_t t = 1; t <= s.steps(); ++t) {
      const MonteCarloPosterior r = simulate_reverse_posterior(s, t, chains, rng);
      mc += std::to_string(s.steps()) + ',' + std::to_string(t) + ',' + std::to_string(r.n_chains) + ',' +
            std::to_string(r.n_masked) + ',' + fmt(r.frequency) + ',' + fmt(r.expected) + ',' + fmt(r.std_error) +
            ',' + (r.within(3.0) ? "1" : "0") + '\n';
      ok = ok && r.within(3.0);
    }
  }
  write_file(dir / "oracle_montecarlo.csv", mc);

  std::string klcsv = "alpha_prev,alpha_cur,p_x0,kl_hard_wrong,kl_hard_mask,kl_soft\n";
  constexpr std::size_t V = 4;
  for (double ap : {1.0, 0.9, 0.8, 0.5}) {
    for (double ac : {0.7, 0.5, 0.2, 0.0}) {
      if (ap < ac) continue;
      const PosteriorBelief q = true_posterior(ap, ac, 0);
      if (!(q.p_x0 > 0.0)) continue;
      const ApproxPosterior soft = ApproxPosterior::soft_dist(Categorical::checked({0.3, 0.1, 0.05, 0.05, 0.5}));
      const HardSoftKl wrong = kl_hard_vs_soft(q, ApproxPosterior::hard(2), soft, V);
      const HardSoftKl masked = kl_hard_vs_soft(q, ApproxPosterior::hard(static_cast<TokenId>(V)), soft, V);
      klcsv += fmt(ap) + ',' + fmt(ac) + ',' + fmt(q.p_x0) + ',' + fmt(wrong.kl_hard) + ',' + fmt(masked.kl_hard) +
               ',' + fmt(wrong.kl_soft) + '\n';
      ok = ok && wrong.kl_hard == kInfiniteKl && std::isfinite(wrong.kl_soft);
    }
  }
  write_file(dir / "oracle_kl.csv", klcsv);
  std::cout << (ok ? "oracle checks passed" : "oracle checks FAILED") << "\nmax kernel error " << fmt(worst) << "\n";
  return ok ? 0 : 1;
}

int cmd_lipschitz(const Common& c) {
  const RunConfig cfg = load(c);
  const DenoiserModel model = load_model(c, cfg);
  const fs::path dir = out_dir(c);
  const auto& mc = model.config();
  for (std::size_t layer = 0; layer < mc.n_layers; ++layer) {
    for (std::size_t head = 0; head < mc.n_heads; ++head) {
      const LipschitzSweep s = lipschitz_sweep(model, layer, head, cfg.epsilons, cfg.lipschitz, c.seed, true);
      const std::string name = "lipschitz_l" + std::to_string(layer) + "_h" + std::to_string(head) + ".csv";
      write_file(dir / name, lipschitz_csv(s));
      std::cout << name << " c=" << fmt(s.c) << "\n";
    }
  }
  const EmbeddingNormStats st = embedding_norm_stats(model.table());
  write_file(dir / "embedding_norms.csv", "mask_norm,mean_token_norm,ratio\n" + fmt(st.mask_norm) + ',' +
                                              fmt(st.mean_token_norm) + ',' + fmt(st.ratio) + '\n');
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent refinement decoding for masked diffusion models"};
  app.require_subcommand(1);

  Common train_c, decode_c, bench_c, ablate_c, sweep_c, trace_c, oracle_c, lip_c;
  auto* train = app.add_subcommand("train", "train the denoiser on the configured task");
  add_common(train, train_c, false);

  auto* decode = app.add_subcommand("decode", "decode the eval corpus or a single prompt");
  add_common(decode, decode_c, true);
  std::string method = "lrd", prompt;
  decode->add_option("--method", method, "lrd | baseline | semi-ar")->capture_default_str();
  decode->add_option("--prompt", prompt, "space-separated prompt token ids");

  auto* bench = app.add_subcommand("bench", "baseline vs LRD on the eval corpus");
  add_common(bench, bench_c, true);
  auto* ablate = app.add_subcommand("ablate", "ablation table");
  add_common(ablate, ablate_c, true);
  auto* sweep = app.add_subcommand("sweep", "r_f and top_p sweeps");
  add_common(sweep, sweep_c, false);
  auto* trace = app.add_subcommand("trace", "KL dynamics with a fixed refinement budget");
  add_common(trace, trace_c, false);

  auto* oracle = app.add_subcommand("oracle-check", "brute-force posterior and KL checks");
  add_common(oracle, oracle_c, false);
  std::size_t per_shape = 2, chains = 100000;
  oracle->add_option("--per-shape", per_shape, "random instances per (V, L, T)")->capture_default_str();
  oracle->add_option("--chains", chains, "Monte Carlo chains per check")->capture_default_str();

  auto* lip = app.add_subcommand("lipschitz", "spectral bound vs empirical attention Lipschitz ratio");
  add_common(lip, lip_c, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_c);
    if (*decode) return cmd_decode(decode_c, method, prompt);
    if (*bench) return cmd_bench(bench_c);
    if (*ablate) return cmd_ablate(ablate_c);
    if (*sweep) return cmd_sweep(sweep_c);
    if (*trace) return cmd_trace(trace_c);
    if (*oracle) return cmd_oracle(oracle_c, per_shape, chains);
    if (*lip) return cmd_lipschitz(lip_c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
