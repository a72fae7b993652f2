// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace lrd {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error("config: bad value '" + value + "' for " + key);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Get>
Field size_field(Get g) {
  return {[g](RunConfig& c, const std::string& k, const std::string& v) { g(c) = static_cast<std::size_t>(to_u64(k, v)); },
          [g](const RunConfig& c) { return std::to_string(g(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field double_field(Get g) {
  return {[g](RunConfig& c, const std::string& k, const std::string& v) { g(c) = to_double(k, v); },
          [g](const RunConfig& c) { return fmt(g(const_cast<RunConfig&>(c))); }};
}

template <class Get>
Field bool_field(Get g) {
  return {[g](RunConfig& c, const std::string& k, const std::string& v) { g(c) = to_bool(k, v); },
          [g](const RunConfig& c) { return std::string(g(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["model.n_layers"] = size_field([](RunConfig& c) -> auto& { return c.model.n_layers; });
    f["model.n_heads"] = size_field([](RunConfig& c) -> auto& { return c.model.n_heads; });
    f["model.d"] = size_field([](RunConfig& c) -> auto& { return c.model.d; });
    f["model.d_ff"] = size_field([](RunConfig& c) -> auto& { return c.model.d_ff; });
    f["model.token_init_scale"] = double_field([](RunConfig& c) -> auto& { return c.model.token_init_scale; });
    f["model.mask_init_ratio"] = double_field([](RunConfig& c) -> auto& { return c.model.mask_init_ratio; });

    f["task.kind"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.task.kind = parse_task_kind(v); },
                      [](const RunConfig& c) { return std::string(task_name(c.task.kind)); }};
    f["task.V"] = size_field([](RunConfig& c) -> auto& { return c.task.V; });
    f["task.prompt_len"] = size_field([](RunConfig& c) -> auto& { return c.task.prompt_len; });
    f["task.gen_len"] = size_field([](RunConfig& c) -> auto& { return c.task.gen_len; });
    f["task.min_content"] = size_field([](RunConfig& c) -> auto& { return c.task.min_content; });

    f["train.steps"] = size_field([](RunConfig& c) -> auto& { return c.train.steps; });
    f["train.batch"] = size_field([](RunConfig& c) -> auto& { return c.train.batch; });
    f["train.schedule_steps"] = size_field([](RunConfig& c) -> auto& { return c.train.schedule_steps; });
    f["train.lr"] = double_field([](RunConfig& c) -> auto& { return c.train.optim.learning_rate; });
    f["train.momentum"] = double_field([](RunConfig& c) -> auto& { return c.train.optim.momentum; });
    f["train.grad_clip"] = double_field([](RunConfig& c) -> auto& { return c.train.optim.grad_clip; });
    f["train.log_every"] = size_field([](RunConfig& c) -> auto& { return c.train.log_every; });

    f["sampler.r_f"] = double_field([](RunConfig& c) -> auto& { return c.sampler.r_f; });
    f["sampler.top_p"] = double_field([](RunConfig& c) -> auto& { return c.sampler.top_p; });
    f["sampler.tau_refine"] = double_field([](RunConfig& c) -> auto& { return c.sampler.tau_refine; });
    f["sampler.tau_decode"] = double_field([](RunConfig& c) -> auto& { return c.sampler.tau_decode; });
    f["sampler.T_refine"] = size_field([](RunConfig& c) -> auto& { return c.sampler.T_refine; });
    f["sampler.k"] = size_field([](RunConfig& c) -> auto& { return c.sampler.commits_per_step; });
    f["sampler.block_size"] = size_field([](RunConfig& c) -> auto& { return c.sampler.block_size; });
    f["sampler.kl_smoothing"] = double_field([](RunConfig& c) -> auto& { return c.sampler.kl_smoothing; });
    f["sampler.max_steps"] = size_field([](RunConfig& c) -> auto& { return c.sampler.max_steps; });
    f["sampler.early_stop"] = bool_field([](RunConfig& c) -> auto& { return c.sampler.early_stop; });
    f["sampler.kl_average"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "open") c.sampler.kl_average = KlAverage::OpenPositions;
          else if (v == "all") c.sampler.kl_average = KlAverage::AllPositions;
          else bad_value(k, v);
        },
        [](const RunConfig& c) {
          return std::string(c.sampler.kl_average == KlAverage::OpenPositions ? "open" : "all");
        }};
    f["sampler.entropy_norm"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "nucleus") c.sampler.entropy_norm = EntropyNorm::Nucleus;
          else if (v == "full") c.sampler.entropy_norm = EntropyNorm::FullVocab;
          else bad_value(k, v);
        },
        [](const RunConfig& c) {
          return std::string(c.sampler.entropy_norm == EntropyNorm::Nucleus ? "nucleus" : "full");
        }};

    f["eval.n"] = size_field([](RunConfig& c) -> auto& { return c.eval.n; });
    f["eval.seed_stream"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) { c.eval.seed_stream = to_u64(k, v); },
        [](const RunConfig& c) { return std::to_string(c.eval.seed_stream); }};
    f["eval.k"] = size_field([](RunConfig& c) -> auto& { return c.eval.k; });

    f["lipschitz.seq_len"] = size_field([](RunConfig& c) -> auto& { return c.lipschitz.seq_len; });
    f["lipschitz.n_samples"] = size_field([](RunConfig& c) -> auto& { return c.lipschitz.n_samples; });
    f["lipschitz.center"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          if (v == "mask") c.lipschitz.center = BallCenter::Mask;
          else if (v == "origin") c.lipschitz.center = BallCenter::Origin;
          else bad_value(k, v);
        },
        [](const RunConfig& c) { return std::string(c.lipschitz.center == BallCenter::Mask ? "mask" : "origin"); }};
    f["lipschitz.epsilons"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          std::vector<double> eps;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) eps.push_back(to_double(k, trim(item)));
          if (eps.empty()) bad_value(k, v);
          c.epsilons = std::move(eps);
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.epsilons.size(); ++i) s += (i ? "," : "") + fmt(c.epsilons[i]);
          return s;
        }};
    return f;
  }();
  return table;
}

}  // namespace

void RunConfig::finalize() {
  task.validate();
  model.V = task.V;
  model.L_max = task.length();
  model.validate();
  sampler.validate();
  if (train.batch < 1 || train.schedule_steps < 1) throw Error("config: train.batch and train.schedule_steps must be >= 1");
  if (eval.n < 1 || eval.k < 1) throw Error("config: eval.n and eval.k must be >= 1");
  if (lipschitz.seq_len < 1 || lipschitz.seq_len > model.L_max) throw Error("config: lipschitz.seq_len out of range");
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& f = fields();
  const auto it = f.find(key);
  if (it == f.end()) throw Error("config: unknown key '" + key + "'");
  it->second.set(cfg, key, value);
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config: line " + std::to_string(lineno) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw Error("config: duplicate key '" + key + "'");
    apply_setting(base, key, value);
  }
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw Error("config: cannot open " + path);
  return parse_config(f, std::move(base));
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace lrd
