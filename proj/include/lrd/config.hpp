#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file config.hpp
 * @brief Run configuration read from `key = value` text.
 *
 * `#` starts a comment. Keys are dotted (`sampler.r_f`, `train.steps`).
 * Unknown keys, duplicate keys and unparsable values are errors.
 */

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lrd/denoiser.hpp"
#include "lrd/sampler.hpp"
#include "lrd/stability.hpp"
#include "lrd/tasks.hpp"

namespace lrd {

struct TrainConfig {
  std::size_t steps = 400;
  std::size_t batch = 32;
  std::size_t schedule_steps = 16;  // T of the linear schedule used for corruption
  TrainOptions optim;
  std::size_t log_every = 50;
};

struct EvalConfig {
  std::size_t n = 200;
  std::uint64_t seed_stream = 1;  // eval corpus stream, disjoint from training
  std::size_t k = 1;              // baseline commits per step
};

struct RunConfig {
  DenoiserConfig model;
  SyntheticTask task;
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;
  LipschitzOptions lipschitz;
  std::vector<double> epsilons = {0.01, 0.05, 0.1, 0.5, 1.0};

  /// Model V and L_max follow the task. Throws Error on inconsistency.
  void finalize();
};

/// Applies `key = value` lines on top of `base`.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Single assignment, as on the command line.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value, sorted, in the file format.
std::string dump_config(const RunConfig& cfg);

}  // namespace lrd
