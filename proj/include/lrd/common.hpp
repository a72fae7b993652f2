#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrd {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Random stream used everywhere randomness is consumed. Always explicitly
/// seeded; nothing in the library touches a global generator.
using Rng = std::mt19937_64;

/// Thrown for malformed arguments and contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a decode exhausts its step budget with positions still open.
class NonConvergence : public Error {
 public:
  using Error::Error;
};

/// splitmix64 finaliser; used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for stream `index` under `master`. Independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(mix_seed(master) ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) built from the raw 53 high bits. Unlike
/// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

/// Standard normal via Box-Muller; consumes exactly two draws.
double normal01(Rng& rng);

}  // namespace lrd
