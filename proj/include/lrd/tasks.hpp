#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

/**
 * @file tasks.hpp
 * @brief Synthetic prompt/target corpora.
 *
 * Token 0 is EOS and pads both prompt and target. Content tokens are
 * 1..V-1. A prompt holds 1..prompt_len content tokens followed by padding.
 *
 *  - copy:     target = prompt content
 *  - sorted:   target = prompt content in ascending order
 *  - modsum:   target_i = 1 + (sum_{j<=i} (a_j - 1)) mod (V - 1)
 *  - brackets: prompt is a valid prefix over '(' = 1, ')' = 2; the target
 *              closes every open bracket
 */

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lrd/common.hpp"

namespace lrd {

enum class TaskKind { Copy, Sorted, ModSum, Brackets };

const char* task_name(TaskKind k);
TaskKind parse_task_kind(const std::string& name);

struct SyntheticTask {
  TaskKind kind = TaskKind::Copy;
  std::size_t V = 12;
  std::size_t prompt_len = 8;
  std::size_t gen_len = 8;
  std::size_t min_content = 1;  // shortest prompt content
  TokenId eos_token = 0;
  std::uint64_t seed = 0;

  std::size_t length() const { return prompt_len + gen_len; }
  /// Throws Error on parameters the task cannot satisfy.
  void validate() const;
};

struct TaskExample {
  TokenSeq prompt;
  TokenSeq target;
};

/// n examples, deterministic in task.seed; example i depends only on
/// (seed, i).
std::vector<TaskExample> generate_task(const SyntheticTask& task, std::size_t n);
/// Example i alone.
TaskExample generate_example(const SyntheticTask& task, std::uint64_t index);

/// Grammar check for one example.
bool is_valid_example(const SyntheticTask& task, const TaskExample& ex);

/// Tokens strictly before the first EOS (all of them if none).
std::size_t effective_tokens(const TokenSeq& seq, TokenId eos);
/// Prefixes before the first EOS agree.
bool exact_match(const TokenSeq& generated, const TokenSeq& target, TokenId eos);

}  // namespace lrd
