// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The LRD Authors

#include "lrd/tasks.hpp"

#include <algorithm>

namespace lrd {

namespace {

constexpr TokenId kOpen = 1;
constexpr TokenId kClose = 2;

TokenSeq content_of(const TokenSeq& s, TokenId eos) {
  const auto end = std::find(s.begin(), s.end(), eos);
  return {s.begin(), end};
}

TokenSeq padded(TokenSeq s, std::size_t len, TokenId eos) {
  s.resize(len, eos);
  return s;
}

TokenSeq modsum(const TokenSeq& a, std::size_t V) {
  TokenSeq out;
  std::size_t acc = 0;
  for (TokenId t : a) {
    acc = (acc + static_cast<std::size_t>(t - 1)) % (V - 1);
    out.push_back(static_cast<TokenId>(1 + acc));
  }
  return out;
}

TokenSeq closing(const TokenSeq& prefix) {
  std::size_t depth = 0;
  for (TokenId t : prefix) {
    if (t == kOpen) ++depth;
    if (t == kClose) --depth;
  }
  return TokenSeq(depth, kClose);
}

}  // namespace

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Copy:
      return "copy";
    case TaskKind::Sorted:
      return "sorted";
    case TaskKind::ModSum:
      return "modsum";
    case TaskKind::Brackets:
      return "brackets";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "copy") return TaskKind::Copy;
  if (name == "sorted") return TaskKind::Sorted;
  if (name == "modsum") return TaskKind::ModSum;
  if (name == "brackets") return TaskKind::Brackets;
  throw Error("unknown task '" + name + "'");
}

void SyntheticTask::validate() const {
  if (eos_token != 0) throw Error("SyntheticTask: EOS must be token 0");
  if (V < 3) throw Error("SyntheticTask: V must be >= 3");
  if (prompt_len < 1) throw Error("SyntheticTask: prompt_len must be >= 1");
  if (min_content < 1 || min_content > prompt_len) throw Error("SyntheticTask: min_content must lie in [1, prompt_len]");
  if (gen_len < prompt_len) throw Error("SyntheticTask: gen_len must be >= prompt_len");
}

TaskExample generate_example(const SyntheticTask& task, std::uint64_t index) {
  Rng rng(derive_seed(task.seed, index));
  const std::size_t n = task.min_content + uniform_index(rng, task.prompt_len - task.min_content + 1);
  TokenSeq content;
  TokenSeq target;
  if (task.kind == TaskKind::Brackets) {
    std::size_t depth = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool open = depth == 0 || uniform01(rng) < 0.5;
      content.push_back(open ? kOpen : kClose);
      depth = open ? depth + 1 : depth - 1;
    }
    target = closing(content);
  } else {
    for (std::size_t i = 0; i < n; ++i) content.push_back(static_cast<TokenId>(1 + uniform_index(rng, task.V - 1)));
    switch (task.kind) {
      case TaskKind::Copy:
        target = content;
        break;
      case TaskKind::Sorted:
        target = content;
        std::sort(target.begin(), target.end());
        break;
      case TaskKind::ModSum:
        target = modsum(content, task.V);
        break;
      case TaskKind::Brackets:
        break;
    }
  }
  return {padded(content, task.prompt_len, task.eos_token), padded(target, task.gen_len, task.eos_token)};
}

std::vector<TaskExample> generate_task(const SyntheticTask& task, std::size_t n) {
  task.validate();
  if (n < 1) throw Error("generate_task: n must be >= 1");
  std::vector<TaskExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_example(task, i));
  return out;
}

bool is_valid_example(const SyntheticTask& task, const TaskExample& ex) {
  if (ex.prompt.size() != task.prompt_len || ex.target.size() != task.gen_len) return false;
  const TokenId eos = task.eos_token;
  const TokenSeq content = content_of(ex.prompt, eos);
  const TokenSeq tcontent = content_of(ex.target, eos);
  auto padding_ok = [eos](const TokenSeq& s, std::size_t n) {
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(n), s.end(), [eos](TokenId t) { return t == eos; });
  };
  if (!padding_ok(ex.prompt, content.size()) || !padding_ok(ex.target, tcontent.size())) return false;
  if (content.size() < task.min_content) return false;
  for (TokenId t : content) {
    if (t < 1 || static_cast<std::size_t>(t) >= task.V) return false;
  }
  switch (task.kind) {
    case TaskKind::Copy:
      return tcontent == content;
    case TaskKind::Sorted:
      return std::is_sorted(tcontent.begin(), tcontent.end()) &&
             std::is_permutation(tcontent.begin(), tcontent.end(), content.begin(), content.end());
    case TaskKind::ModSum:
      return tcontent == modsum(content, task.V);
    case TaskKind::Brackets: {
      std::ptrdiff_t depth = 0;
      for (TokenId t : content) {
        if (t != kOpen && t != kClose) return false;
        depth += t == kOpen ? 1 : -1;
        if (depth < 0) return false;
      }
      return tcontent == closing(content);
    }
  }
  return false;
}

std::size_t effective_tokens(const TokenSeq& seq, TokenId eos) {
  return static_cast<std::size_t>(std::find(seq.begin(), seq.end(), eos) - seq.begin());
}

bool exact_match(const TokenSeq& generated, const TokenSeq& target, TokenId eos) {
  return content_of(generated, eos) == content_of(target, eos);
}

}  // namespace lrd
