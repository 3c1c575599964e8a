// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pabdm/ppc_decoder.hpp"
#include "pabdm/types.hpp"

namespace pabdm {

/// Shared symbol table for every synthetic task. Ids 0..2 are the reserved
/// MASK/PAD/EOS tokens.
namespace vocab {
inline constexpr Token kOpen = 4;    // (
inline constexpr Token kClose = 5;   // )
inline constexpr Token kDigit1 = 6;  // 1..4 -> 6..9
inline constexpr Token kPlus = 10;
inline constexpr Token kTimes = 11;
inline constexpr Token kTableOpen = 12;   // <t>
inline constexpr Token kTableClose = 13;  // </t>
inline constexpr Token kRowOpen = 14;     // <r>
inline constexpr Token kRowClose = 15;    // </r>
inline constexpr Token kCellOpen = 16;    // <c>
inline constexpr Token kCellClose = 17;   // </c>
inline constexpr Token kCellA = 18;       // a, b, c -> 18..20
inline constexpr Token kCount0 = 21;      // #0..#9 -> 21..30, prompt-side counters
inline constexpr std::size_t kSize = 32;

std::string_view symbol(Token t);
/// Inverse of symbol(); throws DomainError for unknown symbols.
Token parse_symbol(std::string_view s);
std::string render(std::span<const Token> tokens);
TokenSeq parse(std::string_view text);  // whitespace-separated symbols
}  // namespace vocab

enum class TaskName { BalancedBrackets, MiniExpr, MiniTable };
const char* to_string(TaskName task);
TaskName parse_task(const std::string& name);

struct Example {
  TokenSeq prompt;  // padded with PAD to the task's prompt length
  TokenSeq target;  // grammar string, no EOS
};

/// What a BalancedBrackets prompt tells the model. PairCount leaves the
/// bracket shape open, so many targets are correct; DepthTrace (the depth of
/// every '(' in order) pins down one target.
enum class BracketPrompt { PairCount, DepthTrace };

/// A synthetic structured-output task. Targets are valid strings of the
/// task grammar.
///   BalancedBrackets  prompt = see BracketPrompt
///   MiniExpr          prompt = the expression in prefix (Polish) notation
///   MiniTable         prompt = #rows #cols then the cell contents row-major
/// Prompts are padded with PAD to prompt_len().
class GrammarTask {
 public:
  explicit GrammarTask(TaskName name) : name_(name) {}

  TaskName name() const { return name_; }
  std::size_t prompt_len() const;
  /// Longest target plus the trailing EOS.
  std::size_t max_response() const;

  Example generate(std::mt19937_64& rng) const;
  bool valid(std::span<const Token> sequence) const;

  std::size_t max_depth = 3;
  std::size_t max_pairs = 6;   // brackets
  std::size_t max_leaves = 4;  // expressions
  std::size_t max_rows = 3;    // tables
  std::size_t max_cols = 3;
  BracketPrompt bracket_prompt = BracketPrompt::PairCount;

 private:
  TaskName name_;
};

/// Exact decision procedures used by GrammarTask::valid.
bool valid_brackets(std::span<const Token> s);
bool valid_expr(std::span<const Token> s);
bool valid_table(std::span<const Token> s);

std::vector<Example> generate_corpus(const GrammarTask& task, std::size_t count,
                                     std::uint64_t seed);

/// Levenshtein distance over tokens divided by max(|a|, |b|); 0 when both empty.
double edit_distance(std::span<const Token> a, std::span<const Token> b);

/// Decoded output with everything from the first EOS on removed.
TokenSeq strip_eos(std::span<const Token> decoded);

struct EvalReport {
  std::size_t count = 0;
  double similarity = 0.0;    // mean 1 - edit_distance
  double validity = 0.0;      // fraction accepted by the grammar checker
  double exact_match = 0.0;
  double acc = 0.0;           // (similarity + validity) / 2
  double tokens_per_forward = 0.0;  // mean over instances
  std::size_t forward_calls = 0;
  std::size_t processed_positions = 0;
  std::size_t committed = 0;
};

struct EvalResult {
  EvalReport report;
  std::vector<DecodeTrace> traces;
  std::vector<TokenSeq> outputs;  // stripped of EOS
};

/// Decodes every prompt with `strategy` and scores against the targets.
EvalResult evaluate(const LanguageModel& model, const GrammarTask& task,
                    const StrategyConfig& strategy, std::span<const Example> corpus);

}  // namespace pabdm
