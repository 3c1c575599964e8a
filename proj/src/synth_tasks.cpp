// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/synth_tasks.hpp"

#include <algorithm>
#include <array>
#include <memory>
#include <sstream>

namespace pabdm {

namespace vocab {
namespace {
constexpr std::array<std::string_view, kSize> kSymbols = {
    "[MASK]", "[PAD]", "[EOS]", "[UNUSED]", "(", ")", "1", "2", "3", "4", "+",
    "*", "<t>", "</t>", "<r>", "</r>", "<c>", "</c>", "a", "b", "c",
    "#0", "#1", "#2", "#3", "#4", "#5", "#6", "#7", "#8", "#9", "[UNUSED2]"};
}  // namespace

std::string_view symbol(Token t) {
  if (t < 0 || static_cast<std::size_t>(t) >= kSize) return "[?]";
  return kSymbols[static_cast<std::size_t>(t)];
}

Token parse_symbol(std::string_view s) {
  for (std::size_t i = 0; i < kSize; ++i) {
    if (kSymbols[i] == s) return static_cast<Token>(i);
  }
  throw DomainError("unknown symbol: " + std::string(s));
}

std::string render(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += symbol(tokens[i]);
  }
  return out;
}

TokenSeq parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  TokenSeq out;
  std::string sym;
  while (is >> sym) out.push_back(parse_symbol(sym));
  return out;
}
}  // namespace vocab

const char* to_string(TaskName task) {
  switch (task) {
    case TaskName::BalancedBrackets: return "BalancedBrackets";
    case TaskName::MiniExpr: return "MiniExpr";
    case TaskName::MiniTable: return "MiniTable";
  }
  return "?";
}

TaskName parse_task(const std::string& name) {
  if (name == "BalancedBrackets" || name == "brackets") return TaskName::BalancedBrackets;
  if (name == "MiniExpr" || name == "expr") return TaskName::MiniExpr;
  if (name == "MiniTable" || name == "table") return TaskName::MiniTable;
  throw DomainError("unknown task: " + name);
}

// --- validity checkers -------------------------------------------------------

bool valid_brackets(std::span<const Token> s) {
  if (s.empty()) return false;
  std::size_t depth = 0;
  for (Token t : s) {
    if (t == vocab::kOpen) {
      ++depth;
    } else if (t == vocab::kClose) {
      if (depth == 0) return false;
      --depth;
    } else {
      return false;
    }
  }
  return depth == 0;
}

namespace {

bool is_digit(Token t) { return t >= vocab::kDigit1 && t < vocab::kDigit1 + 4; }
bool is_cell(Token t) { return t >= vocab::kCellA && t < vocab::kCellA + 3; }

// expr := term ('+' term)* ; term := factor ('*' factor)* ;
// factor := digit | '(' expr ')'
struct ExprParser {
  std::span<const Token> s;
  std::size_t at = 0;

  bool peek(Token t) const { return at < s.size() && s[at] == t; }
  bool expr() {
    if (!term()) return false;
    while (peek(vocab::kPlus)) {
      ++at;
      if (!term()) return false;
    }
    return true;
  }
  bool term() {
    if (!factor()) return false;
    while (peek(vocab::kTimes)) {
      ++at;
      if (!factor()) return false;
    }
    return true;
  }
  bool factor() {
    if (at < s.size() && is_digit(s[at])) {
      ++at;
      return true;
    }
    if (!peek(vocab::kOpen)) return false;
    ++at;
    if (!expr() || !peek(vocab::kClose)) return false;
    ++at;
    return true;
  }
};

}  // namespace

bool valid_expr(std::span<const Token> s) {
  ExprParser p{s};
  return p.expr() && p.at == s.size();
}

bool valid_table(std::span<const Token> s) {
  // table := <t> row+ </t> ; row := <r> cell+ </r> ; cell := <c> content? </c>
  // with every row holding the same number of cells.
  std::size_t at = 0;
  auto take = [&](Token t) {
    if (at < s.size() && s[at] == t) {
      ++at;
      return true;
    }
    return false;
  };
  if (!take(vocab::kTableOpen)) return false;
  std::size_t cols = 0;
  std::size_t rows = 0;
  while (take(vocab::kRowOpen)) {
    std::size_t cells = 0;
    while (take(vocab::kCellOpen)) {
      if (at < s.size() && is_cell(s[at])) ++at;
      if (!take(vocab::kCellClose)) return false;
      ++cells;
    }
    if (cells == 0 || !take(vocab::kRowClose)) return false;
    if (rows > 0 && cells != cols) return false;
    cols = cells;
    ++rows;
  }
  return rows > 0 && take(vocab::kTableClose) && at == s.size();
}

// --- generators --------------------------------------------------------------

std::size_t GrammarTask::prompt_len() const {
  switch (name_) {
    case TaskName::BalancedBrackets:
      return bracket_prompt == BracketPrompt::PairCount ? 1 : max_pairs;
    case TaskName::MiniExpr: return 2 * max_leaves - 1;
    case TaskName::MiniTable: return 2 + max_rows * max_cols;
  }
  return 0;
}

std::size_t GrammarTask::max_response() const {
  switch (name_) {
    case TaskName::BalancedBrackets: return 2 * max_pairs + 1;
    // Every operator can add at most one pair of parentheses.
    case TaskName::MiniExpr: return max_leaves + 3 * (max_leaves - 1) + 1;
    case TaskName::MiniTable: return 2 + max_rows * (2 + 3 * max_cols) + 1;
  }
  return 0;
}

bool GrammarTask::valid(std::span<const Token> sequence) const {
  switch (name_) {
    case TaskName::BalancedBrackets: return valid_brackets(sequence);
    case TaskName::MiniExpr: return valid_expr(sequence);
    case TaskName::MiniTable: return valid_table(sequence);
  }
  return false;
}

namespace {

Token count_token(std::size_t n) { return static_cast<Token>(vocab::kCount0 + static_cast<Token>(n)); }

struct ExprNode {
  Token op = 0;  // 0 for a leaf
  Token digit = 0;
  std::unique_ptr<ExprNode> lhs, rhs;
};

std::unique_ptr<ExprNode> random_expr(std::size_t leaves, std::mt19937_64& rng) {
  auto node = std::make_unique<ExprNode>();
  if (leaves == 1) {
    node->digit = static_cast<Token>(vocab::kDigit1 + std::uniform_int_distribution<int>(0, 3)(rng));
    return node;
  }
  const std::size_t left = std::uniform_int_distribution<std::size_t>(1, leaves - 1)(rng);
  node->op = std::bernoulli_distribution(0.5)(rng) ? vocab::kPlus : vocab::kTimes;
  node->lhs = random_expr(left, rng);
  node->rhs = random_expr(leaves - left, rng);
  return node;
}

void render_infix(const ExprNode& n, TokenSeq& out) {
  if (n.op == 0) {
    out.push_back(n.digit);
    return;
  }
  auto child = [&](const ExprNode& c) {
    const bool wrap = n.op == vocab::kTimes && c.op == vocab::kPlus;
    if (wrap) out.push_back(vocab::kOpen);
    render_infix(c, out);
    if (wrap) out.push_back(vocab::kClose);
  };
  child(*n.lhs);
  out.push_back(n.op);
  child(*n.rhs);
}

void render_prefix(const ExprNode& n, TokenSeq& out) {
  if (n.op == 0) {
    out.push_back(n.digit);
    return;
  }
  out.push_back(n.op);
  render_prefix(*n.lhs, out);
  render_prefix(*n.rhs, out);
}

}  // namespace

Example GrammarTask::generate(std::mt19937_64& rng) const {
  Example ex;
  switch (name_) {
    case TaskName::BalancedBrackets: {
      const std::size_t pairs = std::uniform_int_distribution<std::size_t>(1, max_pairs)(rng);
      std::size_t opens_left = pairs;
      std::size_t depth = 0;
      std::bernoulli_distribution coin(0.5);
      while (opens_left > 0 || depth > 0) {
        const bool can_open = opens_left > 0 && depth < max_depth;
        const bool can_close = depth > 0;
        if (can_open && (!can_close || coin(rng))) {
          ++depth;
          --opens_left;
          ex.target.push_back(vocab::kOpen);
          if (bracket_prompt == BracketPrompt::DepthTrace) ex.prompt.push_back(count_token(depth));
        } else {
          --depth;
          ex.target.push_back(vocab::kClose);
        }
      }
      if (bracket_prompt == BracketPrompt::PairCount) ex.prompt = {count_token(pairs)};
      break;
    }
    case TaskName::MiniExpr: {
      const std::size_t leaves = std::uniform_int_distribution<std::size_t>(1, max_leaves)(rng);
      const auto tree = random_expr(leaves, rng);
      render_infix(*tree, ex.target);
      render_prefix(*tree, ex.prompt);
      break;
    }
    case TaskName::MiniTable: {
      const std::size_t rows = std::uniform_int_distribution<std::size_t>(1, max_rows)(rng);
      const std::size_t cols = std::uniform_int_distribution<std::size_t>(1, max_cols)(rng);
      std::uniform_int_distribution<int> content(-1, 2);
      ex.prompt = {count_token(rows), count_token(cols)};
      ex.target.push_back(vocab::kTableOpen);
      for (std::size_t r = 0; r < rows; ++r) {
        ex.target.push_back(vocab::kRowOpen);
        for (std::size_t c = 0; c < cols; ++c) {
          const int v = content(rng);
          ex.target.push_back(vocab::kCellOpen);
          if (v >= 0) ex.target.push_back(static_cast<Token>(vocab::kCellA + v));
          ex.target.push_back(vocab::kCellClose);
          ex.prompt.push_back(v >= 0 ? static_cast<Token>(vocab::kCellA + v) : count_token(0));
        }
        ex.target.push_back(vocab::kRowClose);
      }
      ex.target.push_back(vocab::kTableClose);
      break;
    }
  }
  ex.prompt.resize(prompt_len(), kPadToken);
  return ex;
}

std::vector<Example> generate_corpus(const GrammarTask& task, std::size_t count,
                                     std::uint64_t seed) {
  if (count == 0) throw DomainError("generate_corpus: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(task.generate(rng));
  return out;
}

// --- metrics -----------------------------------------------------------------

double edit_distance(std::span<const Token> a, std::span<const Token> b) {
  if (a.empty() && b.empty()) return 0.0;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[b.size()]) / static_cast<double>(std::max(a.size(), b.size()));
}

TokenSeq strip_eos(std::span<const Token> decoded) {
  const auto it = std::find(decoded.begin(), decoded.end(), kEosToken);
  return TokenSeq(decoded.begin(), it);
}

EvalResult evaluate(const LanguageModel& model, const GrammarTask& task,
                    const StrategyConfig& strategy, std::span<const Example> corpus) {
  EvalResult res;
  const std::size_t n = corpus.size();
  res.traces.resize(n);
  res.outputs.resize(n);
  std::vector<std::string> errors(n);

  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      const CacheState cache = model.encode_prompt(corpus[idx].prompt);
      res.traces[idx] = decode(model, cache, strategy);
      res.outputs[idx] = strip_eos(res.traces[idx].final_sequence);
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw DecodeError("evaluate: " + e);
  }

  EvalReport& r = res.report;
  r.count = n;
  double tpf = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double sim = 1.0 - edit_distance(res.outputs[i], corpus[i].target);
    r.similarity += sim;
    r.validity += task.valid(res.outputs[i]) ? 1.0 : 0.0;
    r.exact_match += res.outputs[i] == corpus[i].target ? 1.0 : 0.0;
    tpf += res.traces[i].tokens_per_forward();
    r.forward_calls += res.traces[i].forward_calls;
    r.processed_positions += res.traces[i].processed_positions;
    r.committed += res.traces[i].total_committed;
  }
  if (n > 0) {
    r.similarity /= static_cast<double>(n);
    r.validity /= static_cast<double>(n);
    r.exact_match /= static_cast<double>(n);
    r.tokens_per_forward = tpf / static_cast<double>(n);
  }
  r.acc = (r.similarity + r.validity) / 2.0;
  return res;
}

}  // namespace pabdm
