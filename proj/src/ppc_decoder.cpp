// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/ppc_decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pabdm {

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::PPC: return "PPC";
    case StrategyKind::BlockLevel: return "BlockLevel";
    case StrategyKind::FixedK: return "FixedK";
    case StrategyKind::PPCNoReset: return "PPCNoReset";
    case StrategyKind::PPCNoPrefixCache: return "PPCNoPrefixCache";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& name) {
  if (name == "PPC" || name == "ppc" || name == "full") return StrategyKind::PPC;
  if (name == "BlockLevel" || name == "block" || name == "block-level") return StrategyKind::BlockLevel;
  if (name == "FixedK" || name == "fixed-k" || name == "fixed") return StrategyKind::FixedK;
  if (name == "PPCNoReset" || name == "no-reset") return StrategyKind::PPCNoReset;
  if (name == "PPCNoPrefixCache" || name == "no-prefix-cache") return StrategyKind::PPCNoPrefixCache;
  throw DomainError("unknown strategy: " + name);
}

void StrategyConfig::validate() const {
  if (block_size == 0) throw DomainError("strategy: block size must be >= 1");
  if (max_len == 0) throw DomainError("strategy: max_len must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) throw DomainError("strategy: tau must lie in [0, 1]");
  if (kind == StrategyKind::FixedK && (fixed_k == 0 || fixed_k > block_size)) {
    throw DomainError("strategy: fixed k must lie in [1, D]");
  }
}

CommitDecision select_commit(std::span<const double> confidences, double tau) {
  CommitDecision d;
  d.confidences.assign(confidences.begin(), confidences.end());
  for (std::size_t k = 0; k < confidences.size(); ++k) {
    if (confidences[k] < tau) {
      d.first_low = k + 1;
      break;
    }
  }
  if (!d.first_low) {
    d.commit_len = confidences.size();
  } else {
    d.commit_len = std::max<std::size_t>(1, *d.first_low - 1);
  }
  return d;
}

CommitDecision select_commit(std::span<const double> confidences,
                             std::span<const Token> candidates, double tau) {
  if (candidates.size() != confidences.size()) {
    throw DomainError("select_commit: one candidate token per confidence required");
  }
  CommitDecision d = select_commit(confidences, tau);
  d.committed_tokens.assign(candidates.begin(),
                            candidates.begin() + static_cast<std::ptrdiff_t>(d.commit_len));
  return d;
}

double DecodeTrace::tokens_per_forward() const {
  if (rounds.empty()) return 0.0;
  return static_cast<double>(total_committed) / static_cast<double>(rounds.size());
}

Candidate read_candidate(std::span<const float> logits) {
  const std::vector<double> p = softmax(logits);
  Candidate best;
  best.confidence = -1.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const auto tok = static_cast<Token>(t);
    if (tok == kMaskToken || tok == kPadToken) continue;
    if (p[t] > best.confidence) {
      best.token = tok;
      best.confidence = p[t];
    }
  }
  return best;
}

namespace {

// Appends tokens to the committed sequence, stopping after an EOS.
// Returns true when EOS was committed.
bool commit_until_eos(const TokenSeq& proposed, Token eos, TokenSeq& committed, RoundRecord& rec) {
  for (Token t : proposed) {
    rec.positions.push_back(committed.size() + 1);
    rec.tokens.push_back(t);
    committed.push_back(t);
    if (t == eos) return true;
  }
  return false;
}

void guard_rounds(const DecodeTrace& trace, const StrategyConfig& s) {
  if (trace.rounds.size() > s.max_len) {
    throw DecodeError("decode: round count exceeded max_len; progress guarantee violated");
  }
}

}  // namespace

PrefixSession::PrefixSession(const LanguageModel& model, CacheState prompt_cache,
                             StrategyConfig strategy)
    : model_(model), strategy_(strategy), cache_(std::move(prompt_cache)) {
  strategy_.validate();
  if (strategy_.kind == StrategyKind::BlockLevel) {
    throw DomainError("PrefixSession: block-level decoding has its own driver");
  }
  if (cache_.response_length() != 0) {
    throw DomainError("PrefixSession: prompt cache must not contain response tokens");
  }
  trace_.final_cache_length = cache_.length();
}

std::size_t PrefixSession::default_candidates() const {
  const std::size_t d = strategy_.block_size;
  const std::size_t done = committed_.size();
  if (strategy_.kind == StrategyKind::PPCNoReset) {
    const std::size_t block_end = (done / d + 1) * d;
    return std::min(block_end, strategy_.max_len) - done;
  }
  return std::min(d, strategy_.max_len - done);
}

void PrefixSession::step(std::size_t candidates) {
  if (candidates > 0 && finished_) throw DecodeError("PrefixSession: session already finished");
  if (candidates > remaining()) throw DomainError("PrefixSession: candidate range exceeds max_len");
  if (candidates > strategy_.block_size) throw DomainError("PrefixSession: candidate range exceeds D");

  const std::size_t d = strategy_.block_size;
  const std::size_t feed = committed_.size() - cached_;
  std::size_t mat = feed;
  if (strategy_.kind == StrategyKind::PPCNoPrefixCache && candidates > 0) {
    // Cache only whole completed blocks; the committed remainder is re-fed.
    const std::size_t aligned = (committed_.size() / d) * d;
    mat = aligned > cached_ ? aligned - cached_ : 0;
  }

  TokenSeq input(committed_.begin() + static_cast<std::ptrdiff_t>(cached_), committed_.end());
  input.insert(input.end(), candidates, kMaskToken);
  const MaskSpec mask = decode_step_mask(feed, candidates, IntraBlock::Causal);
  ForwardOutput out = model_.forward(cache_, input, mask, mat);
  ++trace_.forward_calls;
  trace_.processed_positions += input.size();
  cache_ = std::move(out.new_cache);
  cached_ += mat;
  trace_.final_cache_length = cache_.length();
  if (candidates == 0) return;

  std::vector<double> conf(candidates);
  TokenSeq tokens(candidates);
  for (std::size_t k = 0; k < candidates; ++k) {
    const Candidate c = read_candidate(out.row(feed + k));
    conf[k] = c.confidence;
    tokens[k] = c.token;
  }
  RoundRecord rec;
  rec.round = trace_.rounds.size() + 1;
  rec.forward_index = trace_.forward_calls;
  rec.start = committed_.size();
  rec.decision = select_commit(conf, tokens, strategy_.tau);
  rec.candidates = tokens;
  if (strategy_.kind == StrategyKind::FixedK) {
    rec.decision.commit_len = std::min(strategy_.fixed_k, candidates);
    rec.decision.committed_tokens.assign(
        tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(rec.decision.commit_len));
  }
  const bool eos = commit_until_eos(rec.decision.committed_tokens, strategy_.eos, committed_, rec);
  trace_.total_committed = committed_.size();
  trace_.final_sequence = committed_;
  trace_.rounds.push_back(std::move(rec));
  if (eos) trace_.eos_reached = true;
  if (eos || committed_.size() >= strategy_.max_len) finished_ = true;
  guard_rounds(trace_, strategy_);
}

DecodeTrace PrefixSession::take_trace() { return std::move(trace_); }

namespace {

DecodeTrace decode_blocks(const LanguageModel& model, const CacheState& prompt_cache,
                          const StrategyConfig& s) {
  DecodeTrace trace;
  CacheState cache = prompt_cache;
  TokenSeq committed;
  std::size_t cached = 0;
  bool done = false;

  while (!done && committed.size() < s.max_len) {
    const std::size_t block_len = std::min(s.block_size, s.max_len - committed.size());
    TokenSeq slots(block_len, kMaskToken);
    std::vector<bool> resolved(block_len, false);
    std::size_t unresolved = block_len;
    const std::size_t block_start = committed.size();

    while (unresolved > 0) {
      const std::size_t feed = committed.size() - cached;
      TokenSeq input(committed.begin() + static_cast<std::ptrdiff_t>(cached), committed.end());
      input.insert(input.end(), slots.begin(), slots.end());
      const MaskSpec mask = decode_step_mask(feed, block_len, s.block_direction);
      ForwardOutput out = model.forward(cache, input, mask, feed);
      ++trace.forward_calls;
      trace.processed_positions += input.size();
      cache = std::move(out.new_cache);
      cached += feed;

      RoundRecord rec;
      rec.round = trace.rounds.size() + 1;
      rec.forward_index = trace.forward_calls;
      rec.start = block_start;
      std::vector<std::size_t> open;
      std::vector<Candidate> cands;
      for (std::size_t k = 0; k < block_len; ++k) {
        if (resolved[k]) continue;
        open.push_back(k);
        cands.push_back(read_candidate(out.row(feed + k)));
        rec.candidates.push_back(cands.back().token);
        rec.decision.confidences.push_back(cands.back().confidence);
      }
      std::vector<std::size_t> fix;
      for (std::size_t i = 0; i < open.size(); ++i) {
        if (cands[i].confidence >= s.tau) fix.push_back(i);
      }
      if (fix.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < open.size(); ++i) {
          if (cands[i].confidence > cands[best].confidence) best = i;
        }
        fix.push_back(best);
      }
      for (std::size_t i : fix) {
        const std::size_t k = open[i];
        slots[k] = cands[i].token;
        resolved[k] = true;
        --unresolved;
        rec.positions.push_back(block_start + k + 1);
        rec.tokens.push_back(cands[i].token);
        rec.decision.committed_tokens.push_back(cands[i].token);
      }
      rec.decision.commit_len = fix.size();
      trace.rounds.push_back(std::move(rec));
      guard_rounds(trace, s);
    }

    for (Token t : slots) {
      committed.push_back(t);
      if (t == s.eos) {
        done = true;
        trace.eos_reached = true;
        break;
      }
    }
  }

  if (committed.size() > cached) {
    TokenSeq input(committed.begin() + static_cast<std::ptrdiff_t>(cached), committed.end());
    ForwardOutput out = model.forward(cache, input, causal_mask(input.size()), input.size());
    ++trace.forward_calls;
    trace.processed_positions += input.size();
    cache = std::move(out.new_cache);
  }
  trace.total_committed = committed.size();
  trace.final_sequence = std::move(committed);
  trace.final_cache_length = cache.length();
  return trace;
}

}  // namespace

DecodeTrace decode(const LanguageModel& model, const CacheState& prompt_cache,
                   const StrategyConfig& strategy) {
  strategy.validate();
  if (strategy.kind == StrategyKind::BlockLevel) return decode_blocks(model, prompt_cache, strategy);

  PrefixSession session(model, prompt_cache, strategy);
  while (!session.finished()) session.step(session.default_candidates());
  if (session.pending() > 0) session.step(0);
  return session.take_trace();
}

DecodeTrace decode_block_level(const LanguageModel& model, const CacheState& prompt_cache,
                               std::size_t block_size, double tau, std::size_t max_len) {
  StrategyConfig s;
  s.kind = StrategyKind::BlockLevel;
  s.block_size = block_size;
  s.tau = tau;
  s.max_len = max_len;
  return decode(model, prompt_cache, s);
}

DecodeTrace decode_fixed_k(const LanguageModel& model, const CacheState& prompt_cache,
                           std::size_t block_size, std::size_t k, std::size_t max_len) {
  StrategyConfig s;
  s.kind = StrategyKind::FixedK;
  s.block_size = block_size;
  s.fixed_k = k;
  s.max_len = max_len;
  return decode(model, prompt_cache, s);
}

}  // namespace pabdm
