// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pabdm/attention_masks.hpp"
#include "pabdm/tiny_transformer.hpp"

namespace pabdm {

enum class StrategyKind { PPC, BlockLevel, FixedK, PPCNoReset, PPCNoPrefixCache };

const char* to_string(StrategyKind kind);
/// Accepts the to_string spellings plus lowercase CLI forms (ppc, block,
/// fixed-k, no-reset, no-prefix-cache).
StrategyKind parse_strategy(const std::string& name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::PPC;
  double tau = 0.95;
  std::size_t block_size = 32;  // D: maximum candidate range
  std::size_t fixed_k = 4;
  std::size_t max_len = 256;    // response token budget
  Token eos = kEosToken;
  // Intra-block attention used by the block-level baseline only.
  IntraBlock block_direction = IntraBlock::Causal;

  void validate() const;
};

/// Commit choice over one candidate range.
struct CommitDecision {
  std::vector<double> confidences;
  std::optional<std::size_t> first_low;  // 1-based m_r
  std::size_t commit_len = 0;            // l_r
  TokenSeq committed_tokens;
};

/// Longest prefix whose confidences are all >= tau, forced to at least one
/// token: l = D when every c_k >= tau, else max(1, m - 1).
CommitDecision select_commit(std::span<const double> confidences, double tau);
/// Same, also recording the first l candidate tokens.
CommitDecision select_commit(std::span<const double> confidences,
                             std::span<const Token> candidates, double tau);

/// One model forward that committed tokens.
struct RoundRecord {
  std::size_t round = 0;          // 1-based
  std::size_t forward_index = 0;  // 1-based index of the forward that produced it
  std::size_t start = 0;          // committed response length before this round
  CommitDecision decision;
  TokenSeq candidates;                  // argmax token of every candidate slot
  TokenSeq tokens;                      // tokens actually committed (after EOS cut)
  std::vector<std::size_t> positions;   // 1-based response positions of `tokens`
};

struct DecodeTrace {
  std::vector<RoundRecord> rounds;
  std::size_t forward_calls = 0;
  std::size_t processed_positions = 0;  // new positions fed through the model
  std::size_t total_committed = 0;
  TokenSeq final_sequence;              // includes the terminating EOS if any
  bool eos_reached = false;
  std::size_t final_cache_length = 0;   // prompt + materialized response
  std::optional<std::string> error;

  /// Mean committed tokens per committing round.
  double tokens_per_forward() const;
};

struct Candidate {
  Token token = kMaskToken;
  double confidence = 0.0;
};

/// Greedy candidate read-out: argmax over non-reserved ids (MASK and PAD are
/// never proposed; ties go to the lower id) and its softmax probability.
Candidate read_candidate(std::span<const float> logits);

/// Step-wise state of one prefix-committing session (PPC, FixedK and the
/// no-reset / no-prefix-cache variants). Each step is one model forward that
/// first materializes pending committed tokens and then predicts
/// `candidates` fresh MASK slots. Batch decoding drives several of these.
class PrefixSession {
 public:
  PrefixSession(const LanguageModel& model, CacheState prompt_cache, StrategyConfig strategy);

  /// True once EOS was committed or max_len tokens exist.
  bool finished() const { return finished_; }
  /// Committed tokens not yet in the cache.
  std::size_t pending() const { return committed_.size() - cached_; }
  std::size_t committed_length() const { return committed_.size(); }
  std::size_t remaining() const { return strategy_.max_len - committed_.size(); }
  /// Candidate range the strategy would use on its own next round.
  std::size_t default_candidates() const;

  /// One forward with `candidates` slots; zero means materialize only.
  void step(std::size_t candidates);
  const CacheState& cache() const { return cache_; }
  const DecodeTrace& trace() const { return trace_; }
  DecodeTrace take_trace();

 private:
  const LanguageModel& model_;
  StrategyConfig strategy_;
  CacheState cache_;
  TokenSeq committed_;
  std::size_t cached_ = 0;  // committed tokens already materialized
  bool finished_ = false;
  DecodeTrace trace_;
};

/// Runs one decoding session from the prompt cache until EOS is committed or
/// max_len response tokens exist. Every strategy ends with the cache holding
/// the whole committed sequence; the last materialization forward counts.
DecodeTrace decode(const LanguageModel& model, const CacheState& prompt_cache,
                   const StrategyConfig& strategy);

DecodeTrace decode_block_level(const LanguageModel& model, const CacheState& prompt_cache,
                               std::size_t block_size, double tau, std::size_t max_len);
DecodeTrace decode_fixed_k(const LanguageModel& model, const CacheState& prompt_cache,
                           std::size_t block_size, std::size_t k, std::size_t max_len);

}  // namespace pabdm
