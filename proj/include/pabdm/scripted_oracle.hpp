// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "pabdm/tiny_transformer.hpp"

namespace pabdm {

struct ScriptedPrediction {
  Token token = kEosToken;
  double confidence = 1.0;
};

/// What a candidate slot can see: the prompt, the leading run of resolved
/// response tokens visible to it, and its 1-based offset past that run.
struct OracleQuery {
  std::span<const Token> prompt;
  std::span<const Token> prefix;
  std::size_t offset = 1;

  /// 1-based response position of the queried slot.
  std::size_t position() const { return prefix.size() + offset; }
};

/// Deterministic stand-in model. Candidate (MASK) slots are answered from an
/// explicit script keyed by (prompt, resolved prefix) when present, else from
/// the fallback rule. Logits put exactly `confidence` on the predicted token
/// and spread the rest uniformly. Non-mask slots echo their own token.
class ScriptedOracle : public LanguageModel {
 public:
  using Fallback = std::function<ScriptedPrediction(const OracleQuery&)>;

  ScriptedOracle(std::size_t vocab_size, Fallback fallback);

  std::size_t vocab_size() const override { return vocab_size_; }

  /// Predictions for candidate offsets 1..per_offset.size() after `prefix`.
  void add_script(TokenSeq prompt, TokenSeq prefix, std::vector<ScriptedPrediction> per_offset);
  std::size_t script_size() const { return script_.size(); }

  ScriptedPrediction predict(const OracleQuery& query) const;

  ForwardOutput forward(const CacheState& cache, std::span<const Token> new_tokens,
                        const MaskSpec& mask, std::size_t materialize_prefix_len) const override;

 private:
  std::size_t vocab_size_;
  Fallback fallback_;
  std::map<std::pair<TokenSeq, TokenSeq>, std::vector<ScriptedPrediction>> script_;
};

/// One scripted instance: the oracle emits `emitted` for `prompt`, with
/// confidence shaped by the listed hard positions.
struct HardPosition {
  std::size_t position = 0;   // 1-based response position
  double first_conf = 0.97;   // confidence when it is the next slot after the prefix
  double far_conf = 0.6;      // confidence when unresolved slots precede it
};

struct ScenarioSample {
  TokenSeq prompt;
  TokenSeq emitted;  // tokens the oracle predicts, EOS appended past the end
  std::vector<HardPosition> hard;
};

/// Confidence rule for scenario oracles. For a slot at position a with a
/// resolved prefix of length p:
///   a == p + 1               -> first_conf of a hard slot, else next_conf
///   otherwise                -> base * decay^(a - p - 1), capped by the
///                               far_conf of every hard position in (p, a]
struct ScenarioProfile {
  double next_conf = 0.999;
  double base = 0.99;
  double decay = 1.0;
};

/// One sample per target (EOS appended to `emitted`), each keyed by a unique
/// id prompt of `id_len` tokens. Every position is independently hard with
/// probability `hard_rate`, taking the confidences of `shape`.
std::vector<ScenarioSample> make_dip_scenarios(std::size_t vocab_size,
                                               const std::vector<TokenSeq>& targets,
                                               double hard_rate, std::uint64_t seed,
                                               HardPosition shape = {}, std::size_t id_len = 3);

/// Oracle answering every prompt in `samples` (unknown prompts predict EOS).
ScriptedOracle make_scenario_oracle(std::size_t vocab_size, std::vector<ScenarioSample> samples,
                                    ScenarioProfile profile = {});

}  // namespace pabdm
