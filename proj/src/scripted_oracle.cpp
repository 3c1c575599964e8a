// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/scripted_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace pabdm {

ScriptedOracle::ScriptedOracle(std::size_t vocab_size, Fallback fallback)
    : vocab_size_(vocab_size), fallback_(std::move(fallback)) {
  if (vocab_size_ <= static_cast<std::size_t>(kEosToken)) {
    throw DomainError("ScriptedOracle: vocab must include the reserved ids");
  }
  if (!fallback_) throw DomainError("ScriptedOracle: fallback rule required");
}

void ScriptedOracle::add_script(TokenSeq prompt, TokenSeq prefix,
                                std::vector<ScriptedPrediction> per_offset) {
  script_[{std::move(prompt), std::move(prefix)}] = std::move(per_offset);
}

ScriptedPrediction ScriptedOracle::predict(const OracleQuery& query) const {
  if (!script_.empty()) {
    const auto it = script_.find({TokenSeq(query.prompt.begin(), query.prompt.end()),
                                  TokenSeq(query.prefix.begin(), query.prefix.end())});
    if (it != script_.end() && query.offset >= 1 && query.offset <= it->second.size()) {
      return it->second[query.offset - 1];
    }
  }
  return fallback_(query);
}

ForwardOutput ScriptedOracle::forward(const CacheState& cache, std::span<const Token> new_tokens,
                                      const MaskSpec& mask,
                                      std::size_t materialize_prefix_len) const {
  const std::size_t n = new_tokens.size();
  if (mask.size() != n) throw DomainError("ScriptedOracle::forward: mask size mismatch");
  if (materialize_prefix_len > n) {
    throw DomainError("ScriptedOracle::forward: materialize_prefix_len exceeds new token count");
  }
  ForwardOutput out;
  out.vocab = vocab_size_;
  out.new_cache = cache;
  out.new_cache.tokens.insert(out.new_cache.tokens.end(), new_tokens.begin(),
                              new_tokens.begin() + static_cast<std::ptrdiff_t>(materialize_prefix_len));
  out.logits.assign(n * vocab_size_, 0.0f);

  const std::span<const Token> prompt = cache.prompt();
  const std::span<const Token> cached_resp = cache.response();
  TokenSeq prefix;
  for (std::size_t i = 0; i < n; ++i) {
    ScriptedPrediction pred{new_tokens[i], 1.0};
    if (new_tokens[i] == kMaskToken) {
      // Leading run of resolved response tokens visible to slot i.
      prefix.assign(cached_resp.begin(), cached_resp.end());
      std::size_t j = 0;
      for (; j < i; ++j) {
        if (!mask.visible(i, j) || new_tokens[j] == kMaskToken) break;
        prefix.push_back(new_tokens[j]);
      }
      const std::size_t offset = i - j + 1;
      pred = predict(OracleQuery{prompt, prefix, offset});
    }
    if (pred.token < 0 || static_cast<std::size_t>(pred.token) >= vocab_size_) {
      throw DomainError("ScriptedOracle: predicted token outside the vocabulary");
    }
    const double floor_p = 1.0 / static_cast<double>(vocab_size_);
    if (!(pred.confidence > floor_p) || pred.confidence > 1.0) {
      throw DomainError("ScriptedOracle: confidence must lie in (1/vocab, 1], got " +
                        std::to_string(pred.confidence));
    }
    const double rest = std::max((1.0 - pred.confidence) / static_cast<double>(vocab_size_ - 1), 1e-12);
    float* row = out.logits.data() + i * vocab_size_;
    std::fill(row, row + vocab_size_, static_cast<float>(std::log(rest)));
    row[pred.token] = static_cast<float>(std::log(pred.confidence));
  }
  return out;
}

std::vector<ScenarioSample> make_dip_scenarios(std::size_t vocab_size,
                                               const std::vector<TokenSeq>& targets,
                                               double hard_rate, std::uint64_t seed,
                                               HardPosition shape, std::size_t id_len) {
  if (!(hard_rate >= 0.0 && hard_rate <= 1.0)) throw DomainError("make_dip_scenarios: hard rate outside [0, 1]");
  // Ids are written in base (vocab - 3) using the non-reserved tokens.
  const std::size_t base = vocab_size - 3;
  std::size_t capacity = 1;
  for (std::size_t i = 0; i < id_len; ++i) capacity *= base;
  if (targets.size() > capacity) throw DomainError("make_dip_scenarios: too many targets for the id length");

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution hard(hard_rate);
  std::vector<ScenarioSample> out;
  out.reserve(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ScenarioSample s;
    std::size_t id = t;
    for (std::size_t i = 0; i < id_len; ++i) {
      s.prompt.push_back(static_cast<Token>(3 + id % base));
      id /= base;
    }
    s.emitted = targets[t];
    s.emitted.push_back(kEosToken);
    for (std::size_t pos = 1; pos <= s.emitted.size(); ++pos) {
      if (hard(rng)) {
        HardPosition h = shape;
        h.position = pos;
        s.hard.push_back(h);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

ScriptedOracle make_scenario_oracle(std::size_t vocab_size, std::vector<ScenarioSample> samples,
                                    ScenarioProfile profile) {
  auto by_prompt = std::make_shared<std::map<TokenSeq, ScenarioSample>>();
  for (auto& s : samples) {
    std::sort(s.hard.begin(), s.hard.end(),
              [](const HardPosition& a, const HardPosition& b) { return a.position < b.position; });
    (*by_prompt)[s.prompt] = std::move(s);
  }
  auto rule = [by_prompt, profile](const OracleQuery& q) -> ScriptedPrediction {
    const auto it = by_prompt->find(TokenSeq(q.prompt.begin(), q.prompt.end()));
    if (it == by_prompt->end()) return {kEosToken, profile.next_conf};
    const ScenarioSample& s = it->second;
    const std::size_t a = q.position();
    const std::size_t p = q.prefix.size();
    const Token tok = a <= s.emitted.size() ? s.emitted[a - 1] : kEosToken;

    if (a == p + 1) {
      for (const auto& h : s.hard) {
        if (h.position == a) return {tok, h.first_conf};
      }
      return {tok, profile.next_conf};
    }
    double conf = profile.base * std::pow(profile.decay, static_cast<double>(a - p - 1));
    for (const auto& h : s.hard) {
      if (h.position > p && h.position <= a) conf = std::min(conf, h.far_conf);
    }
    return {tok, conf};
  };
  return ScriptedOracle(vocab_size, rule);
}

}  // namespace pabdm
