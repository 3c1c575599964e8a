// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pabdm/ppc_decoder.hpp"
#include "pabdm/scripted_oracle.hpp"

using namespace pabdm;

namespace {

constexpr std::size_t kVocab = 16;

TokenSeq text(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Token> d(3, kVocab - 1);
  TokenSeq t(n);
  for (auto& x : t) x = d(rng);
  return t;
}

// Oracle emitting `emitted` then EOS for prompt {3}.
ScriptedOracle scenario(const TokenSeq& emitted, std::vector<HardPosition> hard = {},
                        ScenarioProfile profile = {}) {
  return make_scenario_oracle(kVocab, {ScenarioSample{{3}, emitted, std::move(hard)}}, profile);
}

StrategyConfig strategy(StrategyKind kind, std::size_t d, double tau, std::size_t max_len = 256) {
  StrategyConfig s;
  s.kind = kind;
  s.block_size = d;
  s.tau = tau;
  s.max_len = max_len;
  return s;
}

// Commit rule written out directly.
std::size_t brute_commit(const std::vector<double>& c, double tau) {
  for (std::size_t m = 1; m <= c.size(); ++m) {
    if (c[m - 1] < tau) return m - 1 >= 1 ? m - 1 : 1;
  }
  return c.size();
}

}  // namespace

TEST_CASE("select_commit examples") {
  auto d = select_commit(std::vector<double>{0.99, 0.97, 0.90, 0.99}, 0.95);
  CHECK(d.first_low == 3);
  CHECK(d.commit_len == 2);
  d = select_commit(std::vector<double>{0.50, 0.99, 0.99, 0.99}, 0.95);
  CHECK(d.first_low == 1);
  CHECK(d.commit_len == 1);
  d = select_commit(std::vector<double>{0.96, 0.99, 0.97}, 0.95);
  CHECK_FALSE(d.first_low);
  CHECK(d.commit_len == 3);
  d = select_commit(std::vector<double>{0.0, 0.1}, 0.0);
  CHECK(d.commit_len == 2);
  const std::vector<Token> toks = {7, 8, 9};
  d = select_commit(std::vector<double>{0.99, 0.2, 0.99}, toks, 0.95);
  CHECK(d.committed_tokens == TokenSeq{7});
}

TEST_CASE("select_commit agrees with the brute-force rule and is monotone in tau") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, 32);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> c(len(rng));
    for (auto& x : c) x = 0.5 + 0.5 * u(rng);
    const double tau = u(rng);
    const auto d = select_commit(c, tau);
    CHECK(d.commit_len == brute_commit(c, tau));
    CHECK(d.commit_len >= 1);
    CHECK(d.commit_len <= c.size());
    const double tau2 = tau + (1.0 - tau) * u(rng);
    CHECK(select_commit(c, tau2).commit_len <= d.commit_len);
  }
}

TEST_CASE("all confident, 96 tokens, D=32: three rounds and four forwards") {
  TokenSeq t = text(95, 2);
  const ScriptedOracle o = scenario(t);
  const auto trace = decode(o, o.encode_prompt(TokenSeq{3}), strategy(StrategyKind::PPC, 32, 0.95));
  CHECK(trace.rounds.size() == 3);
  CHECK(trace.forward_calls == 4);
  CHECK(trace.total_committed == 96);
  CHECK(trace.eos_reached);
  t.push_back(kEosToken);
  CHECK(trace.final_sequence == t);
  CHECK(trace.final_cache_length == 97);
  CHECK(trace.tokens_per_forward() == doctest::Approx(32.0));
}

TEST_CASE("tau=0 commits D per round, tau above everything commits one") {
  const TokenSeq t = text(20, 3);
  const ScriptedOracle o = scenario(t, {{5, 0.97, 0.6}}, {0.999, 0.99, 0.9});
  const CacheState c = o.encode_prompt(TokenSeq{3});
  const auto wide = decode(o, c, strategy(StrategyKind::PPC, 8, 0.0));
  for (std::size_t r = 0; r + 1 < wide.rounds.size(); ++r) CHECK(wide.rounds[r].tokens.size() == 8);

  const auto narrow = decode(o, c, strategy(StrategyKind::PPC, 8, 1.0));
  for (const auto& r : narrow.rounds) CHECK(r.decision.commit_len == 1);
  const auto d1 = decode(o, c, strategy(StrategyKind::PPC, 1, 1.0));
  CHECK(narrow.final_sequence == d1.final_sequence);
  CHECK(narrow.rounds.size() == 21);
}

TEST_CASE("reset restores a full candidate range, no-reset keeps the residual") {
  const TokenSeq t = text(12, 4);
  // Position 3 is hard when seen from far away.
  const ScriptedOracle o = scenario(t, {{3, 0.97, 0.6}});
  const CacheState c = o.encode_prompt(TokenSeq{3});
  const auto full = decode(o, c, strategy(StrategyKind::PPC, 8, 0.95));
  REQUIRE(full.rounds.size() >= 2);
  CHECK(full.rounds[0].decision.commit_len == 2);
  CHECK(full.rounds[1].decision.confidences.size() == 8);

  const auto nr = decode(o, c, strategy(StrategyKind::PPCNoReset, 8, 0.95));
  CHECK(nr.rounds[1].decision.confidences.size() == 6);
  CHECK(nr.final_sequence == full.final_sequence);
}

TEST_CASE("no-prefix-cache gives the same stream with more processed positions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TokenSeq t = text(30, seed);
    std::vector<HardPosition> hard;
    for (std::size_t p = 2; p <= 30; p += 3 + seed % 4) hard.push_back({p, 0.97, 0.6});
    const ScriptedOracle o = scenario(t, hard);
    const CacheState c = o.encode_prompt(TokenSeq{3});
    const auto a = decode(o, c, strategy(StrategyKind::PPC, 8, 0.95));
    const auto b = decode(o, c, strategy(StrategyKind::PPCNoPrefixCache, 8, 0.95));
    CHECK(a.final_sequence == b.final_sequence);
    CHECK(a.rounds.size() == b.rounds.size());
    CHECK(a.processed_positions < b.processed_positions);
    CHECK(a.final_cache_length == b.final_cache_length);
  }
}

TEST_CASE("block-level baseline schedule") {
  const TokenSeq t = text(95, 5);
  const ScriptedOracle easy = scenario(t);
  const CacheState c = easy.encode_prompt(TokenSeq{3});
  const auto tr = decode_block_level(easy, c, 32, 0.95, 256);
  CHECK(tr.rounds.size() == 3);  // one iteration per block
  CHECK(tr.forward_calls == 4);  // plus the final materialization
  CHECK(tr.total_committed == 96);

  // Only the slot right after the resolved run is ever confident.
  const ScriptedOracle hard = scenario(text(15, 6), {}, {0.999, 0.5, 1.0});
  const auto slow = decode_block_level(hard, hard.encode_prompt(TokenSeq{3}), 8, 0.95, 256);
  CHECK(slow.rounds.size() == 16);  // D iterations for each of the two blocks
  for (const auto& r : slow.rounds) CHECK(r.decision.commit_len == 1);

  StrategyConfig bi = strategy(StrategyKind::BlockLevel, 8, 0.95);
  bi.block_direction = IntraBlock::Bidirectional;
  const auto b2 = decode(hard, hard.encode_prompt(TokenSeq{3}), bi);
  CHECK(b2.final_sequence == slow.final_sequence);
}

TEST_CASE("fixed-k commits regardless of confidence") {
  const TokenSeq t = text(20, 7);
  const ScriptedOracle o = scenario(t, {{2, 0.5, 0.5}});
  const CacheState c = o.encode_prompt(TokenSeq{3});
  const auto k4 = decode_fixed_k(o, c, 8, 4, 256);
  for (std::size_t r = 0; r + 1 < k4.rounds.size(); ++r) CHECK(k4.rounds[r].tokens.size() == 4);
  const auto k1 = decode_fixed_k(o, c, 8, 1, 256);
  CHECK(k1.rounds.size() == 21);
  const auto kd = decode_fixed_k(o, c, 8, 8, 256);
  CHECK(kd.rounds.size() == 3);
  CHECK_THROWS_AS(decode_fixed_k(o, c, 8, 9, 256), DomainError);
}

TEST_CASE("EOS inside the committed prefix truncates, EOS beyond it is ignored") {
  const TokenSeq t = {4, 5, kEosToken, 6, 7};
  const ScriptedOracle o = scenario(t);
  const auto tr = decode(o, o.encode_prompt(TokenSeq{3}), strategy(StrategyKind::PPC, 8, 0.95));
  CHECK(tr.final_sequence == TokenSeq{4, 5, kEosToken});
  CHECK(tr.eos_reached);

  // EOS sits at a slot that is never committed in round 1.
  const ScriptedOracle o2 = scenario(TokenSeq{4, 5, 6}, {{3, 0.97, 0.6}});
  const auto tr2 = decode(o2, o2.encode_prompt(TokenSeq{3}), strategy(StrategyKind::PPC, 8, 0.95));
  CHECK(tr2.rounds[0].candidates[3] == kEosToken);
  CHECK(tr2.rounds[0].tokens == TokenSeq{4, 5});
  CHECK(tr2.final_sequence == TokenSeq{4, 5, 6, kEosToken});
}

TEST_CASE("candidate range shrinks at max_len") {
  const ScriptedOracle o = scenario(text(40, 8));
  const auto tr = decode(o, o.encode_prompt(TokenSeq{3}), strategy(StrategyKind::PPC, 8, 0.95, 13));
  CHECK(tr.total_committed == 13);
  CHECK_FALSE(tr.eos_reached);
  CHECK(tr.rounds.back().decision.confidences.size() == 5);
}

TEST_CASE("trace invariants on random dip scenarios") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<HardPosition> hard;
    const TokenSeq txt = text(10 + t % 20, 100 + t);
    for (std::size_t p = 1; p <= txt.size(); ++p) {
      if (u(rng) < 0.2) hard.push_back({p, 0.5 + 0.5 * u(rng), 0.3 + 0.6 * u(rng)});
    }
    const ScriptedOracle o = scenario(txt, hard, {0.999, 0.99, 0.95});
    for (StrategyKind k : {StrategyKind::PPC, StrategyKind::PPCNoReset, StrategyKind::PPCNoPrefixCache}) {
      const auto tr = decode(o, o.encode_prompt(TokenSeq{3}), strategy(k, 8, 0.9));
      std::size_t sum = 0;
      TokenSeq replay;
      for (const auto& r : tr.rounds) {
        CHECK(r.tokens.size() >= 1);
        CHECK(r.decision.commit_len <= r.decision.confidences.size());
        const std::size_t gated = r.decision.first_low ? *r.decision.first_low - 1 : r.decision.commit_len;
        for (std::size_t i = 0; i < std::min(gated, r.decision.commit_len); ++i) {
          CHECK(r.decision.confidences[i] >= 0.9);
        }
        CHECK(r.start == replay.size());
        replay.insert(replay.end(), r.tokens.begin(), r.tokens.end());
        sum += r.tokens.size();
      }
      CHECK(sum == tr.total_committed);
      CHECK(replay == tr.final_sequence);
      TokenSeq expect = txt;
      expect.push_back(kEosToken);
      CHECK(tr.final_sequence == expect);
    }
  }
}

TEST_CASE("D-invariance of single commits on random transformers") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.max_positions = 48;
    cfg.seed = seed;
    const TinyTransformer m(cfg);
    const CacheState c = m.encode_prompt(TokenSeq{3, 4, 5});
    const auto a = decode(m, c, strategy(StrategyKind::PPC, 1, 1.0, 20));
    const auto b = decode(m, c, strategy(StrategyKind::PPC, 8, 1.0, 20));
    CHECK(a.final_sequence == b.final_sequence);
    REQUIRE(a.rounds.size() == b.rounds.size());
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
      CHECK(std::abs(a.rounds[r].decision.confidences[0] - b.rounds[r].decision.confidences[0]) <= 1e-6);
    }
  }
}

TEST_CASE("a replaying oracle reproduces a transformer trace") {
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.max_positions = 48;
  cfg.seed = 21;
  TinyTransformer m(cfg);
  // Sharpen the random model so its confidences clear the uniform floor.
  for (float& p : m.mutable_params()) p *= 6.0f;
  const TokenSeq prompt = {3, 4};
  const StrategyConfig s = strategy(StrategyKind::PPC, 6, 0.5, 24);
  const auto rec = decode(m, m.encode_prompt(prompt), s);

  ScriptedOracle replay(cfg.vocab_size, [](const OracleQuery&) { return ScriptedPrediction{kEosToken, 0.99}; });
  TokenSeq prefix;
  for (const auto& r : rec.rounds) {
    std::vector<ScriptedPrediction> preds;
    for (std::size_t k = 0; k < r.candidates.size(); ++k) {
      preds.push_back({r.candidates[k], r.decision.confidences[k]});
    }
    replay.add_script(prompt, prefix, preds);
    prefix.insert(prefix.end(), r.tokens.begin(), r.tokens.end());
  }
  const auto again = decode(replay, replay.encode_prompt(prompt), s);
  CHECK(again.final_sequence == rec.final_sequence);
  CHECK(again.forward_calls == rec.forward_calls);
  REQUIRE(again.rounds.size() == rec.rounds.size());
  for (std::size_t r = 0; r < rec.rounds.size(); ++r) {
    CHECK(again.rounds[r].decision.commit_len == rec.rounds[r].decision.commit_len);
  }
}

TEST_CASE("strategy parsing and validation") {
  CHECK(parse_strategy("no-reset") == StrategyKind::PPCNoReset);
  CHECK(parse_strategy("BlockLevel") == StrategyKind::BlockLevel);
  CHECK_THROWS_AS(parse_strategy("beam"), DomainError);
  StrategyConfig s;
  s.block_size = 0;
  CHECK_THROWS_AS(s.validate(), DomainError);
  s.block_size = 4;
  s.tau = 1.5;
  CHECK_THROWS_AS(s.validate(), DomainError);
}
