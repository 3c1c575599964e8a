// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <random>

#include "pabdm/batch_ppc.hpp"
#include "pabdm/scripted_oracle.hpp"

using namespace pabdm;

namespace {

constexpr std::size_t kVocab = 16;

std::vector<TokenSeq> random_targets(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::uniform_int_distribution<Token> tok(3, kVocab - 1);
  std::vector<TokenSeq> out(n);
  for (auto& t : out) {
    t.resize(len(rng));
    for (auto& x : t) x = tok(rng);
  }
  return out;
}

StrategyConfig ppc(std::size_t d, double tau) {
  StrategyConfig s;
  s.block_size = d;
  s.tau = tau;
  s.max_len = 64;
  return s;
}

}  // namespace

TEST_CASE("alignment examples") {
  const std::vector<std::size_t> a = {10, 13};
  auto r = align_batch(a, 4);
  CHECK(r.target_len == 14);
  CHECK(r.mask_counts == std::vector<std::size_t>{4, 1});
  const std::vector<std::size_t> b = {10, 10};
  r = align_batch(b, 4);
  CHECK(r.mask_counts == std::vector<std::size_t>{4, 4});
  const std::vector<std::size_t> c = {10, 14};
  r = align_batch(c, 4);
  CHECK(r.mask_counts == std::vector<std::size_t>{4, 0});
  const std::vector<std::size_t> d = {10, 15};
  CHECK_THROWS_AS(align_batch(d, 4), BucketingError);
  CHECK_THROWS_AS(align_batch(std::span<const std::size_t>{}, 4), DomainError);
}

TEST_CASE("alignment properties") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dd(1, 16), base(0, 50), bs(1, 8);
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = dd(rng);
    const std::size_t lo = base(rng);
    std::uniform_int_distribution<std::size_t> off(0, d);
    std::vector<std::size_t> p(bs(rng));
    for (auto& x : p) x = lo + off(rng);
    const auto r = align_batch(p, d);
    const std::size_t mn = *std::min_element(p.begin(), p.end());
    CHECK(r.target_len == mn + d);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(r.mask_counts[i] <= d);
      CHECK(p[i] + r.mask_counts[i] == r.target_len);
    }
  }
}

TEST_CASE("a batch of one reproduces single-sample decoding") {
  const auto samples = make_dip_scenarios(kVocab, random_targets(10, 4), 0.2, 5);
  const ScriptedOracle o = make_scenario_oracle(kVocab, samples, {0.999, 0.99, 0.97});
  for (const auto& s : samples) {
    const CacheState c = o.encode_prompt(s.prompt);
    const auto single = decode(o, c, ppc(8, 0.9));
    const auto batch = batch_decode(o, {c}, ppc(8, 0.9));
    REQUIRE(batch.traces.size() == 1);
    CHECK(batch.traces[0].final_sequence == single.final_sequence);
    CHECK(batch.traces[0].forward_calls == single.forward_calls);
    CHECK(batch.traces[0].rounds.size() == single.rounds.size());
  }
}

TEST_CASE("batched output matches sequential decoding") {
  const auto samples = make_dip_scenarios(kVocab, random_targets(24, 6), 0.25, 7);
  const ScriptedOracle o = make_scenario_oracle(kVocab, samples, {0.999, 0.99, 0.97});
  for (std::size_t b : {2u, 4u, 8u}) {
    for (std::size_t start = 0; start + b <= samples.size(); start += b) {
      std::vector<CacheState> caches;
      for (std::size_t i = start; i < start + b; ++i) caches.push_back(o.encode_prompt(samples[i].prompt));
      const auto res = batch_decode(o, caches, ppc(8, 0.9));
      for (std::size_t i = 0; i < b; ++i) {
        const auto seq = decode(o, caches[i], ppc(8, 0.9));
        CHECK(res.traces[i].final_sequence == seq.final_sequence);
        CHECK_FALSE(res.traces[i].error);
      }
      for (const auto& r : res.rounds) {
        for (std::size_t m : r.mask_counts) CHECK(m <= 8);
        CHECK(r.samples.size() == r.prefix_lens.size());
      }
    }
  }
}

TEST_CASE("batch decoding rejects strategies other than PPC") {
  const ScriptedOracle o = make_scenario_oracle(kVocab, {});
  StrategyConfig s = ppc(4, 0.9);
  s.kind = StrategyKind::FixedK;
  CHECK_THROWS_AS(batch_decode(o, {o.encode_prompt(TokenSeq{3})}, s), DomainError);
}

TEST_CASE("length bucketing keeps spreads bounded") {
  const std::vector<std::size_t> lens = {5, 30, 7, 12, 6, 31, 40, 9};
  const auto buckets = bucket_by_length(lens, 4, 3);
  std::vector<int> seen(lens.size(), 0);
  for (const auto& b : buckets) {
    CHECK(b.size() <= 3);
    std::size_t lo = 1000, hi = 0;
    for (std::size_t i : b) {
      lo = std::min(lo, lens[i]);
      hi = std::max(hi, lens[i]);
      ++seen[i];
    }
    CHECK(hi - lo <= 4);
  }
  for (int s : seen) CHECK(s == 1);
}
