// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "pabdm/block_layout.hpp"

using namespace pabdm;

TEST_CASE("layout sizes") {
  const BlockLayout a = make_layout(70, 32);
  CHECK(a.l() == 96);
  CHECK(a.b() == 3);
  const auto pads = a.pad_positions();
  REQUIRE(pads.size() == 26);
  CHECK(pads.front() == 71);
  CHECK(pads.back() == 96);

  const BlockLayout b = make_layout(32, 32);
  CHECK(b.l() == 32);
  CHECK(b.b() == 1);
  CHECK(b.pad_positions().empty());

  CHECK(make_layout(5, 4).block_index(5) == 2);
}

TEST_CASE("layout rejects zero sizes") {
  CHECK_THROWS_AS(make_layout(0, 4), DomainError);
  CHECK_THROWS_AS(make_layout(4, 0), DomainError);
}

TEST_CASE("block index steps by one every d positions") {
  for (std::size_t d = 1; d <= 9; ++d) {
    for (std::size_t n = 1; n <= 40; ++n) {
      const BlockLayout lay = make_layout(n, d);
      CHECK(lay.l() % d == 0);
      CHECK(lay.l() >= n);
      CHECK(lay.l() < n + d);
      for (std::size_t i = 1; i <= lay.l(); ++i) {
        CHECK(lay.block_index(i) == (i + d - 1) / d);
        CHECK(lay.block_index(i) >= 1);
        CHECK(lay.block_index(i) <= lay.b());
        CHECK(lay.is_pad(i) == (i > n));
      }
      for (std::size_t blk = 1; blk <= lay.b(); ++blk) {
        CHECK(lay.block_end(blk) - lay.block_start(blk) + 1 == d);
        if (blk > 1) CHECK(lay.block_start(blk) == lay.block_end(blk - 1) + 1);
      }
    }
  }
}

TEST_CASE("pad_to_layout fills with PAD") {
  const BlockLayout lay = make_layout(3, 4);
  const TokenSeq padded = pad_to_layout(TokenSeq{7, 8, 9}, lay);
  CHECK(padded == TokenSeq{7, 8, 9, kPadToken});
}

TEST_CASE("forced noise levels") {
  const BlockLayout lay = make_layout(16, 4);
  const TokenSeq clean(16, 5);
  std::mt19937_64 rng(1);
  const auto none = apply_block_noise_with_levels(clean, lay, std::vector<double>(4, 0.0), rng);
  CHECK(none.noisy == clean);
  for (bool f : none.mask_flags) CHECK_FALSE(f);

  const auto all = apply_block_noise_with_levels(clean, lay, std::vector<double>(4, 1.0), rng);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(all.noisy[i] == kMaskToken);
    CHECK(all.mask_flags[i]);
  }
}

TEST_CASE("noise invariants and determinism") {
  const BlockLayout lay = make_layout(20, 8);
  const TokenSeq clean = pad_to_layout(TokenSeq(20, 9), lay);
  std::mt19937_64 r1(42), r2(42);
  const auto a = apply_block_noise(clean, lay, r1);
  const auto b = apply_block_noise(clean, lay, r2);
  CHECK(a.noisy == b.noisy);
  CHECK(a.noise_levels == b.noise_levels);
  CHECK(a.noise_levels.size() == lay.b());
  for (std::size_t i = 0; i < lay.l(); ++i) {
    if (a.mask_flags[i]) {
      CHECK(a.noisy[i] == kMaskToken);
    } else {
      CHECK(a.noisy[i] == clean[i]);
    }
  }
  std::mt19937_64 r3(42);
  CHECK_THROWS_AS(apply_block_noise(TokenSeq(5, 9), lay, r3), DomainError);
}

TEST_CASE("per-block mask fraction converges to the drawn level") {
  const BlockLayout lay = make_layout(64, 8);
  const TokenSeq clean(64, 9);
  std::mt19937_64 level_rng(2026);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> levels(lay.b());
  for (auto& t : levels) t = unit(level_rng);

  std::mt19937_64 rng(11);
  std::vector<double> masked(lay.b(), 0.0);
  const int reps = 10000;
  for (int r = 0; r < reps; ++r) {
    const auto s = apply_block_noise_with_levels(clean, lay, levels, rng);
    for (std::size_t i = 1; i <= lay.l(); ++i) masked[lay.block_index(i) - 1] += s.mask_flags[i - 1];
  }
  for (std::size_t b = 0; b < lay.b(); ++b) {
    CHECK(std::abs(masked[b] / (reps * 8.0) - levels[b]) < 0.02);
  }
}

TEST_CASE("masked count per block is binomial (chi-square, alpha 0.01)") {
  // Critical values of chi-square with 8 degrees of freedom (9 bins - 1).
  const double critical = 20.090;
  const std::size_t d = 8;
  const BlockLayout lay = make_layout(d, d);
  const TokenSeq clean(d, 9);
  for (double t : {0.25, 0.5, 0.75}) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(t * 1000));
    std::vector<double> observed(d + 1, 0.0);
    const int reps = 20000;
    for (int r = 0; r < reps; ++r) {
      const auto s = apply_block_noise_with_levels(clean, lay, std::vector<double>{t}, rng);
      std::size_t k = 0;
      for (bool f : s.mask_flags) k += f;
      observed[k] += 1;
    }
    double chi2 = 0.0;
    for (std::size_t k = 0; k <= d; ++k) {
      const double binom = std::tgamma(d + 1.0) / (std::tgamma(k + 1.0) * std::tgamma(d - k + 1.0));
      const double expected = reps * binom * std::pow(t, k) * std::pow(1 - t, d - k);
      chi2 += (observed[k] - expected) * (observed[k] - expected) / expected;
    }
    CHECK(chi2 < critical);
  }
}
