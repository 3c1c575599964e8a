// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <set>

#include "pabdm/attention_masks.hpp"

using namespace pabdm;

namespace {

std::set<std::size_t> row(const MaskSpec& m, std::size_t q) {
  std::set<std::size_t> out;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (m.visible(q, k)) out.insert(k);
  }
  return out;
}

}  // namespace

TEST_CASE("bdm mask examples") {
  const MaskSpec m = bdm_mask(make_layout(4, 2));
  CHECK(m.kind() == MaskKind::BDM);
  CHECK(row(m, 0) == std::set<std::size_t>{0, 1});
  CHECK(row(m, 2) == std::set<std::size_t>{0, 1, 2, 3});

  const MaskSpec one = bdm_mask(make_layout(6, 6));
  for (std::size_t q = 0; q < 6; ++q) CHECK(row(one, q).size() == 6);

  const MaskSpec d1 = bdm_mask(make_layout(7, 1));
  CHECK(d1.materialize() == causal_mask(7).materialize());
}

TEST_CASE("pa mask examples") {
  const MaskSpec m = pa_mask(make_layout(4, 2));
  CHECK(row(m, 0) == std::set<std::size_t>{0});
  CHECK(row(m, 1) == std::set<std::size_t>{0, 1});
  CHECK(row(m, 3) == std::set<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("pa implies bdm, self visibility, left-closed within a block") {
  for (std::size_t d : {1, 2, 3, 5, 8}) {
    for (std::size_t n : {1, 7, 16, 33}) {
      const BlockLayout lay = make_layout(n, d);
      const MaskSpec pa = pa_mask(lay);
      const MaskSpec bdm = bdm_mask(lay);
      for (std::size_t i = 0; i < lay.l(); ++i) {
        CHECK(pa.visible(i, i));
        CHECK(bdm.visible(i, i));
        for (std::size_t j = 0; j < lay.l(); ++j) {
          if (pa.visible(i, j)) CHECK(bdm.visible(i, j));
          for (std::size_t jp = 0; jp < j; ++jp) {
            if (lay.block_index(jp + 1) != lay.block_index(j + 1)) continue;
            if (pa.visible(i, j)) CHECK(pa.visible(i, jp));
            if (bdm.visible(i, j)) CHECK(bdm.visible(i, jp));
          }
        }
      }
    }
  }
}

TEST_CASE("concat mask examples, d=2 l=4") {
  const ConcatLayout c{make_layout(4, 2), 0};
  const MaskSpec pa = concat_train_mask(c, IntraBlock::Causal);
  const MaskSpec bdm = concat_train_mask(c, IntraBlock::Bidirectional);
  const std::size_t q = c.noisy_index(3);
  CHECK(row(pa, q) == std::set<std::size_t>{c.clean_index(1), c.clean_index(2), c.noisy_index(3)});
  CHECK(row(bdm, q) == std::set<std::size_t>{c.clean_index(1), c.clean_index(2), c.noisy_index(3),
                                             c.noisy_index(4)});
}

TEST_CASE("concat mask rules over a grid with a prompt") {
  const std::size_t p = 5;
  for (std::size_t d : {1, 2, 3, 4}) {
    const ConcatLayout c{make_layout(7, d), p};
    const BlockLayout& lay = c.layout;
    for (IntraBlock v : {IntraBlock::Causal, IntraBlock::Bidirectional}) {
      const MaskSpec m = concat_train_mask(c, v);
      REQUIRE(m.size() == p + 2 * lay.l());
      // Prompt is causal among itself and visible to every response row.
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < m.size(); ++j) CHECK(m.visible(i, j) == (j <= i));
      }
      for (std::size_t i = 1; i <= lay.l(); ++i) {
        for (std::size_t k = 0; k < p; ++k) {
          CHECK(m.visible(c.noisy_index(i), k));
          CHECK(m.visible(c.clean_index(i), k));
        }
        for (std::size_t j = 1; j <= lay.l(); ++j) {
          const auto bi = lay.block_index(i), bj = lay.block_index(j);
          CHECK(m.visible(c.clean_index(i), c.clean_index(j)) == (j <= i));
          CHECK_FALSE(m.visible(c.clean_index(i), c.noisy_index(j)));
          CHECK(m.visible(c.noisy_index(i), c.clean_index(j)) == (bj < bi));
          const bool same = bj == bi && (v == IntraBlock::Bidirectional || j <= i);
          CHECK(m.visible(c.noisy_index(i), c.noisy_index(j)) == same);
        }
      }
    }
  }
}

TEST_CASE("materialized matrix agrees with predicate") {
  const ConcatLayout c{make_layout(9, 4), 3};
  const MaskSpec m = concat_train_mask(c, IntraBlock::Causal);
  const MaskMatrix mat = m.materialize();
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) CHECK(mat.at(i, j) == m.visible(i, j));
  }
}

TEST_CASE("decode step mask") {
  const MaskSpec causal = decode_step_mask(2, 3, IntraBlock::Causal);
  CHECK(causal.materialize() == causal_mask(5).materialize());
  const MaskSpec bi = decode_step_mask(2, 3, IntraBlock::Bidirectional);
  CHECK_FALSE(bi.visible(1, 2));  // committed rows never see candidates
  CHECK(bi.visible(2, 4));
  CHECK(bi.visible(4, 0));
}

TEST_CASE("text grid golden") {
  const std::string grid = to_text_grid(pa_mask(make_layout(4, 2)));
  CHECK(grid == "1000\n1100\n1110\n1111\n");
  CHECK(to_text_grid(bdm_mask(make_layout(4, 2))) == "1100\n1100\n1111\n1111\n");
}
