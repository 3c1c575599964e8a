// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pabdm/block_layout.hpp"

namespace pabdm {

enum class MaskKind { BDM, PA, ConcatTrain, FullCausal, DecodeStep };

const char* to_string(MaskKind kind);

/// Dense boolean visibility matrix, row-major (rows are queries).
struct MaskMatrix {
  std::size_t size = 0;
  std::vector<std::uint8_t> cells;

  bool at(std::size_t q, std::size_t k) const { return cells[q * size + k] != 0; }
  bool operator==(const MaskMatrix&) const = default;
};

/// Square visibility predicate over grid indices [0, size). For masks built
/// over a response, grid index i-1 corresponds to 1-indexed position i.
class MaskSpec {
 public:
  using Predicate = std::function<bool(std::size_t q, std::size_t k)>;

  MaskSpec(std::size_t size, MaskKind kind, Predicate visible);

  std::size_t size() const { return size_; }
  MaskKind kind() const { return kind_; }
  bool visible(std::size_t q, std::size_t k) const;

  MaskMatrix materialize() const;

 private:
  std::size_t size_;
  MaskKind kind_;
  Predicate visible_;
};

/// Intra-block direction used by the concatenated training mask.
enum class IntraBlock { Causal, Bidirectional };

/// [prompt | noisy response | clean response] grid used for training.
struct ConcatLayout {
  BlockLayout layout;
  std::size_t prompt_len = 0;

  std::size_t size() const { return prompt_len + 2 * layout.l(); }
  /// Grid index of 1-indexed response position i in each branch.
  std::size_t noisy_index(std::size_t i) const { return prompt_len + i - 1; }
  std::size_t clean_index(std::size_t i) const { return prompt_len + layout.l() + i - 1; }
};

/// visible(i,j) <=> block(j) <= block(i).
MaskSpec bdm_mask(const BlockLayout& layout);
/// visible(i,j) <=> block(j) < block(i) or (same block and j <= i).
MaskSpec pa_mask(const BlockLayout& layout);
/// Lower-triangular mask of the given size.
MaskSpec causal_mask(std::size_t size);
MaskSpec concat_train_mask(const ConcatLayout& concat, IntraBlock variant);

/// Mask over one decoding forward: `prefix_len` clean tokens being
/// materialized followed by `candidate_len` candidate slots. Prefix rows are
/// causal; candidate rows see the whole prefix and either earlier candidates
/// only (causal) or every candidate (bidirectional).
MaskSpec decode_step_mask(std::size_t prefix_len, std::size_t candidate_len,
                          IntraBlock candidates);

/// Plain-text dump: one line per query row, '1'/'0' per key column.
std::string to_text_grid(const MaskSpec& mask);

}  // namespace pabdm
