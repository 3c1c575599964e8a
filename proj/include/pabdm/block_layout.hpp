// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pabdm/types.hpp"

namespace pabdm {

/// Block partition of a response of `n` tokens into blocks of `d` positions.
///
/// Positions are 1-indexed: position i lives in block ceil(i / d). The last
/// block is padded up to the block-aligned length l = ceil(n / d) * d.
class BlockLayout {
 public:
  BlockLayout(std::size_t n, std::size_t d);

  std::size_t n() const { return n_; }
  std::size_t d() const { return d_; }
  std::size_t l() const { return l_; }
  std::size_t b() const { return l_ / d_; }

  /// Block of 1-indexed position i, in [1, b()].
  std::size_t block_index(std::size_t i) const;
  /// First and last 1-indexed positions of block `block` (1-indexed).
  std::size_t block_start(std::size_t block) const;
  std::size_t block_end(std::size_t block) const;

  bool is_pad(std::size_t i) const { return i > n_ && i <= l_; }
  /// Positions n+1..l in ascending order.
  std::vector<std::size_t> pad_positions() const;

  bool operator==(const BlockLayout&) const = default;

 private:
  std::size_t n_;
  std::size_t d_;
  std::size_t l_;
};

BlockLayout make_layout(std::size_t n, std::size_t d);

/// Result of block-wise forward noising. Vectors are 0-indexed storage of
/// the 1-indexed positions (index i-1 holds position i).
struct NoisySequence {
  TokenSeq clean;
  TokenSeq noisy;
  std::vector<double> noise_levels;  // one per block
  std::vector<bool> mask_flags;
};

/// Pads `response` with kPadToken up to layout.l().
TokenSeq pad_to_layout(std::span<const Token> response, const BlockLayout& layout);

/// Draws t_b ~ U(0,1) per block and masks each position with probability
/// t_{block(i)}. Pure in (clean, layout, rng state).
NoisySequence apply_block_noise(std::span<const Token> clean, const BlockLayout& layout,
                                std::mt19937_64& rng);

/// Same masking law with the per-block levels supplied by the caller.
NoisySequence apply_block_noise_with_levels(std::span<const Token> clean,
                                            const BlockLayout& layout,
                                            std::span<const double> levels,
                                            std::mt19937_64& rng);

}  // namespace pabdm
