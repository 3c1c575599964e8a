// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/block_layout.hpp"

#include <string>

namespace pabdm {

BlockLayout::BlockLayout(std::size_t n, std::size_t d) : n_(n), d_(d), l_(0) {
  if (n == 0) throw DomainError("BlockLayout: token count must be >= 1");
  if (d == 0) throw DomainError("BlockLayout: block size must be >= 1");
  l_ = ((n + d - 1) / d) * d;
}

std::size_t BlockLayout::block_index(std::size_t i) const {
  if (i == 0 || i > l_) {
    throw DomainError("block_index: position " + std::to_string(i) + " outside [1, " +
                      std::to_string(l_) + "]");
  }
  return (i + d_ - 1) / d_;
}

std::size_t BlockLayout::block_start(std::size_t block) const {
  if (block == 0 || block > b()) throw DomainError("block_start: block out of range");
  return (block - 1) * d_ + 1;
}

std::size_t BlockLayout::block_end(std::size_t block) const {
  if (block == 0 || block > b()) throw DomainError("block_end: block out of range");
  return block * d_;
}

std::vector<std::size_t> BlockLayout::pad_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = n_ + 1; i <= l_; ++i) out.push_back(i);
  return out;
}

BlockLayout make_layout(std::size_t n, std::size_t d) { return BlockLayout(n, d); }

TokenSeq pad_to_layout(std::span<const Token> response, const BlockLayout& layout) {
  if (response.size() != layout.n()) {
    throw DomainError("pad_to_layout: response length " + std::to_string(response.size()) +
                      " != layout n " + std::to_string(layout.n()));
  }
  TokenSeq out(response.begin(), response.end());
  out.resize(layout.l(), kPadToken);
  return out;
}

NoisySequence apply_block_noise_with_levels(std::span<const Token> clean,
                                            const BlockLayout& layout,
                                            std::span<const double> levels,
                                            std::mt19937_64& rng) {
  if (clean.size() != layout.l()) {
    throw DomainError("apply_block_noise: sequence length " + std::to_string(clean.size()) +
                      " != block-aligned length " + std::to_string(layout.l()));
  }
  if (levels.size() != layout.b()) {
    throw DomainError("apply_block_noise: expected one noise level per block");
  }
  NoisySequence out;
  out.clean.assign(clean.begin(), clean.end());
  out.noisy = out.clean;
  out.noise_levels.assign(levels.begin(), levels.end());
  out.mask_flags.assign(layout.l(), false);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 1; i <= layout.l(); ++i) {
    const double t = levels[layout.block_index(i) - 1];
    // u in [0,1): t = 0 never masks, t = 1 always masks.
    if (unit(rng) < t) {
      out.noisy[i - 1] = kMaskToken;
      out.mask_flags[i - 1] = true;
    }
  }
  return out;
}

NoisySequence apply_block_noise(std::span<const Token> clean, const BlockLayout& layout,
                                std::mt19937_64& rng) {
  if (clean.size() != layout.l()) {
    throw DomainError("apply_block_noise: sequence length " + std::to_string(clean.size()) +
                      " != block-aligned length " + std::to_string(layout.l()));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> levels(layout.b());
  for (auto& t : levels) t = unit(rng);
  return apply_block_noise_with_levels(clean, layout, levels, rng);
}

}  // namespace pabdm
