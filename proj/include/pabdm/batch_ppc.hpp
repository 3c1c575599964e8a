// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pabdm/ppc_decoder.hpp"

namespace pabdm {

/// Shared target length T = min_i p_i + D and per-sample mask counts
/// m_i = T - p_i for one batched round.
struct AlignedBatch {
  std::size_t target_len = 0;
  std::vector<std::size_t> mask_counts;
};

/// Throws BucketingError when max_i p_i - min_i p_i > D.
AlignedBatch align_batch(std::span<const std::size_t> prefix_lens, std::size_t block_size);

struct BatchRound {
  std::size_t round = 0;
  std::size_t target_len = 0;
  std::vector<std::size_t> samples;      // indices taking part in this forward
  std::vector<std::size_t> prefix_lens;  // p_i before the round
  std::vector<std::size_t> mask_counts;  // m_i actually appended
  std::size_t active = 0;                // samples still committing
};

struct BatchResult {
  std::vector<DecodeTrace> traces;
  std::vector<BatchRound> rounds;
};

/// PPC over a length-bucketed batch. Each round is one logical batched
/// forward; every sample commits its own reliable prefix from its m_i
/// candidates. Finished samples take one last materialize-only pass and
/// then leave the batch. A failing sample records its error and drops out
/// without stopping the others.
BatchResult batch_decode(const LanguageModel& model, std::vector<CacheState> prompt_caches,
                         const StrategyConfig& strategy);

/// Greedy length bucketing: sorts by length and cuts a new bucket whenever
/// the spread would exceed `max_spread`. Returns indices per bucket.
std::vector<std::vector<std::size_t>> bucket_by_length(std::span<const std::size_t> lengths,
                                                       std::size_t max_spread,
                                                       std::size_t max_bucket);

}  // namespace pabdm
