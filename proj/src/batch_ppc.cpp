// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/batch_ppc.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <optional>
#include <string>

namespace pabdm {

AlignedBatch align_batch(std::span<const std::size_t> prefix_lens, std::size_t block_size) {
  if (block_size == 0) throw DomainError("align_batch: block size must be >= 1");
  if (prefix_lens.empty()) throw DomainError("align_batch: empty batch");
  const auto [lo, hi] = std::minmax_element(prefix_lens.begin(), prefix_lens.end());
  if (*hi - *lo > block_size) {
    throw BucketingError("align_batch: prefix spread " + std::to_string(*hi - *lo) +
                         " exceeds D = " + std::to_string(block_size) + "; re-bucket the batch");
  }
  AlignedBatch out;
  out.target_len = *lo + block_size;
  out.mask_counts.reserve(prefix_lens.size());
  for (std::size_t p : prefix_lens) out.mask_counts.push_back(out.target_len - p);
  return out;
}

BatchResult batch_decode(const LanguageModel& model, std::vector<CacheState> prompt_caches,
                         const StrategyConfig& strategy) {
  strategy.validate();
  if (strategy.kind != StrategyKind::PPC) {
    throw DomainError("batch_decode: only the PPC strategy is batched");
  }
  const std::size_t n = prompt_caches.size();
  std::vector<std::unique_ptr<PrefixSession>> sessions(n);
  std::vector<std::optional<std::string>> errors(n);
  for (std::size_t i = 0; i < n; ++i) {
    sessions[i] = std::make_unique<PrefixSession>(model, std::move(prompt_caches[i]), strategy);
  }
  // A sample is "live" while it still needs forwards: committing, or holding
  // committed tokens that have not been materialized yet.
  auto live = [&](std::size_t i) {
    return !errors[i] && (!sessions[i]->finished() || sessions[i]->pending() > 0);
  };

  BatchResult result;
  for (std::size_t round = 1;; ++round) {
    BatchRound br;
    br.round = round;
    std::vector<std::size_t> active_lens;
    for (std::size_t i = 0; i < n; ++i) {
      if (!live(i)) continue;
      br.samples.push_back(i);
      br.prefix_lens.push_back(sessions[i]->committed_length());
      if (!sessions[i]->finished()) active_lens.push_back(sessions[i]->committed_length());
    }
    if (br.samples.empty()) break;
    br.active = active_lens.size();

    AlignedBatch aligned;
    if (!active_lens.empty()) {
      aligned = align_batch(active_lens, strategy.block_size);
      br.target_len = aligned.target_len;
    }
    br.mask_counts.resize(br.samples.size(), 0);
    for (std::size_t s = 0; s < br.samples.size(); ++s) {
      const PrefixSession& sess = *sessions[br.samples[s]];
      if (sess.finished()) continue;
      const std::size_t m = aligned.target_len - sess.committed_length();
      br.mask_counts[s] = std::min(m, sess.remaining());
    }

    const auto count = static_cast<std::ptrdiff_t>(br.samples.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < count; ++s) {
      const std::size_t i = br.samples[static_cast<std::size_t>(s)];
      try {
        sessions[i]->step(br.mask_counts[static_cast<std::size_t>(s)]);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    result.rounds.push_back(std::move(br));
    if (round > strategy.max_len + 2) throw DecodeError("batch_decode: round guard exceeded");
  }

  result.traces.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DecodeTrace t = sessions[i]->take_trace();
    t.error = errors[i];
    result.traces.push_back(std::move(t));
  }
  return result;
}

std::vector<std::vector<std::size_t>> bucket_by_length(std::span<const std::size_t> lengths,
                                                       std::size_t max_spread,
                                                       std::size_t max_bucket) {
  if (max_bucket == 0) throw DomainError("bucket_by_length: bucket size must be >= 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> buckets;
  for (std::size_t idx : order) {
    if (buckets.empty() || buckets.back().size() >= max_bucket ||
        lengths[idx] - lengths[buckets.back().front()] > max_spread) {
      buckets.emplace_back();
    }
    buckets.back().push_back(idx);
  }
  return buckets;
}

}  // namespace pabdm
