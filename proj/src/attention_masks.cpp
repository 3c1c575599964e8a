// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/attention_masks.hpp"

#include <utility>

namespace pabdm {

const char* to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::BDM: return "BDM";
    case MaskKind::PA: return "PA";
    case MaskKind::ConcatTrain: return "ConcatTrain";
    case MaskKind::FullCausal: return "FullCausal";
    case MaskKind::DecodeStep: return "DecodeStep";
  }
  return "?";
}

MaskSpec::MaskSpec(std::size_t size, MaskKind kind, Predicate visible)
    : size_(size), kind_(kind), visible_(std::move(visible)) {}

bool MaskSpec::visible(std::size_t q, std::size_t k) const {
  if (q >= size_ || k >= size_) throw DomainError("MaskSpec::visible: index out of range");
  return visible_(q, k);
}

MaskMatrix MaskSpec::materialize() const {
  MaskMatrix m;
  m.size = size_;
  m.cells.resize(size_ * size_);
  for (std::size_t q = 0; q < size_; ++q) {
    for (std::size_t k = 0; k < size_; ++k) m.cells[q * size_ + k] = visible_(q, k) ? 1 : 0;
  }
  return m;
}

MaskSpec bdm_mask(const BlockLayout& layout) {
  return MaskSpec(layout.l(), MaskKind::BDM, [layout](std::size_t q, std::size_t k) {
    return layout.block_index(k + 1) <= layout.block_index(q + 1);
  });
}

MaskSpec pa_mask(const BlockLayout& layout) {
  return MaskSpec(layout.l(), MaskKind::PA, [layout](std::size_t q, std::size_t k) {
    const std::size_t bq = layout.block_index(q + 1);
    const std::size_t bk = layout.block_index(k + 1);
    return bk < bq || (bk == bq && k <= q);
  });
}

MaskSpec causal_mask(std::size_t size) {
  return MaskSpec(size, MaskKind::FullCausal, [](std::size_t q, std::size_t k) { return k <= q; });
}

MaskSpec concat_train_mask(const ConcatLayout& concat, IntraBlock variant) {
  const std::size_t p = concat.prompt_len;
  const std::size_t l = concat.layout.l();
  const BlockLayout layout = concat.layout;
  return MaskSpec(concat.size(), MaskKind::ConcatTrain,
                  [p, l, layout, variant](std::size_t q, std::size_t k) {
                    // Prompt rows: causal over the prompt only.
                    if (q < p) return k <= q;
                    if (k < p) return true;
                    const bool q_noisy = q < p + l;
                    const bool k_noisy = k < p + l;
                    const std::size_t qi = (q_noisy ? q - p : q - p - l) + 1;
                    const std::size_t ki = (k_noisy ? k - p : k - p - l) + 1;
                    if (!q_noisy) {
                      // Clean rows never see the noisy branch.
                      return !k_noisy && ki <= qi;
                    }
                    const std::size_t bq = layout.block_index(qi);
                    const std::size_t bk = layout.block_index(ki);
                    if (!k_noisy) return bk < bq;
                    if (bk != bq) return false;
                    return variant == IntraBlock::Bidirectional || ki <= qi;
                  });
}

MaskSpec decode_step_mask(std::size_t prefix_len, std::size_t candidate_len,
                          IntraBlock candidates) {
  if (candidates == IntraBlock::Causal) {
    return MaskSpec(prefix_len + candidate_len, MaskKind::DecodeStep,
                    [](std::size_t q, std::size_t k) { return k <= q; });
  }
  return MaskSpec(prefix_len + candidate_len, MaskKind::DecodeStep,
                  [prefix_len](std::size_t q, std::size_t k) {
                    if (q < prefix_len) return k <= q;
                    return true;
                  });
}

std::string to_text_grid(const MaskSpec& mask) {
  std::string out;
  out.reserve(mask.size() * (mask.size() + 1));
  for (std::size_t q = 0; q < mask.size(); ++q) {
    for (std::size_t k = 0; k < mask.size(); ++k) out.push_back(mask.visible(q, k) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

}  // namespace pabdm
