// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

// Dense float32 kernels used by the tiny transformer.
//
// Two implementations share one signature set:
//   kernels::reference  plain serial loops, kept as the testing baseline
//   kernels::omp        OpenMP over independent output rows / columns
//
// Every output element is produced by the same inline arithmetic in both
// versions, so results are bitwise identical regardless of thread count.
// Row-major storage throughout; "rows x cols" shapes are noted per argument.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace pabdm::kernels {

/// Fixed-order dot product with eight interleaved partial sums.
inline float dot(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

/// y += alpha * x
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct AttentionShape {
  std::size_t queries = 0;  // nq
  std::size_t keys = 0;     // nk
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t dim() const { return heads * head_dim; }
};

namespace reference {
// y[rows x out] = x[rows x in] * w[out x in]^T (+ bias[out] when non-empty)
void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
            std::span<float> y, std::size_t rows, std::size_t in, std::size_t out);
// dx[rows x in] += dy[rows x out] * w[out x in]
void linear_grad_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                       std::size_t rows, std::size_t in, std::size_t out);
// dw[out x in] += dy^T * x; dbias[out] += column sums of dy (skipped when empty)
void linear_grad_weight(std::span<const float> dy, std::span<const float> x, std::span<float> dw,
                        std::span<float> dbias, std::size_t rows, std::size_t in,
                        std::size_t out);
// Masked multi-head attention. q[nq x dim], k/v[nk x dim], visible[nq x nk].
// Writes out[nq x dim]; when probs is non-empty also stores the softmax
// weights probs[heads x nq x nk], zero at invisible keys.
void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               std::span<const std::uint8_t> visible, const AttentionShape& shape,
               std::span<float> out, std::span<float> probs);
// Accumulates attention gradients into dq/dk/dv from the stored probs.
void attention_backward(std::span<const float> dout, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, const AttentionShape& shape,
                        std::span<float> dq, std::span<float> dk, std::span<float> dv);
}  // namespace reference

namespace omp {
// y[rows x out] = x[rows x in] * w[out x in]^T (+ bias[out] when non-empty)
void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
            std::span<float> y, std::size_t rows, std::size_t in, std::size_t out);
// dx[rows x in] += dy[rows x out] * w[out x in]
void linear_grad_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                       std::size_t rows, std::size_t in, std::size_t out);
// dw[out x in] += dy^T * x; dbias[out] += column sums of dy (skipped when empty)
void linear_grad_weight(std::span<const float> dy, std::span<const float> x, std::span<float> dw,
                        std::span<float> dbias, std::size_t rows, std::size_t in,
                        std::size_t out);
// Masked multi-head attention. q[nq x dim], k/v[nk x dim], visible[nq x nk].
// Writes out[nq x dim]; when probs is non-empty also stores the softmax
// weights probs[heads x nq x nk], zero at invisible keys.
void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               std::span<const std::uint8_t> visible, const AttentionShape& shape,
               std::span<float> out, std::span<float> probs);
// Accumulates attention gradients into dq/dk/dv from the stored probs.
void attention_backward(std::span<const float> dout, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, const AttentionShape& shape,
                        std::span<float> dq, std::span<float> dk, std::span<float> dv);
}  // namespace omp

/// Number of worker threads the omp kernels will use.
int max_threads();
/// Caps worker threads (no-op without OpenMP).
void set_max_threads(int n);

}  // namespace pabdm::kernels
