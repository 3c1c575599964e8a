// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pabdm::kernels {
namespace {

// Per-element bodies shared by both implementations. The omp versions only
// distribute the outer loop; the arithmetic inside each element is identical.

inline void linear_row(const float* x, std::span<const float> w, std::span<const float> bias,
                       float* y, std::size_t in, std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    float acc = dot(x, w.data() + o * in, in);
    if (!bias.empty()) acc += bias[o];
    y[o] = acc;
  }
}

inline void grad_input_row(const float* dy, std::span<const float> w, float* dx, std::size_t in,
                           std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) axpy(dy[o], w.data() + o * in, dx, in);
}

inline void grad_weight_row(std::span<const float> dy, std::span<const float> x, float* dw,
                            float* db, std::size_t o, std::size_t rows, std::size_t in,
                            std::size_t out) {
  float bsum = 0.0f;
  for (std::size_t r = 0; r < rows; ++r) {
    const float g = dy[r * out + o];
    bsum += g;
    if (g != 0.0f) axpy(g, x.data() + r * in, dw, in);
  }
  if (db != nullptr) *db += bsum;
}

inline void attention_row(std::span<const float> q, std::span<const float> k,
                          std::span<const float> v, std::span<const std::uint8_t> visible,
                          const AttentionShape& s, std::span<float> out, std::span<float> probs,
                          std::size_t h, std::size_t i, float* scratch) {
  const std::size_t dim = s.dim();
  const std::size_t hd = s.head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const float* qi = q.data() + i * dim + h * hd;
  const std::uint8_t* vis = visible.data() + i * s.keys;

  float mx = -std::numeric_limits<float>::infinity();
  for (std::size_t j = 0; j < s.keys; ++j) {
    if (!vis[j]) continue;
    const float sc = dot(qi, k.data() + j * dim + h * hd, hd) * scale;
    scratch[j] = sc;
    if (sc > mx) mx = sc;
  }
  float denom = 0.0f;
  for (std::size_t j = 0; j < s.keys; ++j) {
    if (!vis[j]) continue;
    scratch[j] = std::exp(scratch[j] - mx);
    denom += scratch[j];
  }
  float* oi = out.data() + i * dim + h * hd;
  for (std::size_t c = 0; c < hd; ++c) oi[c] = 0.0f;
  float* prow = probs.empty() ? nullptr : probs.data() + (h * s.queries + i) * s.keys;
  for (std::size_t j = 0; j < s.keys; ++j) {
    if (!vis[j]) {
      if (prow) prow[j] = 0.0f;
      continue;
    }
    const float p = scratch[j] / denom;
    if (prow) prow[j] = p;
    axpy(p, v.data() + j * dim + h * hd, oi, hd);
  }
}

inline void attention_backward_head(std::span<const float> dout, std::span<const float> q,
                                    std::span<const float> k, std::span<const float> v,
                                    std::span<const float> probs, const AttentionShape& s,
                                    std::span<float> dq, std::span<float> dk,
                                    std::span<float> dv, std::size_t h, float* dp) {
  const std::size_t dim = s.dim();
  const std::size_t hd = s.head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (std::size_t i = 0; i < s.queries; ++i) {
    const float* prow = probs.data() + (h * s.queries + i) * s.keys;
    const float* doi = dout.data() + i * dim + h * hd;
    float weighted = 0.0f;
    for (std::size_t j = 0; j < s.keys; ++j) {
      if (prow[j] == 0.0f) {
        dp[j] = 0.0f;
        continue;
      }
      dp[j] = dot(doi, v.data() + j * dim + h * hd, hd);
      weighted += prow[j] * dp[j];
    }
    const float* qi = q.data() + i * dim + h * hd;
    float* dqi = dq.data() + i * dim + h * hd;
    for (std::size_t j = 0; j < s.keys; ++j) {
      if (prow[j] == 0.0f) continue;
      const float ds = prow[j] * (dp[j] - weighted) * scale;
      axpy(ds, k.data() + j * dim + h * hd, dqi, hd);
      axpy(ds, qi, dk.data() + j * dim + h * hd, hd);
      axpy(prow[j], doi, dv.data() + j * dim + h * hd, hd);
    }
  }
}

}  // namespace

namespace reference {

void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
            std::span<float> y, std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) linear_row(x.data() + r * in, w, bias, y.data() + r * out, in, out);
}

void linear_grad_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                       std::size_t rows, std::size_t in, std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) grad_input_row(dy.data() + r * out, w, dx.data() + r * in, in, out);
}

void linear_grad_weight(std::span<const float> dy, std::span<const float> x, std::span<float> dw,
                        std::span<float> dbias, std::size_t rows, std::size_t in,
                        std::size_t out) {
  for (std::size_t o = 0; o < out; ++o) {
    grad_weight_row(dy, x, dw.data() + o * in, dbias.empty() ? nullptr : dbias.data() + o, o,
                    rows, in, out);
  }
}

void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               std::span<const std::uint8_t> visible, const AttentionShape& shape,
               std::span<float> out, std::span<float> probs) {
  std::vector<float> scratch(shape.keys);
  for (std::size_t h = 0; h < shape.heads; ++h) {
    for (std::size_t i = 0; i < shape.queries; ++i) {
      attention_row(q, k, v, visible, shape, out, probs, h, i, scratch.data());
    }
  }
}

void attention_backward(std::span<const float> dout, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, const AttentionShape& shape,
                        std::span<float> dq, std::span<float> dk, std::span<float> dv) {
  std::vector<float> dp(shape.keys);
  for (std::size_t h = 0; h < shape.heads; ++h) {
    attention_backward_head(dout, q, k, v, probs, shape, dq, dk, dv, h, dp.data());
  }
}

}  // namespace reference

namespace omp {

void linear(std::span<const float> x, std::span<const float> w, std::span<const float> bias,
            std::span<float> y, std::size_t rows, std::size_t in, std::size_t out) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * out * in > 32768)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    linear_row(x.data() + r * in, w, bias, y.data() + r * out, in, out);
  }
}

void linear_grad_input(std::span<const float> dy, std::span<const float> w, std::span<float> dx,
                       std::size_t rows, std::size_t in, std::size_t out) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * out * in > 32768)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    grad_input_row(dy.data() + r * out, w, dx.data() + r * in, in, out);
  }
}

void linear_grad_weight(std::span<const float> dy, std::span<const float> x, std::span<float> dw,
                        std::span<float> dbias, std::size_t rows, std::size_t in,
                        std::size_t out) {
  const auto n = static_cast<std::ptrdiff_t>(out);
#pragma omp parallel for schedule(static) if (rows * out * in > 32768)
  for (std::ptrdiff_t o = 0; o < n; ++o) {
    grad_weight_row(dy, x, dw.data() + o * in, dbias.empty() ? nullptr : dbias.data() + o,
                    static_cast<std::size_t>(o), rows, in, out);
  }
}

void attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
               std::span<const std::uint8_t> visible, const AttentionShape& shape,
               std::span<float> out, std::span<float> probs) {
  const auto total = static_cast<std::ptrdiff_t>(shape.heads * shape.queries);
#pragma omp parallel if (shape.queries * shape.keys * shape.dim() > 32768)
  {
    std::vector<float> scratch(shape.keys);
#pragma omp for schedule(static)
    for (std::ptrdiff_t t = 0; t < total; ++t) {
      const auto h = static_cast<std::size_t>(t) / shape.queries;
      const auto i = static_cast<std::size_t>(t) % shape.queries;
      attention_row(q, k, v, visible, shape, out, probs, h, i, scratch.data());
    }
  }
}

void attention_backward(std::span<const float> dout, std::span<const float> q,
                        std::span<const float> k, std::span<const float> v,
                        std::span<const float> probs, const AttentionShape& shape,
                        std::span<float> dq, std::span<float> dk, std::span<float> dv) {
  const auto heads = static_cast<std::ptrdiff_t>(shape.heads);
#pragma omp parallel if (shape.queries * shape.keys * shape.dim() > 32768)
  {
    std::vector<float> dp(shape.keys);
#pragma omp for schedule(static)
    for (std::ptrdiff_t h = 0; h < heads; ++h) {
      attention_backward_head(dout, q, k, v, probs, shape, dq, dk, dv,
                              static_cast<std::size_t>(h), dp.data());
    }
  }
}

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_max_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace pabdm::kernels
