// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

// Times the serial reference kernels against the OpenMP ones and a full
// PPC decode. Set PABDM_THREADS to cap the OpenMP team.
//
//   bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <random>
#include <vector>

#include "pabdm/kernels.hpp"
#include "pabdm/ppc_decoder.hpp"
#include "pabdm/tiny_transformer.hpp"

using namespace pabdm;
namespace k = pabdm::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <class F>
double time_ms(int repeats, F&& f) {
  f();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) f();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void row(const char* name, double ref_ms, double omp_ms, bool same) {
  std::printf("%-28s %10.3f %10.3f %8.2fx  %s\n", name, ref_ms, omp_ms, ref_ms / omp_ms,
              same ? "bitwise-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("PABDM_THREADS")) k::set_max_threads(std::atoi(env));
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
  std::mt19937_64 rng(7);
  std::printf("threads: %d, repeats: %d\n", k::max_threads(), repeats);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "ref ms", "omp ms", "speedup");

  for (std::size_t rows : {64, 512}) {
    const std::size_t in = 256, out = 256;
    const auto x = random_vec(rows * in, rng);
    const auto w = random_vec(in * out, rng);
    const auto b = random_vec(out, rng);
    std::vector<float> y1(rows * out), y2(rows * out);
    const double r = time_ms(repeats, [&] { k::reference::linear(x, w, b, y1, rows, in, out); });
    const double o = time_ms(repeats, [&] { k::omp::linear(x, w, b, y2, rows, in, out); });
    char name[64];
    std::snprintf(name, sizeof name, "linear %zux%zu->%zu", rows, in, out);
    row(name, r, o, std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
  }

  for (std::size_t n : {64, 256}) {
    const k::AttentionShape shape{n, n, 4, 32};
    const auto q = random_vec(n * shape.dim(), rng);
    const auto kk = random_vec(n * shape.dim(), rng);
    const auto v = random_vec(n * shape.dim(), rng);
    std::vector<std::uint8_t> vis(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) vis[i * n + j] = j <= i;
    }
    std::vector<float> o1(n * shape.dim()), o2(n * shape.dim());
    const double r = time_ms(repeats, [&] { k::reference::attention(q, kk, v, vis, shape, o1, {}); });
    const double o = time_ms(repeats, [&] { k::omp::attention(q, kk, v, vis, shape, o2, {}); });
    char name[64];
    std::snprintf(name, sizeof name, "attention n=%zu h=4 d=32", n);
    row(name, r, o, std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(float)) == 0);
  }

  // End to end: PPC with tau = 0 on a random model, so every round fills D.
  ModelConfig cfg;
  cfg.max_positions = 160;
  cfg.seed = 3;
  const TinyTransformer model(cfg);
  const TokenSeq prompt = {3, 4, 5, 6, 7, 8, 9, 10};
  StrategyConfig s;
  s.tau = 0.0;
  s.block_size = 32;
  s.max_len = 128;
  s.eos = -1;  // never stop early
  DecodeTrace trace;
  const double ms = time_ms(repeats, [&] { trace = decode(model, model.encode_prompt(prompt), s); });
  std::printf("ppc decode: %zu tokens in %zu forwards, %.3f ms, %.0f tokens/s\n",
              trace.total_committed, trace.forward_calls, ms, trace.total_committed / (ms / 1000.0));
  return 0;
}
