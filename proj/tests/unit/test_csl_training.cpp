// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pabdm/csl_training.hpp"

using namespace pabdm;

namespace {

ModelConfig small_model(std::uint64_t seed, std::size_t max_positions = 40) {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.max_positions = max_positions;
  c.seed = seed;
  return c;
}

TokenSeq random_response(std::mt19937_64& rng, std::size_t len) {
  std::uniform_int_distribution<Token> tok(3, 11);
  TokenSeq r(len);
  for (auto& t : r) t = tok(rng);
  r.back() = kEosToken;
  return r;
}

TrainingBatch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t d,
                           std::size_t max_len = 10) {
  TrainingBatch batch;
  std::uniform_int_distribution<std::size_t> len(2, max_len);
  for (std::size_t e = 0; e < b; ++e) {
    const TokenSeq prompt = random_response(rng, 3);
    const TokenSeq resp = random_response(rng, len(rng));
    const auto starts = sample_suffix_starts(make_layout(resp.size(), d), rng);
    batch.examples.push_back(make_training_example(prompt, resp, d, starts));
  }
  return batch;
}

// Gold-token probability at every noisy-branch row, from an independent forward.
std::vector<double> gold_probs(const TinyTransformer& m, const TrainingExample& ex,
                               IntraBlock variant) {
  const auto acts = m.forward_train(ex.tokens, ex.positions,
                                    concat_train_mask(ex.concat, variant).materialize());
  const std::size_t v = m.vocab_size();
  std::vector<double> q(ex.clean.size());
  for (std::size_t i = 1; i <= ex.clean.size(); ++i) {
    const std::size_t row = ex.concat.prompt_len + i - 1;
    const auto p = softmax({acts.logits.data() + row * v, v});
    q[i - 1] = p[static_cast<std::size_t>(ex.clean[i - 1])];
  }
  return q;
}

}  // namespace

TEST_CASE("gating examples") {
  auto p = gate_supervision(std::vector<double>{0.99, 0.97, 0.90, 0.99}, 1, 0.95);
  CHECK(p.frontier == 3);
  CHECK(p.supervised == std::vector<std::size_t>{1, 2, 3});
  p = gate_supervision(std::vector<double>{0.4, 0.99}, 3, 0.95);
  CHECK(p.frontier == 3);
  CHECK(p.supervised == std::vector<std::size_t>{3});
  p = gate_supervision(std::vector<double>{0.96, 0.99}, 7, 0.95);
  CHECK_FALSE(p.frontier);
  CHECK(p.supervised == std::vector<std::size_t>{7, 8});
  p = gate_supervision(std::vector<double>{0.1, 0.2, 0.3}, 2, 0.0);
  CHECK(p.supervised.size() == 3);
  const std::vector<std::size_t> gaps = {2, 5, 6};
  p = gate_supervision(std::vector<double>{0.99, 0.5, 0.99}, gaps, 0.95);
  CHECK(p.supervised == std::vector<std::size_t>{2, 5});
  CHECK_THROWS_AS(gate_supervision(std::vector<double>{1.2}, 1, 0.5), DomainError);
  CHECK_THROWS_AS(gate_supervision(std::vector<double>{0.5}, 0, 0.5), DomainError);
}

TEST_CASE("suffix starts are uniform over 1..D") {
  const BlockLayout layout = make_layout(8, 8);
  std::mt19937_64 rng(11);
  std::vector<double> freq(9, 0.0);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) freq[sample_suffix_starts(layout, rng)[0]] += 1.0 / draws;
  CHECK(freq[0] == 0.0);
  for (std::size_t k = 1; k <= 8; ++k) CHECK(std::abs(freq[k] - 0.125) <= 0.015);
}

TEST_CASE("suffix corruption boundaries") {
  const TokenSeq prompt = {5, 6};
  const TokenSeq resp = {4, 5, 6, 7, 8, kEosToken};
  auto ex = make_training_example(prompt, resp, 4, std::vector<std::size_t>{1, 4});
  // Block 1 fully masked, block 2 masks only its last slot (a pad).
  CHECK(ex.masked[0] == std::vector<std::size_t>{1, 2, 3, 4});
  CHECK(ex.masked[1].empty());
  for (std::size_t i = 0; i < 4; ++i) CHECK(ex.tokens[2 + i] == kMaskToken);
  CHECK(ex.tokens[2 + 7] == kMaskToken);
  CHECK(ex.tokens[2 + 4] == 8);
  CHECK(ex.positions[2] == ex.positions[2 + 8]);
  CHECK(ex.positions.back() == 2 + 8 - 1);
  ex = make_training_example(prompt, resp, 4, std::vector<std::size_t>{4, 2});
  CHECK(ex.masked[0] == std::vector<std::size_t>{4});
  CHECK(ex.masked[1] == std::vector<std::size_t>{2});
  CHECK_THROWS_AS(make_training_example(prompt, resp, 4, std::vector<std::size_t>{0, 1}), DomainError);
  CHECK_THROWS_AS(make_training_example(prompt, resp, 4, std::vector<std::size_t>{1}), DomainError);
}

TEST_CASE("a single supervised position costs -ln p") {
  const TinyTransformer m(small_model(1));
  TrainingBatch batch;
  const TokenSeq prompt = {3, 4, 5};
  const TokenSeq resp = {6, 7, 8, kEosToken};
  batch.examples.push_back(make_training_example(prompt, resp, 4, std::vector<std::size_t>{4}));
  const auto r = ce_loss(m, batch);
  REQUIRE(r.supervised == 1);
  const auto q = gold_probs(m, batch.examples[0], IntraBlock::Causal);
  CHECK(r.loss == doctest::Approx(-std::log(q[3])).epsilon(1e-9));
}

TEST_CASE("B=1, D=4, u=2 supervises three positions under CE") {
  const TinyTransformer m(small_model(2));
  TrainingBatch batch;
  batch.examples.push_back(make_training_example(TokenSeq{3}, TokenSeq{6, 7, 8, kEosToken}, 4,
                                                 std::vector<std::size_t>{2}));
  const auto r = ce_loss(m, batch);
  CHECK(r.supervised == 3);
  CHECK(r.masked == 3);
  CHECK(r.supervised_ratio() == 1.0);
}

TEST_CASE("supervised sets agree with the all-earlier-confident rule") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    TinyTransformer m(small_model(seed));
    for (float& p : m.mutable_params()) p *= 3.0f;
    const TrainingBatch batch = random_batch(rng, 2, 4);
    // Thresholds near the observed confidences so the gate actually bites.
    const double tau = 0.05 + 0.3 * u(rng);
    const auto r = csl_loss(m, batch, tau);
    std::size_t expected_total = 0;
    for (std::size_t e = 0; e < 2; ++e) {
      const auto& ex = batch.examples[e];
      const auto q = gold_probs(m, ex, IntraBlock::Causal);
      const BlockLayout& layout = ex.concat.layout;
      for (std::size_t b = 1; b <= layout.b(); ++b) {
        std::vector<std::size_t> expect;
        for (std::size_t k : ex.masked[b - 1]) {
          bool ok = true;
          for (std::size_t j : ex.masked[b - 1]) {
            if (j < k && q[layout.block_start(b) + j - 2] < tau) ok = false;
          }
          if (ok) expect.push_back(k);
        }
        expected_total += expect.size();
        CHECK(r.plans[e][b - 1].supervised == expect);
      }
    }
    CHECK(r.supervised == expected_total);
  }
}

TEST_CASE("CE equals CSL at tau=0 and supervises every masked position") {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TinyTransformer m(small_model(seed));
    const TrainingBatch batch = random_batch(rng, 3, 4);
    const auto ce = ce_loss(m, batch);
    const auto csl0 = csl_loss(m, batch, 0.0);
    CHECK(ce.loss == csl0.loss);
    CHECK(ce.supervised == ce.masked);
    std::size_t masked = 0;
    for (const auto& ex : batch.examples) {
      for (const auto& mb : ex.masked) masked += mb.size();
    }
    CHECK(ce.masked == masked);
  }
}

TEST_CASE("supervised count is monotone in tau") {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TinyTransformer m(small_model(seed));
    for (float& p : m.mutable_params()) p *= 3.0f;
    const TrainingBatch batch = random_batch(rng, 2, 4);
    std::size_t prev = batch.examples.size() * 1000;
    for (double tau : {0.0, 0.05, 0.1, 0.2, 0.4, 0.8, 1.0}) {
      const auto r = csl_loss(m, batch, tau);
      CHECK(r.supervised <= prev);
      prev = r.supervised;
    }
  }
}

TEST_CASE("no gradient flows from rows outside the supervised set") {
  std::mt19937_64 rng(6);
  TinyTransformer m(small_model(7));
  for (float& p : m.mutable_params()) p *= 3.0f;
  const TrainingBatch batch = random_batch(rng, 2, 4);
  std::mt19937_64 unused(0);
  const auto r = objective_loss(m, batch, {Objective::CSL, 0.2, 1.0, true}, unused, {});
  REQUIRE_FALSE(r.degenerate);
  const std::size_t v = m.vocab_size();
  for (std::size_t e = 0; e < 2; ++e) {
    for (std::size_t row = 0; row < batch.examples[e].tokens.size(); ++row) {
      double mass = 0.0;
      for (std::size_t t = 0; t < v; ++t) mass += std::abs(r.dlogits[e][row * v + t]);
      if (r.loss_mask[e][row]) {
        CHECK(mass > 0.0);
      } else {
        CHECK(mass == 0.0);
      }
    }
  }
  // Gradient equals that of a loss restricted by hand to the same rows.
  std::vector<float> g1(m.param_count(), 0.0f), g2(m.param_count(), 0.0f);
  std::mt19937_64 r1(0);
  objective_loss(m, batch, {Objective::CSL, 0.2, 1.0, false}, r1, g1);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& ex = batch.examples[e];
    const auto acts = m.forward_train(ex.tokens, ex.positions,
                                      concat_train_mask(ex.concat, batch.variant).materialize());
    m.backward(acts, r.dlogits[e], g2);
  }
  for (std::size_t j = 0; j < g1.size(); ++j) CHECK(g1[j] == doctest::Approx(g2[j]).epsilon(1e-5));
}

TEST_CASE("random drop keeps about keep_ratio of the masked positions") {
  std::mt19937_64 rng(8);
  const TinyTransformer m(small_model(9, 64));
  const TrainingBatch batch = random_batch(rng, 8, 8, 24);
  std::mt19937_64 drop(10);
  std::size_t kept = 0, total = 0;
  for (int t = 0; t < 40; ++t) {
    const auto r = random_drop_loss(m, batch, 0.5, drop);
    kept += r.supervised;
    total += r.masked;
  }
  CHECK(total > 2000);
  CHECK(std::abs(static_cast<double>(kept) / total - 0.5) <= 0.02);
  std::mt19937_64 d2(1);
  const auto all = random_drop_loss(m, batch, 1.0, d2);
  const auto ce = ce_loss(m, batch);
  CHECK(all.supervised == ce.supervised);
  CHECK(all.loss == ce.loss);
  CHECK_THROWS_AS(random_drop_loss(m, batch, 0.0, d2), DomainError);
}

TEST_CASE("supervised ratio") {
  SupervisionPlan a, b;
  a.masked = {1, 2, 3, 4};
  a.supervised = {1};
  b.masked = {2, 3};
  b.supervised = {2, 3};
  const std::vector<SupervisionPlan> plans = {a, b};
  CHECK(supervised_ratio(plans) == doctest::Approx(0.5));
  CHECK_THROWS_AS(supervised_ratio(std::span<const SupervisionPlan>{}), DomainError);
}

TEST_CASE("a batch with nothing masked is degenerate") {
  const TinyTransformer m(small_model(1));
  TrainingBatch batch;
  // Only the pad slot of the last block is masked.
  batch.examples.push_back(make_training_example(TokenSeq{3}, TokenSeq{6, 7, kEosToken}, 4,
                                                 std::vector<std::size_t>{4}));
  const auto r = ce_loss(m, batch);
  CHECK(r.degenerate);
  CHECK(r.supervised == 0);
}

TEST_CASE("block-noise corruption masks only valid positions it reports") {
  std::mt19937_64 rng(12);
  const TokenSeq resp = {4, 5, 6, 7, 8, kEosToken};
  for (int t = 0; t < 50; ++t) {
    const auto ex = make_block_noise_example(TokenSeq{3}, resp, 4, rng);
    for (std::size_t b = 0; b < ex.masked.size(); ++b) {
      for (std::size_t k : ex.masked[b]) CHECK(ex.tokens[1 + b * 4 + k - 1] == kMaskToken);
    }
  }
}

TEST_CASE("Adam matches a hand-computed first step") {
  Adam opt(2, 0.1);
  std::vector<float> p = {1.0f, -1.0f};
  const std::vector<float> g = {0.5f, -2.0f};
  opt.step(p, g);
  // Bias-corrected first step moves each parameter by lr * sign(g).
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-0.9));
  CHECK(opt.steps() == 1);
  CHECK_THROWS_AS(opt.step(p, std::vector<float>{1.0f}), DomainError);
}

TEST_CASE("training is deterministic and logs one line per step") {
  TrainConfig c;
  c.block_size = 4;
  c.steps = 3;
  c.batch_size = 2;
  c.model = model_config_for(c.task, c.block_size, 1);
  c.model.embed_dim = 16;
  c.model.num_heads = 2;
  c.seed = 5;
  std::vector<std::string> lines;
  const auto a = train(c, [&](const StepLog& l) { lines.push_back(to_json_line(l)); });
  const auto b = train(c);
  CHECK(a.model.checksum() == b.model.checksum());
  CHECK(a.log.size() == 3);
  REQUIRE(lines.size() == 3);
  const auto j = nlohmann::json::parse(lines[0]);
  CHECK(j["step"] == 1);
  CHECK(j["objective"] == "CSL");
  CHECK(j.contains("supervised_ratio"));
  c.objective = Objective::CE;
  CHECK(train(c).model.checksum() != a.model.checksum());
  c.tau = 0.0;
  CHECK_THROWS_AS(train(c), DomainError);
}

TEST_CASE("objective names") {
  CHECK(parse_objective("random") == Objective::Random);
  CHECK(std::string(to_string(Objective::CE)) == "CE");
  CHECK(parse_corruption("block-noise") == Corruption::BlockNoise);
  CHECK_THROWS_AS(parse_objective("mse"), DomainError);
}
