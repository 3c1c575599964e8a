// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/csl_training.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

namespace pabdm {

const char* to_string(Objective o) {
  switch (o) {
    case Objective::CSL: return "CSL";
    case Objective::CE: return "CE";
    case Objective::Random: return "Random";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  if (name == "CSL" || name == "csl") return Objective::CSL;
  if (name == "CE" || name == "ce") return Objective::CE;
  if (name == "Random" || name == "random") return Objective::Random;
  throw DomainError("unknown objective: " + name);
}

const char* to_string(Corruption c) {
  return c == Corruption::Suffix ? "suffix" : "block-noise";
}

Corruption parse_corruption(const std::string& name) {
  if (name == "suffix") return Corruption::Suffix;
  if (name == "block-noise" || name == "block_noise") return Corruption::BlockNoise;
  throw DomainError("unknown corruption mode: " + name);
}

SupervisionPlan gate_supervision(std::span<const double> confidences,
                                 std::span<const std::size_t> masked, double tau) {
  if (confidences.size() != masked.size()) {
    throw DomainError("gate_supervision: one confidence per masked offset required");
  }
  SupervisionPlan plan;
  plan.masked.assign(masked.begin(), masked.end());
  plan.confidences.assign(confidences.begin(), confidences.end());
  plan.suffix_start = masked.empty() ? 0 : masked.front();
  for (std::size_t j = 0; j < confidences.size(); ++j) {
    const double q = confidences[j];
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("gate_supervision: confidence outside [0, 1]");
  }
  for (std::size_t j = 0; j < confidences.size(); ++j) {
    plan.supervised.push_back(masked[j]);
    if (confidences[j] < tau) {
      plan.frontier = masked[j];
      break;
    }
  }
  return plan;
}

SupervisionPlan gate_supervision(std::span<const double> confidences, std::size_t suffix_start,
                                 double tau) {
  if (suffix_start == 0) throw DomainError("gate_supervision: suffix start is 1-based");
  std::vector<std::size_t> masked(confidences.size());
  for (std::size_t j = 0; j < masked.size(); ++j) masked[j] = suffix_start + j;
  return gate_supervision(confidences, masked, tau);
}

std::vector<std::size_t> sample_suffix_starts(const BlockLayout& layout, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(1, layout.d());
  std::vector<std::size_t> out(layout.b());
  for (auto& u : out) u = pick(rng);
  return out;
}

double supervised_ratio(std::span<const SupervisionPlan> plans) {
  std::size_t sup = 0;
  std::size_t total = 0;
  for (const auto& p : plans) {
    sup += p.supervised.size();
    total += p.masked.size();
  }
  if (total == 0) throw DomainError("supervised_ratio: no masked positions");
  return static_cast<double>(sup) / static_cast<double>(total);
}

double LossResult::supervised_ratio() const {
  return masked == 0 ? 0.0 : static_cast<double>(supervised) / static_cast<double>(masked);
}

namespace {

TrainingExample concat_example(std::span<const Token> prompt, std::span<const Token> response,
                               const BlockLayout& layout, const TokenSeq& noisy) {
  TrainingExample ex{ConcatLayout{layout, prompt.size()}, {}, {}, {}, {}, {}};
  ex.clean = pad_to_layout(response, layout);
  ex.tokens.assign(prompt.begin(), prompt.end());
  ex.tokens.insert(ex.tokens.end(), noisy.begin(), noisy.end());
  ex.tokens.insert(ex.tokens.end(), ex.clean.begin(), ex.clean.end());
  const std::size_t p = prompt.size();
  for (std::size_t j = 0; j < p; ++j) ex.positions.push_back(j);
  for (int branch = 0; branch < 2; ++branch) {
    for (std::size_t i = 1; i <= layout.l(); ++i) ex.positions.push_back(p + i - 1);
  }
  return ex;
}

}  // namespace

TrainingExample make_training_example(std::span<const Token> prompt,
                                      std::span<const Token> response, std::size_t block_size,
                                      std::span<const std::size_t> suffix_starts) {
  const BlockLayout layout = make_layout(response.size(), block_size);
  if (suffix_starts.size() != layout.b()) {
    throw DomainError("make_training_example: one suffix start per block required");
  }
  TokenSeq noisy = pad_to_layout(response, layout);
  std::vector<std::vector<std::size_t>> masked(layout.b());
  for (std::size_t b = 1; b <= layout.b(); ++b) {
    const std::size_t u = suffix_starts[b - 1];
    if (u < 1 || u > block_size) throw DomainError("make_training_example: suffix start outside [1, D]");
    for (std::size_t k = u; k <= block_size; ++k) {
      const std::size_t i = layout.block_start(b) + k - 1;
      noisy[i - 1] = kMaskToken;
      if (!layout.is_pad(i)) masked[b - 1].push_back(k);
    }
  }
  TrainingExample ex = concat_example(prompt, response, layout, noisy);
  ex.masked = std::move(masked);
  ex.suffix_starts.assign(suffix_starts.begin(), suffix_starts.end());
  return ex;
}

TrainingExample make_block_noise_example(std::span<const Token> prompt,
                                         std::span<const Token> response,
                                         std::size_t block_size, std::mt19937_64& rng) {
  const BlockLayout layout = make_layout(response.size(), block_size);
  const NoisySequence noise = apply_block_noise(pad_to_layout(response, layout), layout, rng);
  std::vector<std::vector<std::size_t>> masked(layout.b());
  for (std::size_t i = 1; i <= layout.n(); ++i) {
    if (!noise.mask_flags[i - 1]) continue;
    const std::size_t b = layout.block_index(i);
    masked[b - 1].push_back(i - layout.block_start(b) + 1);
  }
  TrainingExample ex = concat_example(prompt, response, layout, noise.noisy);
  ex.masked = std::move(masked);
  ex.suffix_starts.assign(layout.b(), 0);
  return ex;
}

LossResult objective_loss(const TinyTransformer& model, const TrainingBatch& batch,
                          const LossOptions& options, std::mt19937_64& rng,
                          std::span<float> grad) {
  if (options.objective == Objective::Random &&
      !(options.keep_ratio > 0.0 && options.keep_ratio <= 1.0)) {
    throw DomainError("random_drop_loss: keep ratio must lie in (0, 1]");
  }
  if (!grad.empty() && grad.size() != model.param_count()) {
    throw DomainError("objective_loss: gradient buffer size mismatch");
  }
  const std::size_t n = batch.examples.size();
  const std::size_t vocab = model.vocab_size();
  std::vector<TrainingActivations> acts(n);

  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t e = 0; e < count; ++e) {
    const TrainingExample& ex = batch.examples[static_cast<std::size_t>(e)];
    const MaskMatrix mask = concat_train_mask(ex.concat, batch.variant).materialize();
    acts[static_cast<std::size_t>(e)] = model.forward_train(ex.tokens, ex.positions, mask);
  }

  // Gating reads the gold-token probability from the same forward; it only
  // selects rows and never enters the gradient.
  LossResult res;
  res.plans.resize(n);
  res.loss_mask.resize(n);
  std::bernoulli_distribution keep(options.objective == Objective::Random ? options.keep_ratio : 1.0);
  for (std::size_t e = 0; e < n; ++e) {
    const TrainingExample& ex = batch.examples[e];
    const BlockLayout& layout = ex.concat.layout;
    res.loss_mask[e].assign(ex.tokens.size(), 0);
    for (std::size_t b = 1; b <= layout.b(); ++b) {
      const auto& masked = ex.masked[b - 1];
      std::vector<double> q(masked.size());
      for (std::size_t j = 0; j < masked.size(); ++j) {
        const std::size_t i = layout.block_start(b) + masked[j] - 1;
        const std::size_t row = ex.concat.noisy_index(i);
        q[j] = token_confidence({acts[e].logits.data() + row * vocab, vocab}, ex.clean[i - 1]);
      }
      SupervisionPlan plan;
      switch (options.objective) {
        case Objective::CSL:
          plan = gate_supervision(q, masked, options.tau);
          break;
        case Objective::CE:
          plan = gate_supervision(q, masked, 0.0);
          break;
        case Objective::Random:
          plan = gate_supervision(q, masked, 0.0);
          plan.supervised.clear();
          for (std::size_t k : masked) {
            if (keep(rng)) plan.supervised.push_back(k);
          }
          break;
      }
      plan.block = b;
      plan.suffix_start = ex.suffix_starts[b - 1];
      for (std::size_t k : plan.supervised) {
        const std::size_t i = layout.block_start(b) + k - 1;
        res.loss_mask[e][ex.concat.noisy_index(i)] = 1;
      }
      res.supervised += plan.supervised.size();
      res.masked += masked.size();
      res.plans[e].push_back(std::move(plan));
    }
  }
  if (res.supervised == 0) {
    res.degenerate = true;
    return res;
  }

  const double inv = 1.0 / static_cast<double>(res.supervised);
  std::vector<std::vector<float>> dlogits(n);
  for (std::size_t e = 0; e < n; ++e) {
    const TrainingExample& ex = batch.examples[e];
    const std::size_t rows = ex.tokens.size();
    dlogits[e].assign(rows * vocab, 0.0f);
    for (std::size_t row = 0; row < rows; ++row) {
      if (!res.loss_mask[e][row]) continue;
      const std::size_t i = row - ex.concat.prompt_len + 1;
      const auto gold = static_cast<std::size_t>(ex.clean[i - 1]);
      const std::vector<double> p = softmax({acts[e].logits.data() + row * vocab, vocab});
      res.loss -= std::log(std::max(p[gold], 1e-300)) * inv;
      for (std::size_t t = 0; t < vocab; ++t) {
        const double g = (p[t] - (t == gold ? 1.0 : 0.0)) * inv;
        dlogits[e][row * vocab + t] = static_cast<float>(g);
      }
    }
  }

  if (!grad.empty()) {
    std::vector<std::vector<float>> partial(n);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t e = 0; e < count; ++e) {
      const auto idx = static_cast<std::size_t>(e);
      partial[idx].assign(model.param_count(), 0.0f);
      model.backward(acts[idx], dlogits[idx], partial[idx]);
    }
    for (std::size_t e = 0; e < n; ++e) {
      for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += partial[e][j];
    }
  }
  if (options.keep_dlogits) res.dlogits = std::move(dlogits);
  return res;
}

LossResult csl_loss(const TinyTransformer& model, const TrainingBatch& batch, double tau,
                    std::span<float> grad) {
  std::mt19937_64 unused(0);
  return objective_loss(model, batch, {Objective::CSL, tau, 1.0, false}, unused, grad);
}

LossResult ce_loss(const TinyTransformer& model, const TrainingBatch& batch,
                   std::span<float> grad) {
  std::mt19937_64 unused(0);
  return objective_loss(model, batch, {Objective::CE, 0.0, 1.0, false}, unused, grad);
}

LossResult random_drop_loss(const TinyTransformer& model, const TrainingBatch& batch,
                            double keep_ratio, std::mt19937_64& rng, std::span<float> grad) {
  return objective_loss(model, batch, {Objective::Random, 0.0, keep_ratio, false}, rng, grad);
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<float> params, std::span<const float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw DomainError("Adam: buffer size mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double step = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    params[i] = static_cast<float>(params[i] - step);
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (block_size == 0) throw DomainError("train: block size must be >= 1");
  if (steps == 0 || batch_size == 0) throw DomainError("train: steps and batch size must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("train: tau must lie in (0, 1]");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw DomainError("train: keep ratio must lie in (0, 1]");
  if (!(lr > 0.0)) throw DomainError("train: learning rate must be positive");
}

std::string to_json_line(const StepLog& log) {
  nlohmann::ordered_json j;
  j["step"] = log.step;
  j["objective"] = to_string(log.objective);
  j["tau"] = log.tau;
  j["loss"] = log.loss;
  j["supervised_ratio"] = log.supervised_ratio;
  j["skipped"] = log.skipped;
  return j.dump();
}

ModelConfig model_config_for(const GrammarTask& task, std::size_t block_size,
                             std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab::kSize;
  const std::size_t padded = make_layout(task.max_response(), block_size).l();
  c.max_positions = task.prompt_len() + std::max(padded, task.max_response() + block_size);
  c.seed = seed;
  return c;
}

TrainResult train(const TrainConfig& config, const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  const GrammarTask& task = config.task;
  TinyTransformer model(config.model);
  Adam opt(model.param_count(), config.lr);
  std::mt19937_64 data_rng(config.seed);
  std::mt19937_64 drop_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const LossOptions options{config.objective, config.tau, config.keep_ratio, false};

  TrainResult out{std::move(model), {}};
  TinyTransformer& m = out.model;
  std::vector<float> grad(m.param_count());
  for (std::size_t step = 1; step <= config.steps; ++step) {
    TrainingBatch batch;
    batch.variant = config.variant;
    for (std::size_t e = 0; e < config.batch_size; ++e) {
      const Example ex = task.generate(data_rng);
      TokenSeq response = ex.target;
      response.push_back(kEosToken);
      if (config.corruption == Corruption::Suffix) {
        const BlockLayout layout = make_layout(response.size(), config.block_size);
        const auto starts = sample_suffix_starts(layout, data_rng);
        batch.examples.push_back(make_training_example(ex.prompt, response, config.block_size, starts));
      } else {
        batch.examples.push_back(make_block_noise_example(ex.prompt, response, config.block_size, data_rng));
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0f);
    const LossResult res = objective_loss(m, batch, options, drop_rng, grad);

    StepLog log{step, config.objective, config.tau, res.loss, res.supervised_ratio(), res.degenerate};
    if (!res.degenerate) {
      double norm = 0.0;
      for (float g : grad) norm += static_cast<double>(g) * g;
      norm = std::sqrt(norm);
      if (config.clip_norm > 0.0 && norm > config.clip_norm) {
        const auto scale = static_cast<float>(config.clip_norm / norm);
        for (float& g : grad) g *= scale;
      }
      opt.step(m.mutable_params(), grad);
    }
    if (on_step) on_step(log);
    out.log.push_back(log);
  }
  return out;
}

}  // namespace pabdm
