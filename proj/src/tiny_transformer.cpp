// Copyright 2026 The pabdm Authors.
// SPDX-License-Identifier: Apache-2.0

#include "pabdm/tiny_transformer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "pabdm/kernels.hpp"

namespace pabdm {
namespace {

namespace kx = kernels::omp;

constexpr float kNormEps = 1e-5f;
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)

// y = x / rms(x) * gain, row by row; stores 1/rms per row.
void rmsnorm(std::span<const float> x, std::span<const float> gain, std::span<float> y,
             std::span<float> inv_rms, std::size_t rows, std::size_t dim) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * dim;
    const float ms = kernels::dot(xr, xr, dim) / static_cast<float>(dim);
    const float s = 1.0f / std::sqrt(ms + kNormEps);
    if (!inv_rms.empty()) inv_rms[r] = s;
    float* yr = y.data() + r * dim;
    for (std::size_t c = 0; c < dim; ++c) yr[c] = xr[c] * s * gain[c];
  }
}

// Accumulates into dx and dgain.
void rmsnorm_backward(std::span<const float> dy, std::span<const float> x,
                      std::span<const float> gain, std::span<const float> inv_rms,
                      std::span<float> dx, std::span<float> dgain, std::size_t rows,
                      std::size_t dim) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = x.data() + r * dim;
    const float* dyr = dy.data() + r * dim;
    const float s = inv_rms[r];
    float proj = 0.0f;
    for (std::size_t c = 0; c < dim; ++c) {
      proj += gain[c] * dyr[c] * xr[c];
      dgain[c] += dyr[c] * xr[c] * s;
    }
    const float k = s * s * s * proj / static_cast<float>(dim);
    float* dxr = dx.data() + r * dim;
    for (std::size_t c = 0; c < dim; ++c) dxr[c] += s * gain[c] * dyr[c] - k * xr[c];
  }
}

inline float gelu(float u) {
  return 0.5f * u * (1.0f + std::tanh(kGeluC * (u + 0.044715f * u * u * u)));
}

inline float gelu_grad(float u) {
  const float t = std::tanh(kGeluC * (u + 0.044715f * u * u * u));
  return 0.5f * (1.0f + t) + 0.5f * u * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * 0.044715f * u * u);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size == 0 || embed_dim == 0 || num_layers == 0 || num_heads == 0 ||
      max_positions == 0) {
    throw DomainError("ModelConfig: all counts must be >= 1");
  }
  if (embed_dim % num_heads != 0) {
    throw DomainError("ModelConfig: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (vocab_size <= static_cast<std::size_t>(kEosToken)) {
    throw DomainError("ModelConfig: vocab must include the reserved MASK/PAD/EOS ids");
  }
}

CacheState LanguageModel::encode_prompt(std::span<const Token> prompt) const {
  CacheState empty;
  if (prompt.empty()) {
    // Run a zero-length forward so model-specific cache fields get shaped.
    ForwardOutput out = forward(empty, prompt, causal_mask(0), 0);
    return out.new_cache;
  }
  ForwardOutput out = forward(empty, prompt, causal_mask(prompt.size()), prompt.size());
  out.new_cache.prompt_len = prompt.size();
  return out.new_cache;
}

std::vector<double> softmax(std::span<const float> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    mx = std::max(mx, static_cast<double>(v));
  }
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

double token_confidence(std::span<const float> logits, Token token) {
  if (token < 0 || static_cast<std::size_t>(token) >= logits.size()) {
    throw DomainError("token_confidence: token id outside the vocabulary");
  }
  return softmax(logits)[static_cast<std::size_t>(token)];
}

TinyTransformer::Offsets TinyTransformer::compute_offsets(const ModelConfig& c) {
  Offsets o;
  const std::size_t e = c.embed_dim;
  const std::size_t f = c.ffn_dim();
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t here = at;
    at += n;
    return here;
  };
  o.tok_emb = take(c.vocab_size * e);
  o.pos_emb = take(c.max_positions * e);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerOffsets lo{};
    lo.norm1 = take(e);
    lo.wq = take(e * e);
    lo.wk = take(e * e);
    lo.wv = take(e * e);
    lo.wo = take(e * e);
    lo.norm2 = take(e);
    lo.w1 = take(f * e);
    lo.b1 = take(f);
    lo.w2 = take(e * f);
    lo.b2 = take(e);
    o.layers.push_back(lo);
  }
  o.norm_final = take(e);
  o.w_out = take(c.vocab_size * e);
  o.total = at;
  return o;
}

TinyTransformer::TinyTransformer(const ModelConfig& config) : config_(config) {
  config_.validate();
  offsets_ = compute_offsets(config_);
  params_.assign(offsets_.total, 0.0f);

  std::mt19937_64 rng(config_.seed);
  std::normal_distribution<float> normal(0.0f, 0.02f);
  const std::size_t e = config_.embed_dim;
  const std::size_t f = config_.ffn_dim();
  auto fill = [&](std::size_t offset, std::size_t count, float scale) {
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = normal(rng) * scale;
  };
  auto ones = [&](std::size_t offset, std::size_t count) {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(offset), count, 1.0f);
  };
  fill(offsets_.tok_emb, config_.vocab_size * e, 1.0f);
  fill(offsets_.pos_emb, config_.max_positions * e, 1.0f);
  // Residual projections scaled down by depth, GPT-2 style.
  const float resid = 1.0f / std::sqrt(2.0f * static_cast<float>(config_.num_layers));
  for (const auto& lo : offsets_.layers) {
    ones(lo.norm1, e);
    fill(lo.wq, e * e, 1.0f);
    fill(lo.wk, e * e, 1.0f);
    fill(lo.wv, e * e, 1.0f);
    fill(lo.wo, e * e, resid);
    ones(lo.norm2, e);
    fill(lo.w1, f * e, 1.0f);
    fill(lo.w2, e * f, resid);
  }
  ones(offsets_.norm_final, e);
  fill(offsets_.w_out, config_.vocab_size * e, 1.0f);
}

TinyTransformer::TinyTransformer(const ModelConfig& config, std::vector<float> params)
    : config_(config) {
  config_.validate();
  offsets_ = compute_offsets(config_);
  if (params.size() != offsets_.total) {
    throw DomainError("TinyTransformer: expected " + std::to_string(offsets_.total) +
                      " parameters, got " + std::to_string(params.size()));
  }
  params_ = std::move(params);
}

TinyTransformer init_model(const ModelConfig& config) { return TinyTransformer(config); }

std::uint64_t TinyTransformer::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(params_.data());
  for (std::size_t i = 0; i < params_.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

ForwardOutput TinyTransformer::forward(const CacheState& cache, std::span<const Token> new_tokens,
                                       const MaskSpec& mask,
                                       std::size_t materialize_prefix_len) const {
  const std::size_t n = new_tokens.size();
  if (mask.size() != n) {
    throw DomainError("forward: mask size " + std::to_string(mask.size()) +
                      " != new token count " + std::to_string(n));
  }
  if (materialize_prefix_len > n) {
    throw DomainError("forward: materialize_prefix_len exceeds new token count");
  }
  const std::size_t c = cache.length();
  if (c + n > config_.max_positions) {
    throw DomainError("forward: sequence of " + std::to_string(c + n) +
                      " positions exceeds max_positions " +
                      std::to_string(config_.max_positions));
  }
  if (c > 0 && cache.keys.size() != config_.num_layers) {
    throw DomainError("forward: cache was not produced by this model");
  }
  const std::size_t e = config_.embed_dim;
  const std::size_t f = config_.ffn_dim();
  const std::size_t vsz = config_.vocab_size;
  const std::size_t keys = c + n;

  ForwardOutput out;
  out.vocab = vsz;
  out.new_cache = cache;
  out.new_cache.keys.resize(config_.num_layers);
  out.new_cache.values.resize(config_.num_layers);
  out.new_cache.tokens.insert(out.new_cache.tokens.end(), new_tokens.begin(),
                              new_tokens.begin() + static_cast<std::ptrdiff_t>(materialize_prefix_len));
  if (n == 0) return out;

  std::vector<std::uint8_t> visible(n * keys, 1);
  const MaskMatrix step = mask.materialize();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) visible[i * keys + c + j] = step.at(i, j) ? 1 : 0;
  }

  std::vector<float> x(n * e);
  for (std::size_t i = 0; i < n; ++i) {
    const Token t = new_tokens[i];
    if (t < 0 || static_cast<std::size_t>(t) >= vsz) throw DomainError("forward: token out of vocabulary");
    const float* te = params_.data() + offsets_.tok_emb + static_cast<std::size_t>(t) * e;
    const float* pe = params_.data() + offsets_.pos_emb + (c + i) * e;
    for (std::size_t d = 0; d < e; ++d) x[i * e + d] = te[d] + pe[d];
  }

  std::vector<float> a(n * e), q(n * e), kn(n * e), vn(n * e), o(n * e), proj(n * e);
  std::vector<float> u(n * f), z(n * f);
  std::vector<float> kall, vall;
  const kernels::AttentionShape shape{n, keys, config_.num_heads, config_.head_dim()};

  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const LayerOffsets& lo = offsets_.layers[l];
    rmsnorm(x, view(lo.norm1, e), a, {}, n, e);
    kx::linear(a, view(lo.wq, e * e), {}, q, n, e, e);
    kx::linear(a, view(lo.wk, e * e), {}, kn, n, e, e);
    kx::linear(a, view(lo.wv, e * e), {}, vn, n, e, e);

    const std::vector<float> empty;
    const std::vector<float>& ck = c > 0 ? cache.keys[l] : empty;
    const std::vector<float>& cv = c > 0 ? cache.values[l] : empty;
    kall.assign(ck.begin(), ck.end());
    kall.insert(kall.end(), kn.begin(), kn.end());
    vall.assign(cv.begin(), cv.end());
    vall.insert(vall.end(), vn.begin(), vn.end());
    kx::attention(q, kall, vall, visible, shape, o, {});
    kx::linear(o, view(lo.wo, e * e), {}, proj, n, e, e);
    for (std::size_t i = 0; i < n * e; ++i) x[i] += proj[i];

    rmsnorm(x, view(lo.norm2, e), a, {}, n, e);
    kx::linear(a, view(lo.w1, f * e), view(lo.b1, f), u, n, e, f);
    for (std::size_t i = 0; i < n * f; ++i) z[i] = gelu(u[i]);
    kx::linear(z, view(lo.w2, e * f), view(lo.b2, e), proj, n, f, e);
    for (std::size_t i = 0; i < n * e; ++i) x[i] += proj[i];

    auto& nk = out.new_cache.keys[l];
    auto& nv = out.new_cache.values[l];
    nk.insert(nk.end(), kn.begin(), kn.begin() + static_cast<std::ptrdiff_t>(materialize_prefix_len * e));
    nv.insert(nv.end(), vn.begin(), vn.begin() + static_cast<std::ptrdiff_t>(materialize_prefix_len * e));
  }

  rmsnorm(x, view(offsets_.norm_final, e), a, {}, n, e);
  out.logits.resize(n * vsz);
  kx::linear(a, view(offsets_.w_out, vsz * e), {}, out.logits, n, e, vsz);
  return out;
}

TrainingActivations TinyTransformer::forward_train(std::span<const Token> tokens,
                                                   std::span<const std::size_t> positions,
                                                   const MaskMatrix& mask) const {
  const std::size_t t = tokens.size();
  if (positions.size() != t || mask.size != t) {
    throw DomainError("forward_train: tokens, positions and mask must agree in length");
  }
  const std::size_t e = config_.embed_dim;
  const std::size_t f = config_.ffn_dim();
  const std::size_t vsz = config_.vocab_size;

  TrainingActivations acts;
  acts.seq_len = t;
  acts.tokens.assign(tokens.begin(), tokens.end());
  acts.positions.assign(positions.begin(), positions.end());
  acts.visible = mask.cells;

  std::vector<float> x(t * e);
  for (std::size_t i = 0; i < t; ++i) {
    const Token tok = tokens[i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= vsz) throw DomainError("forward_train: token out of vocabulary");
    if (positions[i] >= config_.max_positions) throw DomainError("forward_train: position out of range");
    const float* te = params_.data() + offsets_.tok_emb + static_cast<std::size_t>(tok) * e;
    const float* pe = params_.data() + offsets_.pos_emb + positions[i] * e;
    for (std::size_t d = 0; d < e; ++d) x[i * e + d] = te[d] + pe[d];
  }

  const kernels::AttentionShape shape{t, t, config_.num_heads, config_.head_dim()};
  std::vector<float> proj(t * e);
  acts.layers.resize(config_.num_layers);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const LayerOffsets& lo = offsets_.layers[l];
    auto& L = acts.layers[l];
    L.x_in = x;
    L.inv_rms1.resize(t);
    L.a.resize(t * e);
    rmsnorm(x, view(lo.norm1, e), L.a, L.inv_rms1, t, e);
    L.q.resize(t * e);
    L.k.resize(t * e);
    L.v.resize(t * e);
    kx::linear(L.a, view(lo.wq, e * e), {}, L.q, t, e, e);
    kx::linear(L.a, view(lo.wk, e * e), {}, L.k, t, e, e);
    kx::linear(L.a, view(lo.wv, e * e), {}, L.v, t, e, e);
    L.o.resize(t * e);
    L.probs.resize(config_.num_heads * t * t);
    kx::attention(L.q, L.k, L.v, acts.visible, shape, L.o, L.probs);
    kx::linear(L.o, view(lo.wo, e * e), {}, proj, t, e, e);
    for (std::size_t i = 0; i < t * e; ++i) x[i] += proj[i];
    L.x_mid = x;

    L.inv_rms2.resize(t);
    L.b.resize(t * e);
    rmsnorm(x, view(lo.norm2, e), L.b, L.inv_rms2, t, e);
    L.u.resize(t * f);
    L.z.resize(t * f);
    kx::linear(L.b, view(lo.w1, f * e), view(lo.b1, f), L.u, t, e, f);
    for (std::size_t i = 0; i < t * f; ++i) L.z[i] = gelu(L.u[i]);
    kx::linear(L.z, view(lo.w2, e * f), view(lo.b2, e), proj, t, f, e);
    for (std::size_t i = 0; i < t * e; ++i) x[i] += proj[i];
  }
  acts.x_final = x;
  acts.inv_rms_final.resize(t);
  acts.f.resize(t * e);
  rmsnorm(x, view(offsets_.norm_final, e), acts.f, acts.inv_rms_final, t, e);
  acts.logits.resize(t * vsz);
  kx::linear(acts.f, view(offsets_.w_out, vsz * e), {}, acts.logits, t, e, vsz);
  return acts;
}

void TinyTransformer::backward(const TrainingActivations& acts, std::span<const float> dlogits,
                               std::span<float> grad) const {
  const std::size_t t = acts.seq_len;
  const std::size_t e = config_.embed_dim;
  const std::size_t f = config_.ffn_dim();
  const std::size_t vsz = config_.vocab_size;
  if (dlogits.size() != t * vsz) throw DomainError("backward: dlogits shape mismatch");
  if (grad.size() != params_.size()) throw DomainError("backward: gradient buffer size mismatch");

  auto g = [&grad](std::size_t offset, std::size_t count) {
    return grad.subspan(offset, count);
  };

  kx::linear_grad_weight(dlogits, acts.f, g(offsets_.w_out, vsz * e), {}, t, e, vsz);
  std::vector<float> df(t * e, 0.0f);
  kx::linear_grad_input(dlogits, view(offsets_.w_out, vsz * e), df, t, e, vsz);
  std::vector<float> dx(t * e, 0.0f);
  rmsnorm_backward(df, acts.x_final, view(offsets_.norm_final, e), acts.inv_rms_final, dx,
                   g(offsets_.norm_final, e), t, e);

  const kernels::AttentionShape shape{t, t, config_.num_heads, config_.head_dim()};
  std::vector<float> dz(t * f), du(t * f), db(t * e), dmid(t * e), dout(t * e);
  std::vector<float> dq(t * e), dk(t * e), dv(t * e), da(t * e);
  for (std::size_t li = config_.num_layers; li-- > 0;) {
    const LayerOffsets& lo = offsets_.layers[li];
    const auto& L = acts.layers[li];

    // MLP branch: x_out = x_mid + W2 gelu(W1 b + b1) + b2
    kx::linear_grad_weight(dx, L.z, g(lo.w2, e * f), g(lo.b2, e), t, f, e);
    std::fill(dz.begin(), dz.end(), 0.0f);
    kx::linear_grad_input(dx, view(lo.w2, e * f), dz, t, f, e);
    for (std::size_t i = 0; i < t * f; ++i) du[i] = dz[i] * gelu_grad(L.u[i]);
    kx::linear_grad_weight(du, L.b, g(lo.w1, f * e), g(lo.b1, f), t, e, f);
    std::fill(db.begin(), db.end(), 0.0f);
    kx::linear_grad_input(du, view(lo.w1, f * e), db, t, e, f);
    dmid = dx;
    rmsnorm_backward(db, L.x_mid, view(lo.norm2, e), L.inv_rms2, dmid, g(lo.norm2, e), t, e);

    // Attention branch: x_mid = x_in + Wo attn(q, k, v)
    kx::linear_grad_weight(dmid, L.o, g(lo.wo, e * e), {}, t, e, e);
    std::fill(dout.begin(), dout.end(), 0.0f);
    kx::linear_grad_input(dmid, view(lo.wo, e * e), dout, t, e, e);
    std::fill(dq.begin(), dq.end(), 0.0f);
    std::fill(dk.begin(), dk.end(), 0.0f);
    std::fill(dv.begin(), dv.end(), 0.0f);
    kx::attention_backward(dout, L.q, L.k, L.v, L.probs, shape, dq, dk, dv);
    kx::linear_grad_weight(dq, L.a, g(lo.wq, e * e), {}, t, e, e);
    kx::linear_grad_weight(dk, L.a, g(lo.wk, e * e), {}, t, e, e);
    kx::linear_grad_weight(dv, L.a, g(lo.wv, e * e), {}, t, e, e);
    std::fill(da.begin(), da.end(), 0.0f);
    kx::linear_grad_input(dq, view(lo.wq, e * e), da, t, e, e);
    kx::linear_grad_input(dk, view(lo.wk, e * e), da, t, e, e);
    kx::linear_grad_input(dv, view(lo.wv, e * e), da, t, e, e);
    dx = dmid;
    rmsnorm_backward(da, L.x_in, view(lo.norm1, e), L.inv_rms1, dx, g(lo.norm1, e), t, e);
  }

  for (std::size_t i = 0; i < t; ++i) {
    const float* dxr = dx.data() + i * e;
    kernels::axpy(1.0f, dxr, grad.data() + offsets_.tok_emb + static_cast<std::size_t>(acts.tokens[i]) * e, e);
    kernels::axpy(1.0f, dxr, grad.data() + offsets_.pos_emb + acts.positions[i] * e, e);
  }
}

void TinyTransformer::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  os << "pabdm-checkpoint v1 vocab_size=" << config_.vocab_size
     << " embed_dim=" << config_.embed_dim << " num_layers=" << config_.num_layers
     << " num_heads=" << config_.num_heads << " max_positions=" << config_.max_positions
     << " seed=" << config_.seed << " params=" << params_.size() << "\n";
  for (float v : params_) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                 static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(le), 4);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

TinyTransformer TinyTransformer::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != "pabdm-checkpoint" || version != "v1") {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  std::map<std::string, std::uint64_t> fields;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint header field: " + kv);
    fields[kv.substr(0, eq)] = std::stoull(kv.substr(eq + 1));
  }
  auto need = [&](const char* key) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw std::runtime_error(std::string("checkpoint header missing ") + key);
    return it->second;
  };
  ModelConfig config;
  config.vocab_size = need("vocab_size");
  config.embed_dim = need("embed_dim");
  config.num_layers = need("num_layers");
  config.num_heads = need("num_heads");
  config.max_positions = need("max_positions");
  config.seed = need("seed");
  const std::uint64_t count = need("params");

  std::vector<float> params(count);
  for (auto& v : params) {
    unsigned char le[4];
    is.read(reinterpret_cast<char*>(le), 4);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
    const std::uint32_t bits = std::uint32_t(le[0]) | (std::uint32_t(le[1]) << 8) |
                               (std::uint32_t(le[2]) << 16) | (std::uint32_t(le[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return TinyTransformer(config, std::move(params));
}

}  // namespace pabdm
