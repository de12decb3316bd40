#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinyalign/ops.hpp"
#include "tinyalign/rng.hpp"
#include "tinyalign/tokenizer.hpp"

namespace tinyalign {

struct ModelConfig {
  long vocab_size = kVocabSize;
  long d_model = 64;
  long n_heads = 4;
  long n_layers = 4;
  long d_ff = 176;
  long max_seq_len = 256;
  double rope_base = 10000.0;

  long d_head() const { return d_model / n_heads; }

  void validate() const {
    if (vocab_size < 2 || d_model < 1 || n_heads < 1 || n_layers < 1 || d_ff < 1)
      throw ConfigError("model config: all sizes must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
    if (d_model / n_heads % 2 != 0)
      throw ConfigError("model config: head dimension must be even for rotary embeddings");
    if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be at least 2");
  }
};

// All linear maps are bias-free; norms are RMS gains.
struct LayerParams {
  Tensor attn_norm;        // [d_model]
  Tensor wq, wk, wv, wo;   // [d_model, d_model]
  Tensor ffn_norm;         // [d_model]
  Tensor w_gate, w_up;     // [d_model, d_ff]
  Tensor w_down;           // [d_ff, d_model]
};

struct TrunkParams {
  ModelConfig config;
  Tensor embedding;  // [vocab, d_model]
  std::vector<LayerParams> layers;
  Tensor final_norm;  // [d_model]
};

struct ModelParams {
  TrunkParams trunk;
  Tensor unembedding;  // [d_model, vocab]; storage distinct from embedding
};

struct RewardModelParams {
  TrunkParams trunk;
  Tensor head;  // [d_model, 1]
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor normal_tensor(Rng& rng, Shape shape, double std_dev) {
  long n = 1;
  for (const long d : shape) n *= d;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = std_dev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor ones_tensor(Shape shape) {
  long n = 1;
  for (const long d : shape) n *= d;
  return Tensor::from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 1.0),
                      true);
}

inline Tensor copy_param(const Tensor& t) {
  return Tensor::from(t.shape(), t.data(), true);
}

}  // namespace detail

// Normal(0, 0.02) init; residual projections (wo, w_down) scaled by
// 1/sqrt(2*n_layers); norm gains start at 1.
inline ModelParams init_lm(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  ModelParams p;
  p.trunk.config = cfg;
  p.trunk.embedding = detail::normal_tensor(rng, {cfg.vocab_size, cfg.d_model}, base_std);
  p.trunk.layers.reserve(static_cast<std::size_t>(cfg.n_layers));
  for (long l = 0; l < cfg.n_layers; ++l) {
    LayerParams lp;
    lp.attn_norm = detail::ones_tensor({cfg.d_model});
    lp.wq = detail::normal_tensor(rng, {cfg.d_model, cfg.d_model}, base_std);
    lp.wk = detail::normal_tensor(rng, {cfg.d_model, cfg.d_model}, base_std);
    lp.wv = detail::normal_tensor(rng, {cfg.d_model, cfg.d_model}, base_std);
    lp.wo = detail::normal_tensor(rng, {cfg.d_model, cfg.d_model}, resid_std);
    lp.ffn_norm = detail::ones_tensor({cfg.d_model});
    lp.w_gate = detail::normal_tensor(rng, {cfg.d_model, cfg.d_ff}, base_std);
    lp.w_up = detail::normal_tensor(rng, {cfg.d_model, cfg.d_ff}, base_std);
    lp.w_down = detail::normal_tensor(rng, {cfg.d_ff, cfg.d_model}, resid_std);
    p.trunk.layers.push_back(std::move(lp));
  }
  p.trunk.final_norm = detail::ones_tensor({cfg.d_model});
  p.unembedding = detail::normal_tensor(rng, {cfg.d_model, cfg.vocab_size}, base_std);
  return p;
}

inline TrunkParams clone_trunk(const TrunkParams& src) {
  TrunkParams t;
  t.config = src.config;
  t.embedding = detail::copy_param(src.embedding);
  t.layers.reserve(src.layers.size());
  for (const auto& l : src.layers) {
    LayerParams lp;
    lp.attn_norm = detail::copy_param(l.attn_norm);
    lp.wq = detail::copy_param(l.wq);
    lp.wk = detail::copy_param(l.wk);
    lp.wv = detail::copy_param(l.wv);
    lp.wo = detail::copy_param(l.wo);
    lp.ffn_norm = detail::copy_param(l.ffn_norm);
    lp.w_gate = detail::copy_param(l.w_gate);
    lp.w_up = detail::copy_param(l.w_up);
    lp.w_down = detail::copy_param(l.w_down);
    t.layers.push_back(std::move(lp));
  }
  t.final_norm = detail::copy_param(src.final_norm);
  return t;
}

inline ModelParams clone_lm(const ModelParams& src) {
  return ModelParams{clone_trunk(src.trunk), detail::copy_param(src.unembedding)};
}

// Trunk reused from the SFT model, unembedding dropped, scalar head starts at
// zero so an untrained RM scores every sequence exactly 0.
inline RewardModelParams init_rm_from_lm(const ModelParams& src) {
  RewardModelParams rm;
  rm.trunk = clone_trunk(src.trunk);
  rm.head = Tensor::zeros({src.trunk.config.d_model, 1}, true);
  return rm;
}

// ---------------------------------------------------------------------------
// parameter walking
// ---------------------------------------------------------------------------

struct NamedParam {
  std::string name;
  Tensor tensor;
};

inline std::vector<NamedParam> named_parameters(const TrunkParams& t) {
  std::vector<NamedParam> out;
  out.push_back({"embedding", t.embedding});
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    const auto& lp = t.layers[l];
    out.push_back({prefix + "attn_norm", lp.attn_norm});
    out.push_back({prefix + "wq", lp.wq});
    out.push_back({prefix + "wk", lp.wk});
    out.push_back({prefix + "wv", lp.wv});
    out.push_back({prefix + "wo", lp.wo});
    out.push_back({prefix + "ffn_norm", lp.ffn_norm});
    out.push_back({prefix + "w_gate", lp.w_gate});
    out.push_back({prefix + "w_up", lp.w_up});
    out.push_back({prefix + "w_down", lp.w_down});
  }
  out.push_back({"final_norm", t.final_norm});
  return out;
}

inline std::vector<NamedParam> named_parameters(const ModelParams& p) {
  auto out = named_parameters(p.trunk);
  out.push_back({"unembedding", p.unembedding});
  return out;
}

inline std::vector<NamedParam> named_parameters(const RewardModelParams& p) {
  auto out = named_parameters(p.trunk);
  out.push_back({"head", p.head});
  return out;
}

template <typename Params>
inline std::vector<Tensor> parameters(const Params& p) {
  std::vector<Tensor> out;
  for (auto& np : named_parameters(p)) out.push_back(np.tensor);
  return out;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

inline std::pair<Tensor, Tensor> rope_apply(const Tensor& q, const Tensor& k,
                                            std::span<const long> positions,
                                            double base = 10000.0) {
  return {rope(q, positions, base), rope(k, positions, base)};
}

inline Tensor swiglu(const Tensor& x, const Tensor& w_gate, const Tensor& w_up,
                     const Tensor& w_down) {
  return matmul(mul(silu(matmul(x, w_gate)), matmul(x, w_up)), w_down);
}

inline Tensor trunk_forward(const TrunkParams& p, std::span<const int> ids) {
  const long t = static_cast<long>(ids.size());
  if (t == 0) throw ValueError("forward: empty token sequence");
  if (t > p.config.max_seq_len)
    throw ValueError("forward: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                     std::to_string(p.config.max_seq_len));
  const long dh = p.config.d_head();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<long> positions(static_cast<std::size_t>(t));
  for (long i = 0; i < t; ++i) positions[static_cast<std::size_t>(i)] = i;

  Tensor x = embedding_rows(p.embedding, ids);
  for (const auto& layer : p.layers) {
    Tensor h = rms_norm(x, layer.attn_norm);
    Tensor q = matmul(h, layer.wq);
    Tensor k = matmul(h, layer.wk);
    Tensor v = matmul(h, layer.wv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(p.config.n_heads));
    for (long hd = 0; hd < p.config.n_heads; ++hd) {
      const long c0 = hd * dh, c1 = (hd + 1) * dh;
      auto [qh, kh] = rope_apply(slice_cols(q, c0, c1), slice_cols(k, c0, c1), positions,
                                 p.config.rope_base);
      Tensor probs = causal_softmax(scale(matmul_nt(qh, kh), inv_sqrt_dh));
      heads.push_back(matmul(probs, slice_cols(v, c0, c1)));
    }
    x = add(x, matmul(concat_cols(heads), layer.wo));
    Tensor f = rms_norm(x, layer.ffn_norm);
    x = add(x, swiglu(f, layer.w_gate, layer.w_up, layer.w_down));
  }
  return rms_norm(x, p.final_norm);
}

// Logits [seq, vocab]; causal by construction of the attention mask.
inline Tensor lm_forward(const ModelParams& p, std::span<const int> ids) {
  return matmul(trunk_forward(p.trunk, ids), p.unembedding);
}

// Scalar reward read from the final token's hidden state.
inline Tensor rm_forward(const RewardModelParams& p, std::span<const int> ids) {
  Tensor h = trunk_forward(p.trunk, ids);
  return matmul(row(h, h.dim(0) - 1), p.head);
}

}  // namespace tinyalign
