#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tinyalign/data.hpp"
#include "tinyalign/model.hpp"

namespace tinyalign {

enum class AlignMethod { FA, RWR, CA };

inline AlignMethod parse_align_method(const std::string& name) {
  if (name == "fa") return AlignMethod::FA;
  if (name == "rwr") return AlignMethod::RWR;
  if (name == "ca") return AlignMethod::CA;
  throw ConfigError("unknown alignment method \"" + name + "\" (valid: fa, rwr, ca)");
}

inline const char* align_method_name(AlignMethod m) {
  switch (m) {
    case AlignMethod::FA: return "fa";
    case AlignMethod::RWR: return "rwr";
    case AlignMethod::CA: return "ca";
  }
  throw ConfigError("unreachable align method");
}

struct AlignConfig {
  AlignMethod method = AlignMethod::CA;
  double t = 0.0;                // FA threshold on normalized rewards
  double beta_rwr = 5.0;         // RWR temperature
  double condition_score = 5.0;  // CA inference-time conditioning score

  void validate() const {
    if (beta_rwr <= 0.0) throw ConfigError("align config: beta_rwr must be positive");
    if (!std::isfinite(condition_score))
      throw ConfigError("align config: condition_score must be finite");
  }
};

struct PPOObjectiveConfig {
  double beta_kl = 0.0;
  double gamma = 0.0;  // pretraining-mix coefficient; only 0 is supported

  void validate() const {
    if (beta_kl < 0.0) throw ConfigError("objective config: beta_kl must be >= 0");
    if (gamma != 0.0) throw ConfigError("objective config: gamma must be 0 in this artifact");
  }
};

struct RewardStats {
  double mean = 0.0;
  double std = 0.0;
  long count = 0;
  bool degenerate = false;  // input std below threshold; outputs forced to 0
};

// A tokenized training sequence carrying its normalized reward.
struct LabeledSeq {
  TokenSeq seq;
  double norm_reward = 0.0;
};

inline LabeledSeq to_chat_seq(const LabeledSample& s) {
  return {format_chat(Sample{s.instruction, s.response}), s.norm_reward};
}

// CA training sequence: the sample's own reward becomes conditioning text.
inline TokenSeq to_ca_seq(const LabeledSample& s) {
  return format_ca(Sample{s.instruction, s.response}, s.norm_reward);
}

inline std::vector<LabeledSeq> to_chat_seqs(std::span<const LabeledSample> batch) {
  std::vector<LabeledSeq> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(to_chat_seq(s));
  return out;
}

inline std::vector<TokenSeq> to_ca_seqs(std::span<const LabeledSample> batch) {
  std::vector<TokenSeq> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(to_ca_seq(s));
  return out;
}

// ---------------------------------------------------------------------------
// per-sequence NLL
// ---------------------------------------------------------------------------

// Mean masked next-token NLL of one sequence: logits at position i are
// scored against token i+1, so the supervision weights are the mask shifted
// left by one.
inline Tensor seq_nll(const ModelParams& p, const TokenSeq& s,
                      CeReduction reduction = CeReduction::MeanOverMask) {
  if (s.ids.size() != s.loss_mask.size())
    throw DimensionError("seq_nll: ids and loss_mask lengths differ");
  if (s.ids.size() < 2) throw ValueError("seq_nll: sequence too short to supervise");
  const auto t = s.ids.size();
  Tensor logits = lm_forward(p, std::span<const int>(s.ids.data(), t - 1));
  return cross_entropy(logits, std::span<const int>(s.ids.data() + 1, t - 1),
                       std::span<const double>(s.loss_mask.data() + 1, t - 1), reduction);
}

namespace detail {

// Batch mean computed as a weighted accumulation followed by one division,
// so every loss that reduces over a batch shares the identical pattern of
// floating-point operations.
inline Tensor batch_mean(std::span<const Tensor> per_sample, std::span<const double> weights) {
  return div_scalar(weighted_sum(per_sample, weights),
                    static_cast<double>(per_sample.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Masked next-token cross-entropy, mean over unmasked tokens per sequence,
// then mean over the batch.
inline Tensor sft_loss(const ModelParams& p, std::span<const TokenSeq> batch) {
  if (batch.empty()) throw ValueError("sft_loss: empty batch");
  std::vector<Tensor> nlls;
  nlls.reserve(batch.size());
  for (const auto& s : batch) nlls.push_back(seq_nll(p, s));
  const std::vector<double> ones(batch.size(), 1.0);
  return detail::batch_mean(nlls, ones);
}

// -log sigmoid(r_w - r_l), computed as softplus(-(r_w - r_l)).
inline Tensor rm_ranking_loss(const Tensor& r_w, const Tensor& r_l) {
  if (r_w.size() != 1 || r_l.size() != 1)
    throw DimensionError("rm_ranking_loss: rewards must be scalars");
  return softplus(neg(sub(r_w, r_l)));
}

inline double rm_ranking_loss(double r_w, double r_l) {
  const double d = r_w - r_l;
  return std::max(-d, 0.0) + std::log1p(std::exp(-std::abs(d)));
}

struct TokenPair {
  TokenSeq chosen;
  TokenSeq rejected;
};

inline std::vector<TokenPair> to_token_pairs(std::span<const PreferencePair> pairs) {
  std::vector<TokenPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back(TokenPair{format_chat(Sample{p.instruction, p.chosen}),
                            format_chat(Sample{p.instruction, p.rejected})});
  return out;
}

// Batch mean of the pairwise ranking loss.
inline Tensor rm_ranking_loss(const RewardModelParams& p, std::span<const TokenPair> batch) {
  if (batch.empty()) throw ValueError("rm_ranking_loss: empty batch");
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const auto& pair : batch)
    losses.push_back(rm_ranking_loss(rm_forward(p, pair.chosen.ids),
                                     rm_forward(p, pair.rejected.ids)));
  const std::vector<double> ones(batch.size(), 1.0);
  return detail::batch_mean(losses, ones);
}

// Subtract the dataset mean, divide by the sample (n-1) standard deviation.
// Near-constant inputs yield all zeros with the degenerate flag set.
inline std::pair<std::vector<double>, RewardStats> normalize_rewards(
    std::span<const double> raw) {
  if (raw.empty()) throw ValueError("normalize_rewards: empty input");
  RewardStats stats;
  stats.count = static_cast<long>(raw.size());
  double acc = 0.0;
  for (const double r : raw) acc += r;
  stats.mean = acc / static_cast<double>(raw.size());
  double sq = 0.0;
  for (const double r : raw) sq += (r - stats.mean) * (r - stats.mean);
  stats.std = raw.size() > 1
                  ? std::sqrt(sq / static_cast<double>(raw.size() - 1))
                  : 0.0;
  std::vector<double> out(raw.size(), 0.0);
  if (stats.std < 1e-12) {
    stats.degenerate = true;
    return {std::move(out), stats};
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - stats.mean) / stats.std;
  return {std::move(out), stats};
}

// NLL over samples whose normalized reward strictly exceeds t; mean over the
// samples that pass the filter.
inline Tensor fa_loss(const ModelParams& p, std::span<const LabeledSeq> batch, double t) {
  if (batch.empty()) throw ValueError("fa_loss: empty batch");
  std::vector<Tensor> nlls;
  for (const auto& s : batch) {
    if (s.norm_reward > t) nlls.push_back(seq_nll(p, s.seq));
  }
  if (nlls.empty()) throw EmptyFilteredBatch("empty filtered batch: no reward above threshold");
  const std::vector<double> ones(nlls.size(), 1.0);
  return detail::batch_mean(nlls, ones);
}

inline constexpr double kRwrClamp = 10.0;

inline double rwr_weight(double norm_reward, double beta) {
  const double clamped = std::min(kRwrClamp, std::max(-kRwrClamp, norm_reward));
  return std::exp(clamped / beta);
}

// Per-sample NLL weighted by exp(norm_reward / beta); rewards clamped to
// [-10, 10] before the exponent; mean over the batch.
inline Tensor rwr_loss(const ModelParams& p, std::span<const LabeledSeq> batch, double beta) {
  if (batch.empty()) throw ValueError("rwr_loss: empty batch");
  if (beta <= 0.0) throw ConfigError("rwr_loss: beta must be positive");
  std::vector<Tensor> nlls;
  std::vector<double> weights;
  nlls.reserve(batch.size());
  weights.reserve(batch.size());
  for (const auto& s : batch) {
    nlls.push_back(seq_nll(p, s.seq));
    weights.push_back(rwr_weight(s.norm_reward, beta));
  }
  return detail::batch_mean(nlls, weights);
}

// CA is SFT on sequences whose prompt carries the reward span; the batch is
// expected to be pre-rendered with format_ca at each sample's own reward.
inline Tensor ca_loss(const ModelParams& p, std::span<const TokenSeq> ca_batch) {
  return sft_loss(p, ca_batch);
}

// Eq.-3 diagnostic with gamma = 0: mean over the batch of
// norm_reward - beta_kl * (log pi_policy(x|p) - log pi_ref(x|p)),
// log-probabilities summed over supervised tokens. The reference forward is
// not recorded, so gradients flow only through the policy.
inline Tensor alignment_objective(const ModelParams& policy, const ModelParams& ref,
                                  std::span<const LabeledSeq> batch,
                                  const PPOObjectiveConfig& cfg) {
  cfg.validate();
  if (policy.trunk.config.vocab_size != ref.trunk.config.vocab_size)
    throw ConfigError("alignment_objective: policy and reference vocab sizes differ");
  if (batch.empty()) throw ValueError("alignment_objective: empty batch");
  std::vector<Tensor> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    Tensor nll_pol = seq_nll(policy, s.seq, CeReduction::Sum);
    double nll_ref_value;
    {
      NoGradGuard ng;
      nll_ref_value = seq_nll(ref, s.seq, CeReduction::Sum).item();
    }
    // log pi_policy - log pi_ref == nll_ref - nll_pol
    Tensor log_ratio = sub(Tensor::scalar(nll_ref_value), nll_pol);
    terms.push_back(sub(Tensor::scalar(s.norm_reward), scale(log_ratio, cfg.beta_kl)));
  }
  const std::vector<double> ones(batch.size(), 1.0);
  return detail::batch_mean(terms, ones);
}

}  // namespace tinyalign
