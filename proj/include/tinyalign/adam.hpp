#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tinyalign/tensor.hpp"

namespace tinyalign {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters that accumulated no gradient this
// step are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw ConfigError("adam: lr must be positive");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& value = params_[i].raw_data();
      auto& m = m_[i];
      auto& v = v_[i];
      const bool has = params_[i].has_grad();
      const auto& grad = has ? params_[i].grad() : kNoGrad;
      for (std::size_t j = 0; j < value.size(); ++j) {
        const double g = has ? grad[j] : 0.0;
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  inline static const std::vector<double> kNoGrad{};
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig cfg_;
  long t_ = 0;
};

inline double global_grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (const double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Scales gradients in place so the global norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  if (max_norm <= 0.0) throw ConfigError("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      Tensor t = p;
      for (auto& g : t.raw_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace tinyalign
