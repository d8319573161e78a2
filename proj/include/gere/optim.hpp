// Decoupled-weight-decay Adam over leaf tensors.
#pragma once

#include <cmath>
#include <vector>

#include "gere/tensor.hpp"

namespace gere {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
};

class AdamW {
 public:
  AdamW(std::vector<TensorF> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].numel(), 0.0f);
      v_[i].assign(params_[i].numel(), 0.0f);
    }
  }

  // lr_scale multiplies the base lr (warmup/cosine schedules live upstream)
  void step(float lr_scale = 1.0f) {
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    const float lr = cfg_.lr * lr_scale;
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& w = params_[i].values();
      auto& g = params_[i].grad();
      if (g.empty()) continue;  // parameter unused this step
      for (size_t j = 0; j < w.size(); ++j) {
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0f - cfg_.beta1) * g[j];
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0f - cfg_.beta2) * g[j] * g[j];
        float mhat = m_[i][j] / bc1;
        float vhat = v_[i][j] / bc2;
        w[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[j]);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad().clear();
  }

  int64_t steps() const { return t_; }

 private:
  std::vector<TensorF> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int64_t t_ = 0;
};

// warmup then cosine decay to zero; returns a multiplier in [0, 1]
inline float warmup_cosine(int64_t step, int64_t warmup, int64_t total) {
  if (total <= 0) return 1.0f;
  if (warmup > 0 && step < warmup) return static_cast<float>(step + 1) / static_cast<float>(warmup);
  if (step >= total) return 0.0f;
  double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return static_cast<float>(0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
}

}  // namespace gere
