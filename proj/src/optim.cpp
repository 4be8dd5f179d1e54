#include "angdiff/optim.hpp"

#include <algorithm>
#include <cmath>

namespace angdiff {

AdamW::AdamW(std::size_t size, AdamWConfig cfg) : cfg_(cfg), m_(size, 0.0), v_(size, 0.0) {
  require(cfg.lr > 0.0, "adamw: lr must be positive");
  require(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
          "adamw: betas must lie in [0, 1)");
}

double AdamW::current_lr() const {
  if (cfg_.warmup_steps <= 0) return cfg_.lr;
  const double frac = std::min(1.0, static_cast<double>(step_ + 1) / cfg_.warmup_steps);
  return cfg_.lr * frac;
}

void AdamW::step(Span params, ConstSpan grads) {
  require(params.size() == m_.size() && grads.size() == m_.size(), "adamw: size mismatch");
  const double lr = current_lr();
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
  }
}

void ema_update(Span shadow, ConstSpan live, double momentum) {
  require(shadow.size() == live.size(), "ema_update: shape mismatch");
  require(momentum >= 0.0 && momentum < 1.0, "ema_update: momentum must lie in [0, 1)");
  const double w = 1.0 - momentum;
  for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i] = momentum * shadow[i] + w * live[i];
}

}  // namespace angdiff
