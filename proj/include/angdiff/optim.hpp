#pragma once

#include "angdiff/common.hpp"

namespace angdiff {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  // Decoupled: each step shrinks parameters by lr * weight_decay.
  double weight_decay = 1e-4;
  int warmup_steps = 0;
};

class AdamW {
 public:
  AdamW(std::size_t size, AdamWConfig cfg);

  void step(Span params, ConstSpan grads);
  long steps_taken() const { return step_; }
  double current_lr() const;
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  Vec m_;
  Vec v_;
  long step_ = 0;
};

// shadow <- momentum * shadow + (1 - momentum) * live, elementwise.
void ema_update(Span shadow, ConstSpan live, double momentum);

}  // namespace angdiff
