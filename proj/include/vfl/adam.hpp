#pragma once

#include <cstdint>

#include "vfl/vec.hpp"

namespace vfl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. step() returns the additive update
// lr * m_hat / (sqrt(v_hat) + eps); the caller picks ascent or descent.
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t dim, AdamConfig cfg) : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {}

  Vec step(const Vec& grad);
  // Same recurrence with a caller-supplied learning rate for this step only
  // (used by decaying schedules).
  Vec step(const Vec& grad, double lr);

  std::int64_t step_count() const { return t_; }
  std::size_t dim() const { return m_.size(); }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  Vec m_;
  Vec v_;
  std::int64_t t_ = 0;
};

}  // namespace vfl
