#include "vfl/adam.hpp"

#include <cmath>
#include <string>

namespace vfl {

Vec AdamState::step(const Vec& grad) { return step(grad, cfg_.lr); }

Vec AdamState::step(const Vec& grad, double lr) {
  if (grad.size() != m_.size()) {
    throw ShapeError("adam: gradient dim " + std::to_string(grad.size()) + " vs state dim " +
                     std::to_string(m_.size()));
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (std::isnan(grad[i])) {
      throw NumericError("adam: NaN gradient at index " + std::to_string(i) + " (step " +
                         std::to_string(t_ + 1) + ")");
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  Vec update(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    update[i] = lr * mh / (std::sqrt(vh) + cfg_.eps);
  }
  return update;
}

}  // namespace vfl
