#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "diffcontact/scalar.hpp"

namespace diffcontact {

/// First-order update with bias-corrected moment averages.
class Adam {
 public:
  explicit Adam(std::size_t n, double lr = 1e-2, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  /// x -= lr * m̂ / (sqrt(v̂) + eps) for coordinates where mask is true
  /// (all when mask is empty). lr_override > 0 replaces the base rate.
  void step(std::span<double> x, std::span<const double> grad, std::span<const char> mask = {},
            double lr_override = -1.0) {
    if (x.size() != m_.size() || grad.size() != m_.size()) throw ValidationError("Adam: dimension mismatch");
    ++t_;
    const double lr = lr_override > 0.0 ? lr_override : lr_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      x[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  double learning_rate() const { return lr_; }
  long steps_taken() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Cosine decay from lr to lr * floor over `total` iterations.
inline double cosine_lr(double lr, std::size_t it, std::size_t total, double floor = 0.01) {
  if (total <= 1) return lr;
  const double p = static_cast<double>(it) / static_cast<double>(total - 1);
  return lr * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)));
}

}  // namespace diffcontact
