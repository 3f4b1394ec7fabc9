#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "medalign/encoders.hpp"

namespace medalign {

/// Adam with decoupled weight decay. Parameters whose `decay` flag is false
/// (the temperature) are not decayed.
class AdamW {
public:
  struct Moments {
    Matrix m, v;
  };

  AdamW() = default;
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    if (moments_.empty()) {
      for (auto* p : params) moments_.push_back({Matrix::Zero(p->value.rows(), p->value.cols()),
                                                 Matrix::Zero(p->value.rows(), p->value.cols())});
    }
    if (moments_.size() != params.size()) throw ShapeError("optimizer state does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      auto& [m, v] = moments_[k];
      m = beta1_ * m + (1.0 - beta1_) * p.grad;
      v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      if (p.decay && weight_decay_ != 0.0) p.value *= 1.0 - lr * weight_decay_;
      p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_);
    }
  }

  std::uint64_t steps() const noexcept { return t_; }
  const std::vector<Moments>& moments() const noexcept { return moments_; }

  void restore(std::uint64_t steps, std::vector<Moments> moments) {
    t_ = steps;
    moments_ = std::move(moments);
  }

private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8, weight_decay_ = 0.0;
  std::uint64_t t_ = 0;
  std::vector<Moments> moments_;
};

/// Linear warmup from zero over `warmup_steps`, then constant.
struct WarmupSchedule {
  double base_lr = 0;
  std::uint64_t warmup_steps = 0;

  double operator()(std::uint64_t step) const {
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    return base_lr;
  }
};

}  // namespace medalign
