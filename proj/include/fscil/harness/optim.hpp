#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "fscil/tensor.hpp"

namespace fscil {

// SGD with momentum and L2 weight decay:
//   d = g + wd * p;  v = m * v + d;  p -= lr * v
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay), velocity_(params_.size()) {}

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step(double lr) {
    const T m = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto values = p.mutable_data();
      auto& v = velocity_[i];
      if (v.empty()) v.assign(values.size(), T{0});
      for (std::size_t k = 0; k < values.size(); ++k) {
        v[k] = m * v[k] + (g[k] + wd * values[k]);
        values[k] -= rate * v[k];
      }
    }
  }

  const std::vector<Tensor<T>>& parameters() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<T>> velocity_;
};

// lr(step) = min + (max - min) * (1 + cos(pi * step / total)) / 2
struct CosineSchedule {
  double max_lr;
  double min_lr;
  std::size_t total_steps;

  double operator()(std::size_t step) const {
    if (total_steps == 0) return max_lr;
    const double progress = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
    return min_lr + (max_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

}  // namespace fscil
