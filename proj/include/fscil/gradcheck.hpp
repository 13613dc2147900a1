#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fscil/tensor.hpp"

namespace fscil {

// Max over every coordinate of every parameter of
//   |analytic - central difference| / max(1, |analytic|).
// `f` is re-evaluated with each coordinate perturbed in place; parameters must be
// leaves with requires_grad set.
template <typename T>
T gradient_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params, T step) {
  if (!(step > T{0})) throw ContractError("gradient_check: step must be positive");
  for (auto& p : params) {
    if (!p.requires_grad()) throw ContractError("gradient_check: parameter does not require grad");
    p.zero_grad();
  }
  const Tensor<T> loss = f();
  if (loss.numel() != 1) throw ShapeError("gradient_check: function is not scalar-valued");
  if (!std::isfinite(loss.item())) throw NumericError("gradient_check: non-finite evaluation");
  backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    analytic.push_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                    : std::vector<T>(p.numel(), T{0}));
  }

  auto evaluate = [&]() {
    NoGradGuard guard;
    const T v = f().item();
    if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite evaluation");
    return v;
  };

  T worst{0};
  for (std::size_t q = 0; q < params.size(); ++q) {
    auto values = params[q].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + step;
      const T up = evaluate();
      values[i] = saved - step;
      const T down = evaluate();
      values[i] = saved;
      const T numeric = (up - down) / (T{2} * step);
      const T a = analytic[q][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(T{1}, std::abs(a)));
    }
  }
  for (auto& p : params) p.zero_grad();
  return worst;
}

// Single-input form: f is evaluated at `point`.
template <typename T>
T gradient_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> point, T step) {
  point.set_requires_grad(true);
  return gradient_check<T>(std::function<Tensor<T>()>([&] { return f(point); }), {point}, step);
}

}  // namespace fscil
