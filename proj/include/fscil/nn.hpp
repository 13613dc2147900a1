#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fscil/ops.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

// y = x W^T + b over the last axis; W is [out, in].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear normal(std::size_t in, std::size_t out, Rng& rng, T stddev) {
    Linear l{Tensor<T>::randn({out, in}, rng, stddev), Tensor<T>::zeros({out})};
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  }
  // Fan-in scaled normal weights, zero bias.
  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return normal(in, out, rng, static_cast<T>(1.0 / std::sqrt(static_cast<double>(in))));
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    Linear l{Tensor<T>::zeros({out, in}), Tensor<T>::zeros({out})};
    l.weight.set_requires_grad(true);
    l.bias.set_requires_grad(true);
    return l;
  }
  static Linear identity(std::size_t dim) {
    Linear l = zeros(dim, dim);
    auto w = l.weight.mutable_data();
    for (std::size_t i = 0; i < dim; ++i) w[i * dim + i] = T{1};
    return l;
  }

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Linear clone() const {
    Linear l{weight.clone(), bias.clone()};
    l.weight.set_requires_grad(weight.requires_grad());
    l.bias.set_requires_grad(bias.requires_grad());
    return l;
  }
};

// Copies values of a same-shaped leaf into another leaf in place.
template <typename T>
void assign_values(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) throw ShapeError("assign_values: shape mismatch");
  auto d = dst.mutable_data();
  const auto s = src.data();
  std::copy(s.begin(), s.end(), d.begin());
}

}  // namespace fscil
