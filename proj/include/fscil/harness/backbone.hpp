#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fscil/nn.hpp"
#include "fscil/ops.hpp"

namespace fscil {

// Stand-in feature extractor: a pointwise (1x1) channel mixer on [N, D, H, W]
// initialized to the identity, or a pass-through for precomputed features.
template <typename T>
class Backbone {
 public:
  static Backbone pointwise(std::size_t channels) {
    Backbone b;
    b.mixer_ = Linear<T>::identity(channels);
    return b;
  }
  static Backbone pass_through() { return Backbone{}; }

  bool trainable() const { return mixer_.has_value(); }

  Tensor<T> operator()(const Tensor<T>& raw) const {
    if (!mixer_) return raw;
    if (raw.rank() != 4) throw ShapeError("backbone: expected [N, D, H, W], got " + shape_str(raw.shape()));
    const std::size_t N = raw.shape()[0], D = raw.shape()[1], L = raw.shape()[2] * raw.shape()[3];
    const auto tokens = permute(reshape(raw, {N, D, L}), {0, 2, 1});
    const auto mixed = (*mixer_)(tokens);
    return reshape(permute(mixed, {0, 2, 1}), raw.shape());
  }

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    if (mixer_) mixer_->collect("backbone", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& np : named_parameters()) out.push_back(np.tensor);
    return out;
  }

  void freeze() {
    frozen_ = true;
    for (auto& t : parameters()) t.set_requires_grad(false);
  }
  bool frozen() const { return frozen_; }

  Backbone clone() const {
    Backbone b;
    if (mixer_) b.mixer_ = mixer_->clone();
    b.frozen_ = frozen_;
    return b;
  }

 private:
  std::optional<Linear<T>> mixer_;
  bool frozen_ = false;
};

}  // namespace fscil
