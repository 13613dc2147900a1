#pragma once

// Selective SSM branch: tokens -> (scan stream X, gate stream Z) -> depthwise
// conv + SiLU -> K directional selective scans summed on the grid -> gated,
// spatially pooled representation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fscil/nn.hpp"
#include "fscil/ops.hpp"
#include "fscil/rng.hpp"
#include "fscil/ssm.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct BranchDims {
  std::size_t in_channels = 16;  // D
  std::size_t proj_dim = 16;     // D'
  std::size_t state_dim = 8;
  std::size_t height = 4;
  std::size_t width = 4;
  std::vector<std::size_t> scan_paths{0, 1, 2, 3};

  std::size_t tokens() const { return height * width; }

  void validate() const {
    if (in_channels == 0 || proj_dim == 0 || state_dim == 0 || height == 0 || width == 0) {
      throw ContractError("BranchDims: all extents must be positive");
    }
    if (scan_paths.empty()) throw ContractError("BranchDims: at least one scan path is required");
    for (const auto k : scan_paths)
      if (k > 3) throw ContractError("BranchDims: unknown scan direction " + std::to_string(k));
  }

  static std::vector<std::size_t> first_paths(std::size_t count) {
    std::vector<std::size_t> paths(count);
    std::iota(paths.begin(), paths.end(), std::size_t{0});
    return paths;
  }
};

// Grid positions (row-major index) visited in scan order.
//   k=0: row-major, top-left to bottom-right
//   k=1: reverse of k=0
//   k=2: column-major, top-left to bottom-right
//   k=3: reverse of k=2
inline std::vector<std::size_t> scan_ordering(std::size_t height, std::size_t width, std::size_t k) {
  const std::size_t L = height * width;
  std::vector<std::size_t> order(L);
  switch (k) {
    case 0:
    case 1:
      std::iota(order.begin(), order.end(), std::size_t{0});
      break;
    case 2:
    case 3:
      for (std::size_t c = 0, i = 0; c < width; ++c)
        for (std::size_t r = 0; r < height; ++r) order[i++] = r * width + c;
      break;
    default:
      throw ContractError("scan_ordering: unknown direction " + std::to_string(k));
  }
  if (k == 1 || k == 3) std::reverse(order.begin(), order.end());
  return order;
}

inline std::vector<std::size_t> inverse_ordering(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inv.at(order[i]) = i;
  return inv;
}

struct ScanDirection {
  std::size_t k = 0;
  std::vector<std::size_t> ordering;

  static ScanDirection make(std::size_t height, std::size_t width, std::size_t k) {
    return {k, scan_ordering(height, width, k)};
  }
};

template <typename T>
struct DirectionParams {
  std::size_t k = 0;
  Linear<T> f_b;      // D' -> state_dim
  Linear<T> f_c;      // D' -> state_dim
  Linear<T> f_delta;  // D' -> D', softplus applied after
  Tensor<T> a_log;    // [D', state_dim]; A = -exp(a_log)

  Tensor<T> state_matrix() const { return neg(exp(a_log)); }

  DirectionParams clone() const {
    DirectionParams d{k, f_b.clone(), f_c.clone(), f_delta.clone(), a_log.clone()};
    d.a_log.set_requires_grad(a_log.requires_grad());
    return d;
  }
};

template <typename T>
struct BranchParams {
  BranchDims dims;
  Linear<T> token_mlp;  // D -> D'
  Tensor<T> pos_embed;  // [L, D']
  Linear<T> p_x;        // D' -> D'
  Linear<T> p_z;        // D' -> D'
  Tensor<T> conv_weight;  // [D', 3]
  Tensor<T> conv_bias;    // [D']
  std::vector<DirectionParams<T>> directions;

  static constexpr std::size_t kConvWidth = 3;
  static constexpr double kDeltaMin = 1e-3;
  static constexpr double kDeltaMax = 1e-1;

  static BranchParams init(const BranchDims& dims, Rng& rng) {
    dims.validate();
    const std::size_t D = dims.in_channels, Dp = dims.proj_dim, S = dims.state_dim, L = dims.tokens();
    BranchParams p;
    p.dims = dims;
    p.token_mlp = Linear<T>::init(D, Dp, rng);
    p.pos_embed = Tensor<T>::randn({L, Dp}, rng, T(0.02));
    p.pos_embed.set_requires_grad(true);
    p.p_x = Linear<T>::init(Dp, Dp, rng);
    p.p_z = Linear<T>::init(Dp, Dp, rng);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(kConvWidth)));
    p.conv_weight = Tensor<T>::uniform({Dp, kConvWidth}, rng, -bound, bound);
    p.conv_weight.set_requires_grad(true);
    p.conv_bias = Tensor<T>::uniform({Dp}, rng, -bound, bound);
    p.conv_bias.set_requires_grad(true);
    const auto hippo = ssm::hippo_init<T>(S);
    for (const std::size_t k : dims.scan_paths) {
      DirectionParams<T> d;
      d.k = k;
      d.f_b = Linear<T>::init(Dp, S, rng);
      d.f_c = Linear<T>::init(Dp, S, rng);
      d.f_delta = Linear<T>::init(Dp, Dp, rng);
      // Step sizes start log-uniform in [kDeltaMin, kDeltaMax] through an inverse softplus bias.
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto bias = d.f_delta.bias.mutable_data();
      for (auto& b : bias) {
        const double dt = std::exp(std::log(kDeltaMin) + unit(rng) * (std::log(kDeltaMax) - std::log(kDeltaMin)));
        b = static_cast<T>(dt + std::log(-std::expm1(-dt)));
      }
      std::vector<T> a_log(Dp * S);
      for (std::size_t c = 0; c < Dp; ++c)
        for (std::size_t s = 0; s < S; ++s) a_log[c * S + s] = std::log(-hippo[s]);
      d.a_log = Tensor<T>({Dp, S}, std::move(a_log));
      d.a_log.set_requires_grad(true);
      p.directions.push_back(std::move(d));
    }
    return p;
  }

  // Gate projection to zero: the branch output is then exactly zero.
  void zero_gate() {
    for (auto& v : p_z.weight.mutable_data()) v = T{0};
    for (auto& v : p_z.bias.mutable_data()) v = T{0};
  }

  std::vector<NamedParam<T>> named_parameters(const std::string& prefix) const {
    std::vector<NamedParam<T>> out;
    token_mlp.collect(prefix + ".token_mlp", out);
    out.push_back({prefix + ".pos_embed", pos_embed});
    p_x.collect(prefix + ".p_x", out);
    p_z.collect(prefix + ".p_z", out);
    out.push_back({prefix + ".conv.weight", conv_weight});
    out.push_back({prefix + ".conv.bias", conv_bias});
    for (std::size_t i = 0; i < directions.size(); ++i) {
      const std::string d = prefix + ".dir" + std::to_string(i);
      directions[i].f_b.collect(d + ".f_b", out);
      directions[i].f_c.collect(d + ".f_c", out);
      directions[i].f_delta.collect(d + ".f_delta", out);
      out.push_back({d + ".a_log", directions[i].a_log});
    }
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& np : named_parameters("")) out.push_back(np.tensor);
    return out;
  }

  void set_requires_grad(bool value) {
    for (auto& t : parameters()) t.set_requires_grad(value);
  }

  BranchParams clone() const {
    BranchParams p;
    p.dims = dims;
    p.token_mlp = token_mlp.clone();
    p.pos_embed = pos_embed.clone();
    p.pos_embed.set_requires_grad(pos_embed.requires_grad());
    p.p_x = p_x.clone();
    p.p_z = p_z.clone();
    p.conv_weight = conv_weight.clone();
    p.conv_weight.set_requires_grad(conv_weight.requires_grad());
    p.conv_bias = conv_bias.clone();
    p.conv_bias.set_requires_grad(conv_bias.requires_grad());
    for (const auto& d : directions) p.directions.push_back(d.clone());
    return p;
  }
};

// Input-dependent scan parameters for one direction, in that direction's order.
template <typename T>
struct ScanParams {
  Tensor<T> b;      // [N, L, state_dim]
  Tensor<T> c;      // [N, L, state_dim]
  Tensor<T> delta;  // [N, L, D'], strictly positive
};

template <typename T>
struct BranchAux {
  Tensor<T> z_gate;                      // [N, L, D']
  std::vector<ScanParams<T>> scan_params;  // one entry per direction
};

template <typename T>
struct BranchOutput {
  Tensor<T> mu;  // [N, D']
  BranchAux<T> aux;
};

// F: [N, D, H, W] -> F_hat: [N, L, D'] = token_mlp(tokens(F)) + E
template <typename T>
Tensor<T> embed_tokens(const BranchParams<T>& p, const Tensor<T>& features) {
  const auto& d = p.dims;
  if (features.rank() != 4 || features.shape()[1] != d.in_channels || features.shape()[2] != d.height ||
      features.shape()[3] != d.width) {
    throw ShapeError("embed_tokens: expected [N, " + std::to_string(d.in_channels) + ", " + std::to_string(d.height) +
                     ", " + std::to_string(d.width) + "], got " + shape_str(features.shape()));
  }
  const std::size_t N = features.shape()[0];
  auto tokens = permute(reshape(features, {N, d.in_channels, d.tokens()}), {0, 2, 1});
  return add(p.token_mlp(tokens), p.pos_embed);
}

template <typename T>
struct Streams {
  Tensor<T> x;
  Tensor<T> z;
};

template <typename T>
Streams<T> project_streams(const BranchParams<T>& p, const Tensor<T>& tokens) {
  return {p.p_x(tokens), p.p_z(tokens)};
}

// X_hat = SiLU(depthwise conv, width 3, zero padding 1) along the token axis.
template <typename T>
Tensor<T> refine_conv(const BranchParams<T>& p, const Tensor<T>& x) {
  return silu(depthwise_conv1d(x, p.conv_weight, p.conv_bias, 1));
}

// Reorders the token axis of [N, L, ...] into the direction's scan order.
template <typename T>
Tensor<T> directional_scan(const Tensor<T>& x_hat, const ScanDirection& direction) {
  if (x_hat.rank() < 2 || x_hat.shape()[1] != direction.ordering.size()) {
    throw ShapeError("directional_scan: token axis does not match the grid");
  }
  return index_select(x_hat, 1, direction.ordering);
}

template <typename T>
ScanParams<T> generate_params(const DirectionParams<T>& d, const Tensor<T>& ordered) {
  return {d.f_b(ordered), d.f_c(ordered), softplus(d.f_delta(ordered))};
}

// Sum over directions of each direction's scan, scattered back to grid order.
// When `params_out` is non-null the generated scan parameters are appended to it.
template <typename T>
Tensor<T> ss2d_forward(const BranchParams<T>& p, const Tensor<T>& x_hat, std::vector<ScanParams<T>>* params_out = nullptr) {
  const auto& dims = p.dims;
  Tensor<T> total;
  bool first = true;
  for (const auto& dir : p.directions) {
    const auto direction = ScanDirection::make(dims.height, dims.width, dir.k);
    const auto ordered = directional_scan(x_hat, direction);
    auto params = generate_params(dir, ordered);
    const auto y = ssm::selective_scan(ordered, params.delta, params.b, params.c, dir.state_matrix());
    const auto scattered = index_select(y, 1, inverse_ordering(direction.ordering));
    total = first ? scattered : add(total, scattered);
    first = false;
    if (params_out) params_out->push_back(std::move(params));
  }
  return total;
}

// mu = AvgPool_L(SS2D(X_hat) * SiLU(Z))
template <typename T>
BranchOutput<T> branch_forward(const BranchParams<T>& p, const Tensor<T>& features) {
  const auto tokens = embed_tokens(p, features);
  auto streams = project_streams(p, tokens);
  const auto x_hat = refine_conv(p, streams.x);
  BranchOutput<T> out;
  const auto y = ss2d_forward(p, x_hat, &out.aux.scan_params);
  out.mu = mean(mul(y, silu(streams.z)), 1);
  out.aux.z_gate = streams.z;
  return out;
}

}  // namespace fscil
