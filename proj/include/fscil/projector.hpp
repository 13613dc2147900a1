#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fscil/nn.hpp"
#include "fscil/ops.hpp"
#include "fscil/rng.hpp"
#include "fscil/ss2d.hpp"

namespace fscil {

enum class BranchId { identity, base, incremental };

inline std::string to_string(BranchId id) {
  switch (id) {
    case BranchId::identity: return "p_iden";
    case BranchId::base: return "g_base";
    case BranchId::incremental: return "g_inc";
  }
  return "?";
}

enum class Phase { base, incremental };

// How the incremental branch's non-gate parameters are initialized.
enum class IncrementalInit { fresh, copy };

template <typename T>
struct IncrementalOutput {
  Tensor<T> mu;      // mu_iden + mu_base + mu_inc
  Tensor<T> mu_inc;  // incremental branch contribution alone
  BranchAux<T> aux;  // incremental branch aux only
};

// Identity branch + base selective SSM branch, plus an incremental branch
// spawned at the first incremental session.
template <typename T>
class DualProjector {
 public:
  static DualProjector create(const BranchDims& dims, std::uint64_t seed) {
    dims.validate();
    DualProjector p;
    p.dims_ = dims;
    auto rng = make_rng(seed, "projector");
    p.p_iden_ = Linear<T>::init(dims.in_channels, dims.proj_dim, rng);
    p.g_base_ = BranchParams<T>::init(dims, rng);
    return p;
  }

  const BranchDims& dims() const { return dims_; }
  Phase phase() const { return g_inc_ ? Phase::incremental : Phase::base; }
  bool has_incremental() const { return g_inc_.has_value(); }

  // mu_iden = p_iden(AvgPool_{HxW}(F))
  Tensor<T> identity_branch(const Tensor<T>& features) const {
    if (features.rank() != 4 || features.shape()[1] != dims_.in_channels) {
      throw ShapeError("identity_branch: expected [N, " + std::to_string(dims_.in_channels) + ", H, W], got " +
                       shape_str(features.shape()));
    }
    const std::size_t N = features.shape()[0], D = features.shape()[1];
    const auto pooled = mean(reshape(features, {N, D, features.shape()[2] * features.shape()[3]}), 2);
    return p_iden_(pooled);
  }

  Tensor<T> forward_base_phase(const Tensor<T>& features) const {
    if (phase() != Phase::base) throw ContractError("forward_base_phase called in the incremental phase");
    return add(identity_branch(features), branch_forward(g_base_, features).mu);
  }

  IncrementalOutput<T> forward_incremental_phase(const Tensor<T>& features) const {
    if (!g_inc_) throw ContractError("forward_incremental_phase: incremental branch absent");
    const auto base = add(identity_branch(features), branch_forward(g_base_, features).mu);
    auto inc = branch_forward(*g_inc_, features);
    return {add(base, inc.mu), inc.mu, std::move(inc.aux)};
  }

  // Phase-appropriate representation.
  Tensor<T> represent(const Tensor<T>& features) const {
    return has_incremental() ? forward_incremental_phase(features).mu : forward_base_phase(features);
  }

  // Creates g_inc with a zero gate projection so its output is exactly zero,
  // and (unless `freeze` is false) freezes p_iden and g_base.
  void spawn_incremental_branch(std::uint64_t seed, IncrementalInit init = IncrementalInit::fresh, bool freeze = true) {
    if (g_inc_) throw ContractError("spawn_incremental_branch called twice");
    if (init == IncrementalInit::copy) {
      g_inc_ = g_base_.clone();
      g_inc_->set_requires_grad(true);
    } else {
      auto rng = make_rng(seed, "incremental_branch");
      g_inc_ = BranchParams<T>::init(dims_, rng);
    }
    g_inc_->zero_gate();
    if (freeze) freeze_base();
  }

  void freeze_base() {
    frozen_.insert(BranchId::identity);
    frozen_.insert(BranchId::base);
    for (auto& t : branch_parameters(BranchId::identity)) t.set_requires_grad(false);
    for (auto& t : branch_parameters(BranchId::base)) t.set_requires_grad(false);
  }

  // Freezing is one-way: requesting trainable=true on a frozen branch throws.
  void set_trainable(BranchId id, bool trainable) {
    if (trainable) {
      if (frozen_.count(id)) throw ContractError("cannot unfreeze " + to_string(id));
      return;
    }
    if (id == BranchId::incremental && !g_inc_) throw ContractError("g_inc absent");
    frozen_.insert(id);
    for (auto& t : branch_parameters(id)) t.set_requires_grad(false);
  }

  bool is_frozen(BranchId id) const { return frozen_.count(id) > 0; }
  const std::set<BranchId>& frozen() const { return frozen_; }

  std::vector<Tensor<T>> branch_parameters(BranchId id) const {
    std::vector<Tensor<T>> out;
    for (auto& np : named_branch_parameters(id)) out.push_back(np.tensor);
    return out;
  }

  std::vector<NamedParam<T>> named_branch_parameters(BranchId id) const {
    std::vector<NamedParam<T>> out;
    switch (id) {
      case BranchId::identity: p_iden_.collect("p_iden", out); break;
      case BranchId::base: out = g_base_.named_parameters("g_base"); break;
      case BranchId::incremental:
        if (g_inc_) out = g_inc_->named_parameters("g_inc");
        break;
    }
    return out;
  }

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    for (const BranchId id : {BranchId::identity, BranchId::base, BranchId::incremental}) {
      auto part = named_branch_parameters(id);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  std::vector<Tensor<T>> trainable_parameters() const {
    std::vector<Tensor<T>> out;
    for (const BranchId id : {BranchId::identity, BranchId::base, BranchId::incremental}) {
      if (is_frozen(id)) continue;
      auto part = branch_parameters(id);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  const Linear<T>& p_iden() const { return p_iden_; }
  Linear<T>& p_iden() { return p_iden_; }
  const BranchParams<T>& g_base() const { return g_base_; }
  BranchParams<T>& g_base() { return g_base_; }
  const std::optional<BranchParams<T>>& g_inc() const { return g_inc_; }
  std::optional<BranchParams<T>>& g_inc() { return g_inc_; }

  // Deep copy with independent parameter storage.
  DualProjector clone() const {
    DualProjector p;
    p.dims_ = dims_;
    p.p_iden_ = p_iden_.clone();
    p.g_base_ = g_base_.clone();
    if (g_inc_) p.g_inc_ = g_inc_->clone();
    p.frozen_ = frozen_;
    return p;
  }

 private:
  BranchDims dims_;
  Linear<T> p_iden_;
  BranchParams<T> g_base_;
  std::optional<BranchParams<T>> g_inc_;
  std::set<BranchId> frozen_;
};

}  // namespace fscil
