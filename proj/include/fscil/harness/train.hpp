#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fscil/config.hpp"
#include "fscil/digest.hpp"
#include "fscil/harness/backbone.hpp"
#include "fscil/harness/batch.hpp"
#include "fscil/harness/memory.hpp"
#include "fscil/harness/optim.hpp"
#include "fscil/harness/stream.hpp"
#include "fscil/objectives.hpp"
#include "fscil/projector.hpp"

namespace fscil {

template <typename T>
struct Model {
  Backbone<T> backbone;
  DualProjector<T> projector;
  EtfClassifier<T> etf;
  ProjectorVariant variant = ProjectorVariant::dual;

  static Model create(const RunConfig& config, std::size_t total_classes, std::uint64_t seed) {
    Model m;
    m.backbone = config.model.backbone == BackboneKind::linear ? Backbone<T>::pointwise(config.model.dims.in_channels)
                                                               : Backbone<T>::pass_through();
    m.projector = DualProjector<T>::create(config.model.dims, derive_seed(seed, "model"));
    m.etf = EtfClassifier<T>::build(total_classes, config.model.dims.proj_dim, derive_seed(seed, "etf"));
    m.variant = config.model.variant;
    return m;
  }

  Model clone() const { return Model{backbone.clone(), projector.clone(), etf, variant}; }

  // Final representation of raw inputs in the current phase.
  Tensor<T> represent(const Tensor<T>& raw) const { return projector.represent(backbone(raw)); }

  // Parameters that must stay fixed once the base session ends.
  std::vector<NamedParam<T>> base_parameters() const {
    auto out = backbone.named_parameters();
    for (const BranchId id : {BranchId::identity, BranchId::base}) {
      auto part = projector.named_branch_parameters(id);
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  std::vector<NamedParam<T>> named_parameters() const {
    auto out = backbone.named_parameters();
    auto rest = projector.named_parameters();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }
};

// SHA-256 over names, shapes and raw values.
template <typename T>
std::string parameter_checksum(const std::vector<NamedParam<T>>& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name);
    h.update(shape_str(p.tensor.shape()));
    h.update(p.tensor.data());
  }
  return h.hex();
}

struct TrainReport {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean batch loss per epoch (base) or per session (incremental)
};

namespace train_detail {

inline void check_loss(double v, const std::string& where) {
  if (!std::isfinite(v)) throw NumericError(where + ": non-finite loss " + std::to_string(v));
}

}  // namespace train_detail

// Base session: backbone, p_iden and g_base minimize the DR loss on D^(0).
template <typename T>
TrainReport train_base(Model<T>& model, const SessionStream<T>& stream, const OptimizerConfig& opt, std::uint64_t seed) {
  if (model.projector.has_incremental()) throw ContractError("train_base: projector already in the incremental phase");
  const auto& data = stream.sessions.at(0).train;
  std::vector<Tensor<T>> params = model.backbone.parameters();
  for (const BranchId id : {BranchId::identity, BranchId::base}) {
    auto part = model.projector.branch_parameters(id);
    params.insert(params.end(), part.begin(), part.end());
  }
  Sgd<T> sgd(params, opt.momentum, opt.weight_decay);
  const std::size_t n = data.size();
  const std::size_t per_epoch = (n + opt.base_batch - 1) / opt.base_batch;
  const CosineSchedule schedule{opt.base_lr, opt.min_lr, opt.base_epochs * per_epoch};
  TrainReport report;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.base_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(seed, "base_epoch", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t start = 0; start < n; start += opt.base_batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                         order.begin() + static_cast<long>(std::min(n, start + opt.base_batch)));
      std::vector<std::size_t> labels;
      for (const auto i : idx) labels.push_back(data.labels[i]);
      sgd.zero_grad();
      const auto features = model.backbone(index_select(data.features, 0, idx));
      const auto loss = base_objective(features, labels, model.projector, model.etf);
      const double v = static_cast<double>(loss.item());
      train_detail::check_loss(v, "train_base epoch " + std::to_string(epoch));
      backward(loss);
      sgd.step(schedule(step++));
      report.step_losses.push_back(v);
      total += v;
    }
    report.epoch_losses.push_back(total / static_cast<double>(per_epoch));
  }
  sgd.zero_grad();
  return report;
}

// Intermediate features F = f(x) without recording gradients.
template <typename T>
Tensor<T> extract_features(const Backbone<T>& backbone, const Tensor<T>& raw) {
  NoGradGuard guard;
  return backbone(raw).detach();
}

// Freezes the backbone and stores base-class prototypes.
template <typename T>
PrototypeMemory<T> finish_base_session(Model<T>& model, const SessionStream<T>& stream) {
  model.backbone.freeze();
  PrototypeMemory<T> memory;
  const auto& train = stream.sessions.at(0).train;
  memory.update(extract_features(model.backbone, train.features), train.labels, 0);
  return memory;
}

struct IncrementalSettings {
  OptimizerConfig optimizer;
  LossWeights losses;
  bool freeze_base = true;
  IncrementalInit inc_init = IncrementalInit::fresh;
};

inline IncrementalSettings incremental_settings(const RunConfig& c) {
  return {c.optimizer, c.losses, c.model.freeze_base, c.model.inc_init};
}

// One incremental session t >= 1. The dual variant spawns g_inc at t = 1 and
// optimizes the incremental objective; the single variant fine-tunes p_iden
// and g_base with the classification loss. Memory is updated afterwards.
template <typename T>
TrainReport train_incremental_session(Model<T>& model, const SessionStream<T>& stream, PrototypeMemory<T>& memory,
                                      std::size_t t, const IncrementalSettings& settings, std::uint64_t seed) {
  if (t == 0 || t >= stream.sessions.size()) throw ContractError("train_incremental_session: bad session index");
  if (!model.backbone.frozen()) throw ContractError("train_incremental_session: backbone must be frozen");
  const bool dual = model.variant == ProjectorVariant::dual;
  if (dual && !model.projector.has_incremental()) {
    model.projector.spawn_incremental_branch(derive_seed(seed, "spawn"), settings.inc_init, settings.freeze_base);
  }
  const auto& raw = stream.sessions[t].train;
  const LabeledSet<T> session{extract_features(model.backbone, raw.features), raw.labels};

  std::vector<Tensor<T>> params;
  if (dual) {
    params = model.projector.trainable_parameters();
  } else {
    for (const BranchId id : {BranchId::identity, BranchId::base}) {
      auto part = model.projector.branch_parameters(id);
      params.insert(params.end(), part.begin(), part.end());
    }
  }
  const auto& opt = settings.optimizer;
  Sgd<T> sgd(params, opt.momentum, opt.weight_decay);
  const CosineSchedule schedule{opt.inc_lr, opt.min_lr, opt.inc_iters};
  auto rng = make_rng(seed, "incremental_batches", t);
  TrainReport report;
  double total = 0;
  for (std::size_t it = 0; it < opt.inc_iters; ++it) {
    const auto batch = compose_batch(session, memory, opt.inc_batch, rng, opt.prototypes_per_batch);
    sgd.zero_grad();
    Tensor<T> loss = dual ? incremental_objective(batch, model.projector, model.etf, settings.losses).total
                          : base_objective(batch.features, batch.labels, model.projector, model.etf);
    const double v = static_cast<double>(loss.item());
    train_detail::check_loss(v, "session " + std::to_string(t) + " iteration " + std::to_string(it));
    backward(loss);
    sgd.step(schedule(it));
    report.step_losses.push_back(v);
    total += v;
  }
  sgd.zero_grad();
  if (opt.inc_iters > 0) report.epoch_losses.push_back(total / static_cast<double>(opt.inc_iters));
  memory.update(session.features, session.labels, t);
  return report;
}

}  // namespace fscil
