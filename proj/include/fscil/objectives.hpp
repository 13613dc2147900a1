#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fscil/ops.hpp"
#include "fscil/projector.hpp"
#include "fscil/rng.hpp"
#include "fscil/ss2d.hpp"

namespace fscil {

// Fixed simplex equiangular tight frame: K unit prototypes in R^{D'} with
// pairwise inner product -1/(K-1). Never trained.
template <typename T>
class EtfClassifier {
 public:
  // W = sqrt(K/(K-1)) * U (I_K - 11^T/K), U a seeded random orthonormal [D' x K]
  // basis; prototypes are the columns of W. With D' = K-1 the simplex is built
  // in the (K-1)-dimensional complement of 1 and rotated into R^{D'}.
  static EtfClassifier build(std::size_t k_total, std::size_t d_prime, std::uint64_t seed) {
    if (k_total < 2) throw ContractError("build_etf: at least two classes are required");
    if (d_prime + 1 < k_total) {
      throw ContractError("build_etf: d_prime " + std::to_string(d_prime) + " < k_total - 1 = " +
                          std::to_string(k_total - 1));
    }
    const auto K = static_cast<Eigen::Index>(k_total);
    const auto D = static_cast<Eigen::Index>(d_prime);
    const double scale = std::sqrt(static_cast<double>(k_total) / static_cast<double>(k_total - 1));
    Eigen::MatrixXd protos(K, D);  // rows are prototypes
    if (d_prime >= k_total) {
      const Eigen::MatrixXd basis = random_orthonormal(D, K, seed);
      const Eigen::MatrixXd centering =
          Eigen::MatrixXd::Identity(K, K) - Eigen::MatrixXd::Constant(K, K, 1.0 / static_cast<double>(k_total));
      protos = (scale * basis * centering).transpose();
    } else {
      // Orthonormal basis of the complement of 1 in R^K from a QR of the centering matrix.
      const Eigen::MatrixXd centering =
          Eigen::MatrixXd::Identity(K, K) - Eigen::MatrixXd::Constant(K, K, 1.0 / static_cast<double>(k_total));
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(centering);
      const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(K, K - 1);
      const Eigen::MatrixXd simplex = scale * centering * q;  // [K x (K-1)]
      const Eigen::MatrixXd rotation = random_orthonormal(D, K - 1, seed);
      protos = simplex * rotation.transpose();
    }
    std::vector<T> data(static_cast<std::size_t>(K * D));
    for (Eigen::Index i = 0; i < K; ++i)
      for (Eigen::Index j = 0; j < D; ++j) data[static_cast<std::size_t>(i * D + j)] = static_cast<T>(protos(i, j));
    EtfClassifier etf;
    etf.prototypes_ = Tensor<T>({k_total, d_prime}, std::move(data));
    return etf;
  }

  std::size_t num_classes() const { return prototypes_.shape()[0]; }
  std::size_t dim() const { return prototypes_.shape()[1]; }
  const Tensor<T>& prototypes() const { return prototypes_; }
  std::span<const T> prototype(std::size_t k) const { return prototypes_.data().subspan(k * dim(), dim()); }

 private:
  static Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    auto rng = make_rng(seed, "etf");
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  }

  Tensor<T> prototypes_ = Tensor<T>::zeros({0, 0});
};

// Mean over the batch of 0.5 * (w_y . mu_hat - 1)^2 with mu_hat = mu / |mu|.
template <typename T>
Tensor<T> dr_loss(const Tensor<T>& mu, std::span<const std::size_t> labels, const EtfClassifier<T>& etf) {
  if (mu.rank() != 2 || mu.shape()[1] != etf.dim()) {
    throw ShapeError("dr_loss: expected [N, " + std::to_string(etf.dim()) + "], got " + shape_str(mu.shape()));
  }
  if (labels.size() != mu.shape()[0]) throw ShapeError("dr_loss: label count does not match batch");
  if (labels.empty()) throw ShapeError("dr_loss: empty batch");
  for (const auto y : labels) {
    if (y >= etf.num_classes()) throw ContractError("dr_loss: unknown label " + std::to_string(y));
  }
  const auto norms = norm_last(mu);
  for (const T n : norms.data()) {
    if (n == T{0}) throw NumericError("dr_loss: zero-norm representation");
  }
  const auto mu_hat = normalize_last(mu);
  const auto targets = index_select(etf.prototypes(), 0, std::vector<std::size_t>(labels.begin(), labels.end()));
  const auto dots = sum(mul(mu_hat, targets), -1);
  return scale(mean(square(add_scalar(dots, T{-1}))), T{0.5});
}

struct LossWeights {
  double lambda1 = 100.0;
  double lambda2 = 0.1;
  double lambda3 = 0.1;

  bool in_paper_range() const {
    return lambda1 >= 50 && lambda1 <= 200 && lambda2 >= 0.001 && lambda2 <= 1 && lambda3 >= 0.05 && lambda3 <= 0.5;
  }
};

// Mean of squared entries, i.e. sum ||z_i||^2 / (count * L * D'); zero for an empty group.
template <typename T>
Tensor<T> mean_square(const Tensor<T>& z) {
  if (z.numel() == 0) return Tensor<T>::scalar(T{0});
  return mean(square(z));
}

// lambda1 * mean_square(z_base) - lambda2 * mean_square(z_novel)
template <typename T>
Tensor<T> suppression_loss(const Tensor<T>& z_base, const Tensor<T>& z_novel, T lambda1, T lambda2) {
  return sub(scale(mean_square(z_base), lambda1), scale(mean_square(z_novel), lambda2));
}

template <typename T>
struct ScanAverages {
  Tensor<T> b;      // [state_dim]
  Tensor<T> c;      // [state_dim]
  Tensor<T> delta;  // [D']
};

// Mean over the selected samples, all directions and all positions, keeping
// the feature axis. No samples selected: nullopt.
template <typename T>
std::optional<ScanAverages<T>> average_scan_params(const std::vector<ScanParams<T>>& per_direction,
                                                   const std::vector<std::size_t>& samples) {
  if (samples.empty()) return std::nullopt;
  if (per_direction.empty()) throw ContractError("average_scan_params: no directions");
  auto average = [&](auto member) {
    Tensor<T> total;
    for (std::size_t k = 0; k < per_direction.size(); ++k) {
      const Tensor<T>& p = per_direction[k].*member;
      const auto picked = index_select(p, 0, samples);
      const std::size_t F = p.shape()[2];
      const auto m = mean(reshape(picked, {picked.shape()[0] * picked.shape()[1], F}), 0);
      total = k == 0 ? m : add(total, m);
    }
    return scale(total, T{1} / static_cast<T>(per_direction.size()));
  };
  return ScanAverages<T>{average(&ScanParams<T>::b), average(&ScanParams<T>::c), average(&ScanParams<T>::delta)};
}

template <typename T>
struct SeparationResult {
  Tensor<T> loss;
  int skipped_terms = 0;  // pairs dropped because an average had zero norm
};

// |cos(B_b, B_n)| + |cos(C_b, C_n)| + |cos(Delta_b, Delta_n)|
template <typename T>
SeparationResult<T> separation_loss(const ScanAverages<T>& base, const ScanAverages<T>& novel) {
  SeparationResult<T> result{Tensor<T>::scalar(T{0}), 0};
  bool first = true;
  auto term = [&](const Tensor<T>& a, const Tensor<T>& b) {
    if (norm_last(a).item() == T{0} || norm_last(b).item() == T{0}) {
      ++result.skipped_terms;
      return;
    }
    const auto t = abs(cosine(a, b));
    result.loss = first ? t : add(result.loss, t);
    first = false;
  };
  term(base.b, novel.b);
  term(base.c, novel.c);
  term(base.delta, novel.delta);
  return result;
}

enum class SampleGroup { base, novel };
enum class SampleSource { session, memory };

// Projector inputs for one incremental step with base/novel tags.
template <typename T>
struct TaggedBatch {
  Tensor<T> features;  // [N, D, H, W]
  std::vector<std::size_t> labels;
  std::vector<SampleGroup> groups;
  std::vector<SampleSource> sources;

  std::size_t size() const { return labels.size(); }

  std::vector<std::size_t> indices(SampleGroup g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i] == g) out.push_back(i);
    return out;
  }
};

template <typename T>
Tensor<T> base_objective(const Tensor<T>& features, std::span<const std::size_t> labels,
                         const DualProjector<T>& projector, const EtfClassifier<T>& etf) {
  return dr_loss(projector.forward_base_phase(features), labels, etf);
}

template <typename T>
struct ObjectiveTerms {
  Tensor<T> total;
  Tensor<T> cls;
  Tensor<T> supp_base;   // mean_square(Z_inc,b)
  Tensor<T> supp_novel;  // -mean_square(Z_inc,n)
  Tensor<T> sep;
  bool sep_applied = false;
};

// L_cls + lambda1 * L_supp^base + lambda2 * L_supp^novel + lambda3 * L_sep.
// Terms whose weight is zero are not computed; group-dependent terms are
// skipped when the batch lacks that group.
template <typename T>
ObjectiveTerms<T> incremental_objective(const TaggedBatch<T>& batch, const DualProjector<T>& projector,
                                        const EtfClassifier<T>& etf, const LossWeights& weights) {
  if (batch.groups.size() != batch.size() || batch.features.rank() != 4 || batch.features.shape()[0] != batch.size()) {
    throw ContractError("incremental_objective: batch is missing group tags");
  }
  const auto out = projector.forward_incremental_phase(batch.features);
  ObjectiveTerms<T> terms;
  terms.cls = dr_loss(out.mu, batch.labels, etf);
  terms.supp_base = Tensor<T>::scalar(T{0});
  terms.supp_novel = Tensor<T>::scalar(T{0});
  terms.sep = Tensor<T>::scalar(T{0});
  terms.total = terms.cls;
  const auto base_idx = batch.indices(SampleGroup::base);
  const auto novel_idx = batch.indices(SampleGroup::novel);
  if (weights.lambda1 != 0 && !base_idx.empty()) {
    terms.supp_base = mean_square(index_select(out.aux.z_gate, 0, base_idx));
    terms.total = add(terms.total, scale(terms.supp_base, static_cast<T>(weights.lambda1)));
  }
  if (weights.lambda2 != 0 && !novel_idx.empty()) {
    terms.supp_novel = neg(mean_square(index_select(out.aux.z_gate, 0, novel_idx)));
    terms.total = add(terms.total, scale(terms.supp_novel, static_cast<T>(weights.lambda2)));
  }
  if (weights.lambda3 != 0) {
    const auto avg_b = average_scan_params(out.aux.scan_params, base_idx);
    const auto avg_n = average_scan_params(out.aux.scan_params, novel_idx);
    if (avg_b && avg_n) {
      auto sep = separation_loss(*avg_b, *avg_n);
      if (sep.skipped_terms < 3) {
        terms.sep = sep.loss;
        terms.sep_applied = true;
        terms.total = add(terms.total, scale(terms.sep, static_cast<T>(weights.lambda3)));
      }
    }
  }
  return terms;
}

}  // namespace fscil
