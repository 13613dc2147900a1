#pragma once

// Named finite-difference cases covering every differentiable op, the branch
// forward pass and the incremental objective. Each case builds fresh random
// leaves per point and reduces its output against a fixed random weighting.

#include <algorithm>
#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "fscil/gradcheck.hpp"
#include "fscil/objectives.hpp"
#include "fscil/ops.hpp"
#include "fscil/projector.hpp"
#include "fscil/rng.hpp"
#include "fscil/ss2d.hpp"
#include "fscil/ssm.hpp"

namespace fscil {

struct GradcheckCase {
  std::string name;
  std::string scope;  // "ops", "ssm", "branch" or "objective"
  std::function<double(Rng&)> run_point;
};

struct GradcheckOutcome {
  std::string name;
  double max_error = 0;
  std::size_t points = 0;
  double seconds = 0;
  bool passed = false;
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr std::size_t kGradcheckPoints = 10;

namespace gc_detail {

using Td = Tensor<double>;

inline Td leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = Td::uniform(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

// Values with magnitude in [lo, hi] and random sign.
inline Td signed_leaf(Shape shape, Rng& rng, double lo, double hi) {
  auto t = Td::uniform(std::move(shape), rng, lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.mutable_data())
    if (flip(rng)) v = -v;
  t.set_requires_grad(true);
  return t;
}

// sum(out * R) for a random R drawn once per point.
inline std::function<Td()> contracted(std::function<Td()> f, Rng& rng) {
  const Shape shape = [&] {
    NoGradGuard guard;
    return f().shape();
  }();
  auto weights = Td::uniform(shape, rng, -1.0, 1.0);
  return [f = std::move(f), weights] { return sum(mul(f(), weights)); };
}

inline double check(std::function<Td()> f, std::vector<Td> params, Rng& rng) {
  return gradient_check<double>(contracted(std::move(f), rng), std::move(params), kGradcheckStep);
}

inline void add_op(std::vector<GradcheckCase>& out, std::string name, std::function<double(Rng&)> fn) {
  out.push_back({std::move(name), "ops", std::move(fn)});
}

inline BranchDims tiny_dims() { return {3, 4, 2, 2, 3, {0, 1, 2, 3}}; }

// Replaces a zero gate so every branch parameter receives gradient.
inline void randomize_gate(BranchParams<double>& p, Rng& rng) {
  for (auto& v : p.p_z.weight.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  for (auto& v : p.p_z.bias.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
}

// A small incremental-phase batch with both groups present.
inline TaggedBatch<double> tiny_batch(const BranchDims& dims, std::size_t classes, Rng& rng) {
  TaggedBatch<double> b;
  const std::size_t n = 5;
  b.features = Td::uniform({n, dims.in_channels, dims.height, dims.width}, rng, -1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    b.labels.push_back(i % classes);
    b.groups.push_back(i < 2 ? SampleGroup::base : SampleGroup::novel);
    b.sources.push_back(i < 2 ? SampleSource::memory : SampleSource::session);
  }
  return b;
}

}  // namespace gc_detail

inline std::vector<GradcheckCase> default_gradcheck_cases() {
  using namespace gc_detail;
  std::vector<GradcheckCase> cases;

  add_op(cases, "add_broadcast", [](Rng& r) {
    auto a = leaf({3, 4}, r), b = leaf({4}, r);
    return check([=] { return add(a, b); }, {a, b}, r);
  });
  add_op(cases, "sub_broadcast", [](Rng& r) {
    auto a = leaf({2, 3, 4}, r), b = leaf({3, 1}, r);
    return check([=] { return sub(a, b); }, {a, b}, r);
  });
  add_op(cases, "mul_broadcast", [](Rng& r) {
    auto a = leaf({3, 4}, r), b = leaf({3, 1}, r);
    return check([=] { return mul(a, b); }, {a, b}, r);
  });
  add_op(cases, "div_broadcast", [](Rng& r) {
    auto a = leaf({3, 4}, r), b = signed_leaf({4}, r, 0.5, 2.0);
    return check([=] { return div(a, b); }, {a, b}, r);
  });
  add_op(cases, "scale", [](Rng& r) {
    auto a = leaf({5}, r);
    return check([=] { return scale(a, 2.5); }, {a}, r);
  });
  add_op(cases, "add_scalar", [](Rng& r) {
    auto a = leaf({5}, r);
    return check([=] { return add_scalar(a, -0.7); }, {a}, r);
  });
  add_op(cases, "neg", [](Rng& r) {
    auto a = leaf({5}, r);
    return check([=] { return neg(a); }, {a}, r);
  });
  add_op(cases, "exp", [](Rng& r) {
    auto a = leaf({6}, r, -2.0, 2.0);
    return check([=] { return exp(a); }, {a}, r);
  });
  add_op(cases, "log", [](Rng& r) {
    auto a = leaf({6}, r, 0.5, 3.0);
    return check([=] { return log(a); }, {a}, r);
  });
  add_op(cases, "sqrt", [](Rng& r) {
    auto a = leaf({6}, r, 0.5, 3.0);
    return check([=] { return sqrt(a); }, {a}, r);
  });
  add_op(cases, "square", [](Rng& r) {
    auto a = leaf({6}, r);
    return check([=] { return square(a); }, {a}, r);
  });
  add_op(cases, "abs", [](Rng& r) {
    auto a = signed_leaf({6}, r, 0.2, 1.5);
    return check([=] { return abs(a); }, {a}, r);
  });
  add_op(cases, "sigmoid", [](Rng& r) {
    auto a = leaf({6}, r, -4.0, 4.0);
    return check([=] { return sigmoid(a); }, {a}, r);
  });
  add_op(cases, "silu", [](Rng& r) {
    auto a = leaf({6}, r, -4.0, 4.0);
    return check([=] { return silu(a); }, {a}, r);
  });
  add_op(cases, "softplus", [](Rng& r) {
    auto a = leaf({6}, r, -6.0, 6.0);
    return check([=] { return softplus(a); }, {a}, r);
  });
  add_op(cases, "sum_all", [](Rng& r) {
    auto a = leaf({3, 4}, r);
    return check([=] { return sum(a); }, {a}, r);
  });
  add_op(cases, "mean_all", [](Rng& r) {
    auto a = leaf({3, 4}, r);
    return check([=] { return mean(a); }, {a}, r);
  });
  add_op(cases, "sum_axis", [](Rng& r) {
    auto a = leaf({2, 3, 4}, r);
    return check([=] { return sum(a, 1); }, {a}, r);
  });
  add_op(cases, "mean_axis_keepdim", [](Rng& r) {
    auto a = leaf({2, 3, 4}, r);
    return check([=] { return mean(a, 0, true); }, {a}, r);
  });
  add_op(cases, "norm_last", [](Rng& r) {
    auto a = leaf({3, 5}, r);
    return check([=] { return norm_last(a); }, {a}, r);
  });
  add_op(cases, "normalize_last", [](Rng& r) {
    auto a = leaf({3, 5}, r);
    return check([=] { return normalize_last(a); }, {a}, r);
  });
  add_op(cases, "cosine", [](Rng& r) {
    auto a = leaf({5}, r), b = leaf({5}, r);
    return check([=] { return cosine(a, b); }, {a, b}, r);
  });
  add_op(cases, "matmul", [](Rng& r) {
    auto a = leaf({3, 4}, r), b = leaf({4, 2}, r);
    return check([=] { return matmul(a, b); }, {a, b}, r);
  });
  add_op(cases, "linear", [](Rng& r) {
    auto x = leaf({2, 3, 4}, r), w = leaf({5, 4}, r), b = leaf({5}, r);
    return check([=] { return linear(x, w, b); }, {x, w, b}, r);
  });
  add_op(cases, "depthwise_conv1d", [](Rng& r) {
    auto x = leaf({2, 6, 3}, r), w = leaf({3, 3}, r), b = leaf({3}, r);
    return check([=] { return depthwise_conv1d(x, w, b, 1); }, {x, w, b}, r);
  });
  add_op(cases, "reshape", [](Rng& r) {
    auto a = leaf({2, 6}, r);
    return check([=] { return reshape(a, {3, 4}); }, {a}, r);
  });
  add_op(cases, "permute", [](Rng& r) {
    auto a = leaf({2, 3, 4}, r);
    return check([=] { return permute(a, {2, 0, 1}); }, {a}, r);
  });
  add_op(cases, "transpose", [](Rng& r) {
    auto a = leaf({2, 3, 4}, r);
    return check([=] { return transpose(a, 0, 2); }, {a}, r);
  });
  add_op(cases, "index_select_repeats", [](Rng& r) {
    auto a = leaf({4, 3}, r);
    return check([=] { return index_select(a, 0, {3, 0, 3, 1}); }, {a}, r);
  });
  add_op(cases, "slice", [](Rng& r) {
    auto a = leaf({2, 5}, r);
    return check([=] { return slice(a, 1, 1, 3); }, {a}, r);
  });
  add_op(cases, "concat", [](Rng& r) {
    auto a = leaf({2, 3}, r), b = leaf({1, 3}, r);
    return check([=] { return concat(std::vector<Td>{a, b}, 0); }, {a, b}, r);
  });

  auto scan_case = [](double delta_lo, double delta_hi) {
    return [delta_lo, delta_hi](Rng& r) {
      auto x = leaf({2, 6, 3}, r), delta = leaf({2, 6, 3}, r, delta_lo, delta_hi);
      auto b = leaf({2, 6, 4}, r), c = leaf({2, 6, 4}, r), a = leaf({3, 4}, r, -2.0, -0.5);
      return check([=] { return ssm::selective_scan(x, delta, b, c, a); }, {x, delta, b, c, a}, r);
    };
  };
  cases.push_back({"selective_scan", "ssm", scan_case(0.05, 0.8)});
  cases.push_back({"selective_scan_small_steps", "ssm", scan_case(1e-3, 5e-3)});

  cases.push_back({"branch_forward", "branch", [](Rng& r) {
                     auto p = BranchParams<double>::init(tiny_dims(), r);
                     randomize_gate(p, r);
                     auto features = leaf({2, 3, 2, 3}, r);
                     auto params = p.parameters();
                     params.push_back(features);
                     return check([=] { return branch_forward(p, features).mu; }, params, r);
                   }});

  cases.push_back({"dr_loss", "objective", [](Rng& r) {
                     const auto etf = EtfClassifier<double>::build(3, 5, r());
                     auto mu = leaf({4, 5}, r);
                     const std::vector<std::size_t> labels{0, 2, 1, 2};
                     return check([=] { return dr_loss(mu, labels, etf); }, {mu}, r);
                   }});
  cases.push_back({"suppression_loss", "objective", [](Rng& r) {
                     auto zb = leaf({2, 3, 4}, r), zn = leaf({3, 3, 4}, r);
                     return check([=] { return suppression_loss(zb, zn, 100.0, 0.1); }, {zb, zn}, r);
                   }});
  cases.push_back({"average_scan_params", "objective", [](Rng& r) {
                     std::vector<ScanParams<double>> dirs;
                     std::vector<Td> params;
                     for (int k = 0; k < 2; ++k) {
                       dirs.push_back({leaf({3, 4, 2}, r), leaf({3, 4, 2}, r), leaf({3, 4, 5}, r, 0.1, 1.0)});
                       params.insert(params.end(), {dirs.back().b, dirs.back().c, dirs.back().delta});
                     }
                     return check(
                         [=] {
                           const auto avg = *average_scan_params(dirs, {0, 2});
                           return concat(std::vector<Td>{avg.b, avg.c, avg.delta}, 0);
                         },
                         params, r);
                   }});
  cases.push_back({"separation_loss", "objective", [](Rng& r) {
                     ScanAverages<double> base{leaf({4}, r), leaf({4}, r), leaf({5}, r, 0.1, 1.0)};
                     ScanAverages<double> novel{leaf({4}, r), leaf({4}, r), leaf({5}, r, 0.1, 1.0)};
                     return check([=] { return separation_loss(base, novel).loss; },
                                  {base.b, base.c, base.delta, novel.b, novel.c, novel.delta}, r);
                   }});
  cases.push_back({"base_objective", "objective", [](Rng& r) {
                     auto dims = tiny_dims();
                     auto projector = DualProjector<double>::create(dims, r());
                     const auto etf = EtfClassifier<double>::build(3, dims.proj_dim, r());
                     const auto batch = tiny_batch(dims, 3, r);
                     std::vector<Td> params;
                     for (const BranchId id : {BranchId::identity, BranchId::base})
                       for (auto& t : projector.branch_parameters(id)) params.push_back(t);
                     return check([=] { return base_objective(batch.features, batch.labels, projector, etf); }, params, r);
                   }});
  cases.push_back({"incremental_objective", "objective", [](Rng& r) {
                     auto dims = tiny_dims();
                     auto projector = DualProjector<double>::create(dims, r());
                     projector.spawn_incremental_branch(r());
                     randomize_gate(*projector.g_inc(), r);
                     const auto etf = EtfClassifier<double>::build(3, dims.proj_dim, r());
                     const auto batch = tiny_batch(dims, 3, r);
                     const LossWeights weights{};
                     return check([=] { return incremental_objective(batch, projector, etf, weights).total; },
                                  projector.trainable_parameters(), r);
                   }});
  return cases;
}

inline bool scope_matches(const std::string& scope, const GradcheckCase& c) {
  return scope == "all" || scope == c.scope || scope == c.name;
}

inline GradcheckOutcome run_gradcheck_case(const GradcheckCase& c, std::uint64_t seed,
                                           std::size_t points = kGradcheckPoints) {
  const auto start = std::chrono::steady_clock::now();
  GradcheckOutcome out{c.name, 0.0, points, 0.0, false};
  for (std::size_t i = 0; i < points; ++i) {
    auto rng = make_rng(seed, c.name, i);
    out.max_error = std::max(out.max_error, c.run_point(rng));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.passed = out.max_error <= kGradcheckTolerance;
  return out;
}

}  // namespace fscil
