#include <gtest/gtest.h>

#include <cmath>

#include "fscil/ops.hpp"
#include "fscil/ssm.hpp"
#include "scan_oracles.hpp"

using namespace fscil;
using namespace fscil::ssm;
using Td = Tensor<double>;

TEST(Discretize, ClosedFormAtLn2) {
  const auto d = discretize_zoh(-1.0, 1.0, std::log(2.0));
  EXPECT_NEAR(d.a_bar, 0.5, 1e-15);
  EXPECT_NEAR(d.b_bar, 0.5, 1e-15);
}

TEST(Discretize, SmallStepLimit) {
  const auto d = discretize_zoh(-1.0, 1.0, 1e-8);
  EXPECT_NEAR(d.a_bar, 1.0 - 1e-8, 1e-15);
  EXPECT_NEAR(d.b_bar, 1e-8, 1e-15);
}

TEST(Discretize, VanishingDecayUsesLimitBranch) {
  const auto d = discretize_zoh(-1e-12, 2.0, 0.1);
  EXPECT_NEAR(d.a_bar, 1.0, 1e-12);
  EXPECT_NEAR(d.b_bar, 0.2, 1e-12);
}

TEST(Discretize, RejectsNonPositiveStep) {
  EXPECT_THROW(discretize_zoh(-1.0, 1.0, 0.0), ContractError);
  EXPECT_THROW(discretize_zoh(-1.0, 1.0, -0.5), ContractError);
}

TEST(Hippo, Definitional) {
  EXPECT_EQ(hippo_init<double>(1), (std::vector<double>{-1.0}));
  EXPECT_EQ(hippo_init<double>(4), (std::vector<double>{-1.0, -2.0, -3.0, -4.0}));
  const auto a = hippo_init<double>(16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LT(a[i], 0.0);
    if (i > 0) { EXPECT_LT(a[i], a[i - 1]); }
  }
  EXPECT_THROW(hippo_init<double>(0), ContractError);
}

TEST(StateMatrix, RejectsNonNegativeEntries) {
  EXPECT_THROW(StateMatrix<double>(1, 2, {-1.0, 0.0}), ContractError);
  EXPECT_THROW(StateMatrix<double>(1, 2, {-1.0}), ShapeError);
}

TEST(S6Step, ZeroDynamics) {
  const StateMatrix<double> a(1, 1, {-1.0});
  const auto out = s6_step<double>(std::vector<double>{0.0}, HiddenState<double>::zeros(1, 1), std::vector<double>{1.0},
                                   std::vector<double>{1.0}, std::vector<double>{0.5}, a);
  EXPECT_EQ(out.h.h[0], 0.0);
  EXPECT_EQ(out.y[0], 0.0);
}

TEST(S6Step, ScalarWorkedExample) {
  const StateMatrix<double> a(1, 1, {-1.0});
  HiddenState<double> h{1, 1, {1.0}};
  const auto out = s6_step<double>(std::vector<double>{1.0}, h, std::vector<double>{1.0}, std::vector<double>{2.0},
                                   std::vector<double>{std::log(2.0)}, a);
  EXPECT_NEAR(out.h.h[0], 1.0, 1e-15);
  EXPECT_NEAR(out.y[0], 2.0, 1e-15);
}

TEST(S6Step, MatchesSingleStepScan) {
  auto rng = make_rng(11, "s6_step");
  const auto a = oracle::random_state_matrix(3, 4, rng);
  const auto in = oracle::random_inputs(1, 3, 4, rng, false);
  const auto step = s6_step<double>(in.x, HiddenState<double>::zeros(3, 4), in.b, in.c, in.delta, a);
  EXPECT_EQ(step.y, selective_scan_sequential(in, a));
}

TEST(SequentialScan, ZeroInputGivesZeroOutput) {
  auto rng = make_rng(12, "zero_scan");
  const auto a = oracle::random_state_matrix(2, 3, rng);
  auto in = oracle::random_inputs(8, 2, 3, rng, false);
  std::fill(in.x.begin(), in.x.end(), 0.0);
  for (const double v : selective_scan_sequential(in, a)) EXPECT_EQ(v, 0.0);
}

TEST(SequentialScan, ScalarConstantCaseMatchesKernelForm) {
  const StateMatrix<double> a(1, 1, {-0.7});
  ScanInputs<double> in{3, 1, 1, {0.3, -1.2, 0.8}, {0.9, 0.9, 0.9}, {1.4, 1.4, 1.4}, {0.25, 0.25, 0.25}};
  const auto seq = selective_scan_sequential(in, a);
  const auto ker = scan_kernel_form(in, a);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(seq[t], ker[t], 1e-14);
}

TEST(SequentialScan, MatchesBruteForceOnTimeVariantInputs) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto rng = make_rng(13, "brute_force", k);
    const auto a = oracle::random_state_matrix(3, 5, rng);
    const auto in = oracle::random_inputs(32, 3, 5, rng, false);
    EXPECT_LE(oracle::max_abs_diff(selective_scan_sequential(in, a), oracle::brute_force_scan(in, a)), 1e-12);
  }
}

TEST(KernelForm, MemorylessWhenDecayIsZero) {
  const std::vector<double> x{1.0, -2.0, 0.5}, a_bar{0.0}, b_bar{0.4}, c{1.5};
  const auto y = scan_kernel_form<double>(x, a_bar, b_bar, c, 3, 1);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_NEAR(y[t], 1.5 * 0.4 * x[t], 1e-15);
}

TEST(KernelForm, SingleStep) {
  const std::vector<double> x{2.0}, a_bar{0.3}, b_bar{0.4}, c{1.5};
  EXPECT_NEAR(scan_kernel_form<double>(x, a_bar, b_bar, c, 1, 1)[0], 1.5 * 0.4 * 2.0, 1e-15);
}

TEST(KernelForm, MatchesSequentialOnRandomConstants) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    auto rng = make_rng(14, "kernel_form", k);
    const auto a = oracle::random_state_matrix(4, 8, rng);
    const auto in = oracle::random_inputs(16, 4, 8, rng, true);
    EXPECT_LE(oracle::max_abs_diff(selective_scan_sequential(in, a), scan_kernel_form(in, a)), 1e-10);
  }
}

TEST(KernelForm, RejectsTimeVariantInputs) {
  auto rng = make_rng(15, "kernel_reject");
  const auto a = oracle::random_state_matrix(2, 2, rng);
  EXPECT_THROW(scan_kernel_form(oracle::random_inputs(4, 2, 2, rng, false), a), ContractError);
}

TEST(ChunkedScan, MatchesSequentialForEveryChunkLength) {
  auto rng = make_rng(16, "chunked");
  const auto a = oracle::random_state_matrix(3, 4, rng);
  const auto in = oracle::random_inputs(23, 3, 4, rng, false);
  const auto ref = selective_scan_sequential(in, a);
  for (const std::size_t chunk : {1, 2, 5, 7, 23, 40})
    EXPECT_LE(oracle::max_abs_diff(ref, selective_scan_chunked(in, a, chunk)), 1e-12) << chunk;
  EXPECT_THROW(selective_scan_chunked(in, a, 0), ContractError);
}

namespace {

// Batched tensor scan evaluated on a single sequence.
std::vector<double> batched(const ScanInputs<double>& in, const StateMatrix<double>& a) {
  const std::size_t L = in.length, C = in.channels, S = in.state;
  const auto y = selective_scan(Td({1, L, C}, in.x), Td({1, L, C}, in.delta), Td({1, L, S}, in.b), Td({1, L, S}, in.c),
                                Td({C, S}, std::vector<double>(a.values().begin(), a.values().end())));
  return y.to_vector();
}

}  // namespace

TEST(BatchedScan, MatchesSequentialAcrossStepRegimes) {
  for (const double scale : {1.0, 1e-2, 1e-5, 1e-9}) {
    auto rng = make_rng(17, "batched", static_cast<std::uint64_t>(-std::log10(scale)));
    const auto a = oracle::random_state_matrix(3, 4, rng);
    auto in = oracle::random_inputs(12, 3, 4, rng, false);
    for (auto& d : in.delta) d *= scale;
    const auto ref = selective_scan_sequential(in, a);
    EXPECT_LE(oracle::max_abs_diff(ref, batched(in, a)), 1e-13) << scale;
  }
}

TEST(BatchedScan, SamplesAreIndependent) {
  auto rng = make_rng(18, "batched_samples");
  const std::size_t L = 6, C = 2, S = 3;
  const auto x = Td::randn({2, L, C}, rng), b = Td::randn({2, L, S}, rng), c = Td::randn({2, L, S}, rng);
  const auto delta = Td::uniform({2, L, C}, rng, 0.01, 0.5);
  const auto a = Td::uniform({C, S}, rng, -2.0, -0.1);
  const auto both = selective_scan(x, delta, b, c, a);
  const auto second = selective_scan(slice(x, 0, 1, 1), slice(delta, 0, 1, 1), slice(b, 0, 1, 1), slice(c, 0, 1, 1), a);
  for (std::size_t i = 0; i < L * C; ++i) EXPECT_EQ(both.data()[L * C + i], second.data()[i]);
}

TEST(BatchedScan, StepUnderflowIsNumericFailure) {
  const auto x = Td::ones({1, 2, 1}), b = Td::ones({1, 2, 1}), c = Td::ones({1, 2, 1}), a = Td::full({1, 1}, -1.0);
  EXPECT_THROW(selective_scan(x, Td({1, 2, 1}, {0.1, 0.0}), b, c, a), NumericError);
  EXPECT_THROW(selective_scan(x, Td({1, 2, 1}, {0.1, -0.1}), b, c, a), ContractError);
  EXPECT_THROW(selective_scan(x, Td::full({1, 2, 1}, 0.1), b, c, Td::full({1, 1}, 0.5)), ContractError);
}
