#include <gtest/gtest.h>

#include <algorithm>

#include "fscil/harness/optim.hpp"
#include "fscil/objectives.hpp"
#include "fscil/projector.hpp"

using namespace fscil;
using Td = Tensor<double>;

namespace {

BranchDims dims() { return {4, 6, 3, 2, 3, {0, 1, 2, 3}}; }

Td features(std::size_t n, std::uint64_t seed) {
  auto rng = make_rng(seed, "projector_test");
  return Td::randn({n, 4, 2, 3}, rng);
}

std::vector<std::vector<double>> snapshot(const std::vector<NamedParam<double>>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST(DualProjector, StartsInBasePhase) {
  const auto p = DualProjector<double>::create(dims(), 1);
  EXPECT_EQ(p.phase(), Phase::base);
  EXPECT_FALSE(p.has_incremental());
  EXPECT_THROW(p.forward_incremental_phase(features(2, 1)), ContractError);
  EXPECT_EQ(p.forward_base_phase(features(2, 1)).shape(), (Shape{2, 6}));
}

TEST(DualProjector, IdentityBranchPoolsThenProjects) {
  const auto p = DualProjector<double>::create(dims(), 2);
  const auto f = features(3, 2);
  const auto out = p.identity_branch(f);
  const auto w = p.p_iden().weight.data();
  const auto b = p.p_iden().bias.data();
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t o = 0; o < 6; ++o) {
      double acc = b[o];
      for (std::size_t c = 0; c < 4; ++c) {
        double pooled = 0;
        for (std::size_t l = 0; l < 6; ++l) pooled += f.data()[(n * 4 + c) * 6 + l];
        acc += w[o * 4 + c] * pooled / 6.0;
      }
      EXPECT_NEAR(out.data()[n * 6 + o], acc, 1e-12);
    }
  }
  EXPECT_THROW(p.identity_branch(Td::zeros({1, 3, 2, 3})), ShapeError);
}

TEST(DualProjector, SpawnLeavesRepresentationBitIdentical) {
  for (const auto init : {IncrementalInit::fresh, IncrementalInit::copy}) {
    auto p = DualProjector<double>::create(dims(), 3);
    auto rng = make_rng(3, "perturb");
    for (auto& t : p.g_base().parameters())
      for (auto& v : t.mutable_data()) v += 0.1 * std::normal_distribution<double>(0, 1)(rng);
    const auto f = features(5, 3);
    const auto before = p.forward_base_phase(f);
    p.spawn_incremental_branch(11, init);
    const auto after = p.forward_incremental_phase(f);
    for (const double v : after.mu_inc.data()) EXPECT_EQ(v, 0.0);
    ASSERT_EQ(after.mu.shape(), before.shape());
    for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_EQ(after.mu.data()[i], before.data()[i]);
    EXPECT_EQ(p.phase(), Phase::incremental);
  }
}

TEST(DualProjector, SpawnTwiceIsAnError) {
  auto p = DualProjector<double>::create(dims(), 4);
  p.spawn_incremental_branch(1);
  EXPECT_THROW(p.spawn_incremental_branch(2), ContractError);
}

TEST(DualProjector, SpawnFreezesIdentityAndBase) {
  auto p = DualProjector<double>::create(dims(), 5);
  p.spawn_incremental_branch(1);
  EXPECT_TRUE(p.is_frozen(BranchId::identity));
  EXPECT_TRUE(p.is_frozen(BranchId::base));
  EXPECT_FALSE(p.is_frozen(BranchId::incremental));
  for (const auto& t : p.branch_parameters(BranchId::identity)) EXPECT_FALSE(t.requires_grad());
  for (const auto& t : p.branch_parameters(BranchId::base)) EXPECT_FALSE(t.requires_grad());
  const auto trainable = p.trainable_parameters();
  EXPECT_EQ(trainable.size(), p.branch_parameters(BranchId::incremental).size());
  for (const auto& t : trainable) EXPECT_TRUE(t.requires_grad());
}

TEST(DualProjector, SpawnWithoutFreezeKeepsEverythingTrainable) {
  auto p = DualProjector<double>::create(dims(), 6);
  p.spawn_incremental_branch(1, IncrementalInit::fresh, false);
  EXPECT_TRUE(p.frozen().empty());
  EXPECT_EQ(p.trainable_parameters().size(), p.named_parameters().size());
}

TEST(DualProjector, UnfreezingIsRejected) {
  auto p = DualProjector<double>::create(dims(), 7);
  p.spawn_incremental_branch(1);
  EXPECT_THROW(p.set_trainable(BranchId::base, true), ContractError);
  EXPECT_THROW(p.set_trainable(BranchId::identity, true), ContractError);
  EXPECT_NO_THROW(p.set_trainable(BranchId::incremental, true));
  auto fresh = DualProjector<double>::create(dims(), 7);
  EXPECT_THROW(fresh.set_trainable(BranchId::incremental, false), ContractError);
}

TEST(DualProjector, OptimizerStepsNeverTouchFrozenBranches) {
  auto p = DualProjector<double>::create(dims(), 8);
  p.spawn_incremental_branch(1);
  const auto etf = EtfClassifier<double>::build(6, 6, 8);
  const auto frozen_before = snapshot(p.named_branch_parameters(BranchId::base));
  const auto iden_before = snapshot(p.named_branch_parameters(BranchId::identity));
  const auto inc_before = snapshot(p.named_branch_parameters(BranchId::incremental));
  Sgd<double> sgd(p.trainable_parameters(), 0.9, 5e-4);
  const std::vector<std::size_t> labels{0, 1, 2, 3};
  for (int step = 0; step < 3; ++step) {
    sgd.zero_grad();
    backward(dr_loss(p.forward_incremental_phase(features(4, 8 + step)).mu, labels, etf));
    sgd.step(0.1);
  }
  EXPECT_EQ(snapshot(p.named_branch_parameters(BranchId::base)), frozen_before);
  EXPECT_EQ(snapshot(p.named_branch_parameters(BranchId::identity)), iden_before);
  EXPECT_NE(snapshot(p.named_branch_parameters(BranchId::incremental)), inc_before);
}

TEST(DualProjector, CloneOwnsItsStorage) {
  auto p = DualProjector<double>::create(dims(), 9);
  p.spawn_incremental_branch(2);
  auto q = p.clone();
  q.g_inc()->p_x.weight.mutable_data()[0] += 1.0;
  EXPECT_NE(q.g_inc()->p_x.weight.data()[0], p.g_inc()->p_x.weight.data()[0]);
  EXPECT_EQ(q.frozen(), p.frozen());
}

TEST(DualProjector, CopyInitStartsFromBaseWeights) {
  auto p = DualProjector<double>::create(dims(), 10);
  p.spawn_incremental_branch(3, IncrementalInit::copy);
  const auto base = p.named_branch_parameters(BranchId::base);
  const auto inc = p.named_branch_parameters(BranchId::incremental);
  ASSERT_EQ(base.size(), inc.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const bool gate = inc[i].name.find(".p_z.") != std::string::npos;
    const auto a = base[i].tensor.data();
    const auto b = inc[i].tensor.data();
    if (gate) {
      EXPECT_TRUE(std::all_of(b.begin(), b.end(), [](double v) { return v == 0.0; })) << inc[i].name;
    } else {
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << inc[i].name;
    }
  }
}
