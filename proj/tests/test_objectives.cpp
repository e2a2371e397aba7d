#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cure/error.hpp"
#include "cure/objectives.hpp"
#include "support/gradcheck.hpp"

using namespace cure;

namespace {

struct Fixture {
    BlockModel model;
    BlockModel revision;
    Tensor x_nat;
    Tensor x_adv;
    std::vector<int> y;
};

Fixture make_fixture(std::uint64_t seed)
{
    const auto arch = ArchSpec::uniform(2, 2, {5, 4}, 3);
    std::mt19937_64 rng(seed);
    auto x = oracle::random_tensor({4, 2}, rng, 0.0, 1.0);
    auto noise = oracle::random_tensor({4, 2}, rng, -0.05, 0.05);
    std::vector<int> y{0, 1, 2, 1};
    return {BlockModel::init(arch, seed), BlockModel::init(arch, seed + 1000), x, add(x, noise).detach(), y};
}

} // namespace

TEST(Objectives, CrossEntropyByHand)
{
    const auto z = Tensor::from({2, 2}, {0.0, 0.0, std::log(3.0), 0.0});
    const std::vector<int> y{0, 0};
    // rows: log 2 and -log(3/4)
    EXPECT_NEAR(cross_entropy(z, y).item(), 0.5 * (std::log(2.0) - std::log(0.75)), 1e-15);
}

TEST(Objectives, KlByHand)
{
    const auto p = Tensor::from({1, 2}, {0.0, 0.0});
    const auto q = Tensor::from({1, 2}, {std::log(3.0), 0.0});
    // 0.5 log(0.5 / 0.75) + 0.5 log(0.5 / 0.25) = 0.5 log(4/3)
    EXPECT_NEAR(kl_div(p, q).item(), 0.5 * std::log(4.0 / 3.0), 1e-15);
    EXPECT_NEAR(kl_div(q, q).item(), 0.0, 1e-15);
    EXPECT_GT(kl_div(q, p).item(), 0.0);
}

TEST(Objectives, KlIsNonNegative)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::mt19937_64 rng(s);
        const auto a = oracle::random_tensor({3, 4}, rng, -5, 5);
        const auto b = oracle::random_tensor({3, 4}, rng, -5, 5);
        EXPECT_GE(kl_div(a, b).item(), -1e-15);
    }
}

TEST(Objectives, CompositeLossGradientsMatchFiniteDifferences)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto f = make_fixture(seed);
        EXPECT_LT(oracle::model_grad_check(f.model, [&](const BlockModel& m) { return cross_entropy(m.logits(f.x_nat), f.y); }), 1e-5);
        EXPECT_LT(oracle::model_grad_check(f.model, [&](const BlockModel& m) { return adv_loss(m, f.x_nat, f.y, f.x_adv).l_adv; }), 1e-5);
        EXPECT_LT(oracle::model_grad_check(f.model, [&](const BlockModel& m) {
                      const auto adv = adv_loss(m, f.x_nat, f.y, f.x_adv);
                      return total_loss(adv.l_adv, consistency_loss(m, f.revision, f.x_nat, f.x_adv), 0.7);
                  }), 1e-5);
    }
}

TEST(Objectives, LossWrtInputsMatchesFiniteDifferences)
{
    auto f = make_fixture(3);
    EXPECT_LT(oracle::grad_check([&](auto& v) { return adv_loss(f.model, f.x_nat, f.y, v[0]).l_adv; }, {f.x_adv}), 1e-5);
    EXPECT_LT(oracle::grad_check([&](auto& v) { return kl_div(v[0], v[1]); }, {f.x_nat, f.x_adv}), 1e-5);
}

TEST(Objectives, AdvLossIsCePlusKl)
{
    auto f = make_fixture(1);
    const auto a = adv_loss(f.model, f.x_nat, f.y, f.x_adv);
    EXPECT_DOUBLE_EQ(a.l_adv.item(), a.ce_nat.item() + a.kl_nat_adv.item());
    const auto same = adv_loss(f.model, f.x_nat, f.y, f.x_nat);
    EXPECT_NEAR(same.kl_nat_adv.item(), 0.0, 1e-15);
}

TEST(Objectives, ConsistencyGivesRevisionNoGradient)
{
    auto f = make_fixture(2);
    f.model.zero_grads();
    f.revision.zero_grads();
    backward(consistency_loss(f.model, f.revision, f.x_nat, f.x_adv));
    for (const auto& p : f.revision.parameters()) EXPECT_FALSE(p.has_grad());
    bool any = false;
    for (const auto& p : f.model.parameters()) any = any || p.has_grad();
    EXPECT_TRUE(any);

    // A revision model equal to the training model contributes nothing.
    const BlockModel twin = f.model;
    EXPECT_NEAR(consistency_loss(f.model, twin, f.x_nat, f.x_adv).item(), 0.0, 1e-15);
}

TEST(Objectives, ZeroGammaIsExactlyAdvLoss)
{
    auto f = make_fixture(4);
    auto grads_of = [&](double gamma) {
        f.model.zero_grads();
        const auto adv = adv_loss(f.model, f.x_nat, f.y, f.x_adv);
        const auto t = total_loss(adv.l_adv, consistency_loss(f.model, f.revision, f.x_nat, f.x_adv), gamma);
        EXPECT_EQ(t.item(), gamma == 0.0 ? adv.l_adv.item() : t.item());
        backward(t);
        std::vector<double> out;
        for (const auto& p : f.model.parameters()) out.insert(out.end(), p.grad().begin(), p.grad().end());
        return out;
    };
    const auto g0 = grads_of(0.0);
    f.model.zero_grads();
    backward(adv_loss(f.model, f.x_nat, f.y, f.x_adv).l_adv);
    std::vector<double> plain;
    for (const auto& p : f.model.parameters()) plain.insert(plain.end(), p.grad().begin(), p.grad().end());
    EXPECT_EQ(g0, plain);
    EXPECT_NE(grads_of(1.0), plain);
}

TEST(Objectives, BundleRecordsScalars)
{
    auto f = make_fixture(5);
    const auto adv = adv_loss(f.model, f.x_nat, f.y, f.x_adv);
    const auto cr = consistency_loss(f.model, f.revision, f.x_nat, f.x_adv);
    const auto t = total_loss(adv.l_adv, cr, 2.0);
    const auto b = make_bundle(adv, cr, t, 2.0);
    EXPECT_DOUBLE_EQ(b.total, b.l_adv + 2.0 * b.l_cr);
    EXPECT_DOUBLE_EQ(b.ce_nat, adv.ce_nat.item());
    EXPECT_THROW((void)total_loss(adv.l_adv, cr, -1.0), InvalidArgument);
}
