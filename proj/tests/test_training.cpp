#include <gtest/gtest.h>

#include <cmath>

#include "cure/error.hpp"
#include "cure/training.hpp"

using namespace cure;

namespace {

const Split& moons()
{
    static const Split s = split_dataset(gen_synthetic(SyntheticKind::TwoMoons, 240, 0.15, 1), 0.25, 1);
    return s;
}

ArchSpec arch()
{
    return ArchSpec::uniform(2, 3, {8}, 2);
}

TrainConfig small_cfg(double eps = 0.08, std::size_t epochs = 3)
{
    auto c = default_train_config(eps);
    c.epochs = epochs;
    c.attack.steps = 3;
    c.eval_attack.steps = 3;
    c.seed = 5;
    return c;
}

std::vector<std::vector<double>> values(const BlockModel& m)
{
    std::vector<std::vector<double>> out;
    for (const auto& p : m.parameters()) out.emplace_back(p.data().begin(), p.data().end());
    return out;
}

// Trajectory comparison that ignores labels (tag, phase) but nothing numeric
// except the logged consistency term.
void expect_same_trajectory(const RunLog& a, const RunLog& b, bool compare_l_cr = true)
{
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t e = 0; e < a.records.size(); ++e) {
        const auto& x = a.records[e];
        const auto& y = b.records[e];
        EXPECT_EQ(x.nat_train_acc, y.nat_train_acc) << "epoch " << e;
        EXPECT_EQ(x.nat_test_acc, y.nat_test_acc) << "epoch " << e;
        EXPECT_EQ(x.adv_test_acc, y.adv_test_acc) << "epoch " << e;
        EXPECT_EQ(x.train_loss, y.train_loss) << "epoch " << e;
        EXPECT_EQ(x.ce_nat, y.ce_nat) << "epoch " << e;
        EXPECT_EQ(x.mean_abs_grad, y.mean_abs_grad) << "epoch " << e;
        EXPECT_EQ(x.fraction_updated, y.fraction_updated) << "epoch " << e;
        if (compare_l_cr) EXPECT_EQ(x.l_cr, y.l_cr);
    }
}

} // namespace

TEST(Training, DeterministicPerSeed)
{
    auto a = BlockModel::init(arch(), 1);
    auto b = BlockModel::init(arch(), 1);
    const auto la = train_at(a, moons(), small_cfg());
    const auto lb = train_at(b, moons(), small_cfg());
    expect_same_trajectory(la, lb);
    EXPECT_EQ(values(a), values(b));

    auto c = BlockModel::init(arch(), 1);
    auto cfg = small_cfg();
    cfg.seed = 6;
    (void)train_at(c, moons(), cfg);
    EXPECT_NE(values(a), values(c));
}

TEST(Training, RecordsAreWellFormed)
{
    auto m = BlockModel::init(arch(), 2);
    const auto log = train_standard(m, moons(), small_cfg());
    ASSERT_EQ(log.records.size(), 3u);
    EXPECT_EQ(log.tensor_names, m.parameter_names());
    for (std::size_t e = 0; e < 3; ++e) {
        const auto& r = log.records[e];
        EXPECT_EQ(r.epoch, e + 1);
        EXPECT_EQ(r.phase, "standard");
        for (const double acc : {r.nat_train_acc, r.nat_test_acc, r.adv_test_acc}) {
            EXPECT_GE(acc, 0.0);
            EXPECT_LE(acc, 100.0);
        }
        EXPECT_EQ(r.mean_abs_grad.size(), m.parameters().size());
        for (const double f : r.fraction_updated) EXPECT_EQ(f, 1.0);
    }
}

TEST(Training, ZeroEpsilonAdversarialEqualsStandard)
{
    auto a = BlockModel::init(arch(), 3);
    auto b = BlockModel::init(arch(), 3);
    const auto la = train_at(a, moons(), small_cfg(0.0));
    const auto lb = train_standard(b, moons(), small_cfg(0.0));
    expect_same_trajectory(la, lb);
    EXPECT_EQ(values(a), values(b));
}

TEST(Training, TradesWithZeroBetaEqualsStandard)
{
    auto a = BlockModel::init(arch(), 4);
    auto b = BlockModel::init(arch(), 4);
    auto cfg = small_cfg();
    cfg.trades_beta = 0.0;
    const auto la = train_trades_like(a, moons(), cfg);
    const auto lb = train_standard(b, moons(), cfg);
    expect_same_trajectory(la, lb);
    EXPECT_EQ(values(a), values(b));
}

TEST(Training, CureEndpointEqualsUnmaskedTrades)
{
    auto a = BlockModel::init(arch(), 5);
    auto b = BlockModel::init(arch(), 5);
    auto cfg = small_cfg();
    cfg.cure.p = 0.0;
    cfg.cure.gamma = 0.0;
    cfg.cure.rate = 0.0;
    cfg.trades_beta = 1.0;
    const auto la = train_cure(a, moons(), cfg);
    const auto lb = train_trades_like(b, moons(), cfg);
    expect_same_trajectory(la, lb, false);
    EXPECT_EQ(values(a), values(b));
    for (const auto& r : la.records) EXPECT_EQ(r.revision_events, 0u);
}

TEST(Training, CureMasksTheConfiguredFraction)
{
    auto m = BlockModel::init(arch(), 6);
    auto cfg = small_cfg();
    cfg.cure.p = 30.0;
    const auto log = train_cure(m, moons(), cfg);
    for (const auto& r : log.records) {
        for (std::size_t t = 0; t < r.fraction_updated.size(); ++t) {
            const double n = static_cast<double>(m.parameters()[t].size());
            EXPECT_NEAR(r.fraction_updated[t], 1.0 - std::floor(0.3 * n) / n, 1e-12) << log.tensor_names[t];
        }
    }
}

TEST(Training, CureEffWithFullWarmupIsStandard)
{
    auto a = BlockModel::init(arch(), 7);
    auto b = BlockModel::init(arch(), 7);
    auto cfg = small_cfg();
    cfg.cure.warmup_epochs = cfg.epochs;
    const auto la = train_cure_eff(a, moons(), cfg);
    const auto lb = train_standard(b, moons(), cfg);
    expect_same_trajectory(la, lb);
    EXPECT_EQ(values(a), values(b));

    auto d = small_cfg();
    d.epochs = 20;
    EXPECT_EQ(cure_eff_warmup(d), 2u);
    d.epochs = 3;
    EXPECT_EQ(cure_eff_warmup(d), 1u);
}

TEST(Training, FreezeKeepsOtherBlocksBitIdentical)
{
    const auto pre = BlockModel::init(arch(), 8);
    const auto res = freeze_experiment(pre, moons(), {2}, true, false, small_cfg());
    EXPECT_EQ(res.log.tag, "U-2");
    const auto before = values(pre);
    const auto after = values(res.model);
    const auto groups = pre.parameter_groups();
    for (std::size_t i = 0; i < before.size(); ++i) {
        if (groups[i] == 1) EXPECT_NE(before[i], after[i]);
        else EXPECT_EQ(before[i], after[i]) << pre.parameter_names()[i];
    }
    EXPECT_THROW((void)freeze_experiment(pre, moons(), {}, false, true, small_cfg()), InvalidArgument);
    EXPECT_THROW((void)freeze_experiment(pre, moons(), {4}, false, true, small_cfg()), InvalidArgument);
}

TEST(Training, FreezeAllBlocksWithoutReinitIsAdversarialTraining)
{
    const auto pre = BlockModel::init(arch(), 9);
    const auto res = freeze_experiment(pre, moons(), {1, 2, 3}, false, true, small_cfg());
    auto m = pre;
    const auto log = train_at(m, moons(), small_cfg());
    expect_same_trajectory(res.log, log);
    EXPECT_EQ(values(res.model), values(m));
    EXPECT_EQ(combo_tag({3, 1}), "U-13");
}

TEST(Training, SeparableGaussiansAreLearned)
{
    const auto data = split_dataset(gen_synthetic(SyntheticKind::Gaussians, 400, 0.3, 2), 0.25, 2);
    auto m = BlockModel::init(arch(), 10);
    auto cfg = small_cfg(0.0, 50);
    const auto log = train_standard(m, data, cfg);
    EXPECT_GE(log.records.back().nat_test_acc, 99.0);
}

TEST(Training, InvalidConfigRejected)
{
    auto m = BlockModel::init(arch(), 1);
    auto cfg = small_cfg();
    cfg.epochs = 0;
    EXPECT_THROW((void)train_standard(m, moons(), cfg), InvalidArgument);
    cfg = small_cfg();
    cfg.cure.p = 130;
    EXPECT_THROW((void)train_cure(m, moons(), cfg), InvalidArgument);
}

TEST(Overfit, TrendArithmetic)
{
    const auto t = metric_trend({50, 60, 55});
    EXPECT_EQ(t.best, 60);
    EXPECT_EQ(t.last, 55);
    EXPECT_EQ(t.delta, -5);
    EXPECT_EQ(metric_trend({1, 2, 3}).delta, 0);
    EXPECT_THROW((void)metric_trend({}), InvalidArgument);
}

TEST(Overfit, ReportFromLog)
{
    RunLog log;
    for (const auto& [nat, adv] : std::vector<std::pair<double, double>>{{70, 40}, {80, 45}, {85, 44}}) {
        TrainRecord r;
        r.nat_test_acc = nat;
        r.adv_test_acc = adv;
        log.records.push_back(r);
    }
    const auto rep = overfit_report(log);
    EXPECT_EQ(rep.natural.delta, 0);
    EXPECT_EQ(rep.adversarial.best, 45);
    EXPECT_EQ(rep.adversarial.delta, -1);
    EXPECT_THROW((void)overfit_report(RunLog{}), InvalidArgument);
}
