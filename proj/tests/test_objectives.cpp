#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mssl/gradcheck_suite.hpp"
#include "mssl/objectives.hpp"
#include "oracles.hpp"

using namespace mssl;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

} // namespace

TEST(AvcLoss, MatchesLiteralFormula)
{
    std::mt19937_64 rng(31);
    const SarlConfig cfg;
    for (int t = 0; t < 200; ++t) {
        auto [f, a] = oracle::conditioned_pair(rng, oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 5),
                                          oracle::pick(rng, 1, 5), oracle::pick(rng, 2, 6));
        const double got = avc_loss(f, a, cfg, false).value;
        const double want = oracle::avc(oracle::to_nested(f), oracle::to_nested(a), cfg.alpha, cfg.omega);
        EXPECT_LT(rel(got, want), 1e-10) << got << " vs " << want;
    }
}

TEST(AvcLoss, MatchesLiteralFormulaAwayFromDefaults)
{
    std::mt19937_64 rng(32);
    for (int t = 0; t < 100; ++t) {
        SarlConfig cfg;
        cfg.alpha = std::uniform_real_distribution<double>(-0.2, 0.5)(rng);
        cfg.omega = std::uniform_real_distribution<double>(0.02, 0.5)(rng);
        auto [f, a] = oracle::conditioned_pair(rng, 3, 3, 3, 4);
        const double got = avc_loss(f, a, cfg, false).value;
        const double want = oracle::avc(oracle::to_nested(f), oracle::to_nested(a), cfg.alpha, cfg.omega);
        EXPECT_LT(rel(got, want), 1e-10);
    }
}

TEST(AvcLoss, SingleClipHasNoCrossTerm)
{
    std::mt19937_64 rng(33);
    auto [f, a] = oracle::conditioned_pair(rng, 1, 3, 3, 4);
    const double got = avc_loss(f, a, SarlConfig{}, false).value;
    EXPECT_LT(rel(got, oracle::avc(oracle::to_nested(f), oracle::to_nested(a), 0.65, 0.03)), 1e-10);
}

TEST(AvcLoss, IsPositiveAndGradientShapes)
{
    std::mt19937_64 rng(34);
    auto [f, a] = oracle::random_pair(rng, 2, 3, 4, 5);
    const LossValue lv = avc_loss(f, a, SarlConfig{});
    EXPECT_GT(lv.value, 0.0);
    EXPECT_EQ(lv.gradients.at("visual").size(), f.data().size());
    EXPECT_EQ(lv.gradients.at("audio").size(), a.data().size());
}

TEST(AvcLoss, GradientMatchesFiniteDifferences)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto line = gradcheck::check_avc(s);
        EXPECT_TRUE(line.report.passed) << "seed " << s << " err " << line.report.max_rel_error;
    }
}

TEST(OscLoss, MatchesLiteralFormula)
{
    for (std::uint64_t s = 0; s < 300; ++s) {
        const auto inst = gradcheck::osc_instance(s);
        EXPECT_LT(rel(osc_loss(inst, false).value, oracle::osc(inst)), 1e-10);
    }
}

TEST(OscLoss, EmptyPositivesAndNegativesConventions)
{
    OscBatchStructure s;
    s.samples.resize(1);
    OscGroup g;
    g.anchor = {1, 0};
    s.samples[0].push_back(g);
    // C_p = 1 with no positives, C_n = 0 with no negatives.
    EXPECT_DOUBLE_EQ(osc_loss(s).value, 0.0);

    s.samples[0][0].negatives.push_back({1, 0});
    EXPECT_DOUBLE_EQ(osc_loss(s).value, 1.0);
    s.samples[0][0].positives.push_back({-1, 0});
    EXPECT_DOUBLE_EQ(osc_loss(s).value, 3.0);
}

TEST(OscLoss, SampleWithoutGroupsContributesZero)
{
    OscBatchStructure s;
    s.samples.resize(2);
    OscGroup g;
    g.anchor = {1, 0};
    g.negatives.push_back({1, 0});
    s.samples[1].push_back(g);
    EXPECT_DOUBLE_EQ(osc_loss(s).value, 0.5);
    EXPECT_DOUBLE_EQ(oracle::osc(s), 0.5);
}

TEST(OscLoss, GradientMatchesFiniteDifferences)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto line = gradcheck::check_osc(s);
        EXPECT_TRUE(line.report.passed) << "seed " << s << " err " << line.report.max_rel_error;
    }
}

TEST(TotalLoss, WeightedSumOfComponents)
{
    LossValue a{2.0, {{"visual", {1.0, 2.0}}}};
    LossValue b{3.0, {{"visual", {10.0, 20.0}}, {"vectors", {1.0}}}};
    const LossValue t = total_loss(a, b, 1.0, 0.5);
    EXPECT_DOUBLE_EQ(t.value, 3.5);
    EXPECT_EQ(t.gradients.at("visual"), (Vector{6.0, 12.0}));
    EXPECT_EQ(t.gradients.at("vectors"), (Vector{0.5}));

    LossValue bad{std::nan(""), {}};
    EXPECT_THROW(total_loss(bad, b, 1, 1), NumericalInstability);
}

TEST(GradCheck, DetectsWrongGradient)
{
    auto fn = [](std::span<const double> x) { return x[0] * x[0] + 3 * x[1]; };
    const Vector x{1.5, -2.0};
    EXPECT_TRUE(grad_check(fn, x, Vector{3.0, 3.0}, 1e-5, 1e-6).passed);
    const auto r = grad_check(fn, x, Vector{3.0, 3.3}, 1e-5, 1e-4);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.worst_coordinate, 1u);
}

TEST(GradCheck, NonFiniteProbeThrows)
{
    auto fn = [](std::span<const double> x) { return std::log(x[0]); };
    EXPECT_THROW(grad_check(fn, Vector{1e-7}, Vector{1e7}, 1e-5, 1e-4), NumericalInstability);
}

TEST(GradCheck, SubsamplesLargeBlocksDeterministically)
{
    auto fn = [](std::span<const double> x) {
        double s = 0;
        for (double v : x)
            s += v * v;
        return s;
    };
    Vector x(500, 0.5), g(500, 1.0);
    const auto a = grad_check(fn, x, g, 1e-5, 1e-6, 64, 9);
    const auto b = grad_check(fn, x, g, 1e-5, 1e-6, 64, 9);
    EXPECT_EQ(a.coordinates, 64u);
    EXPECT_EQ(a.max_rel_error, b.max_rel_error);
    EXPECT_TRUE(a.passed);
}

TEST(RelativeError, FloorAppliesNearZero)
{
    EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-3);
    EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}
