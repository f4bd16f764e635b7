#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mssl/gradcheck_suite.hpp"
#include "mssl/trainer.hpp"

using namespace mssl;
using namespace mssl::train;

namespace {

TrainConfig small_config()
{
    TrainConfig cfg;
    cfg.scenes.height = cfg.scenes.width = 5;
    cfg.scenes.channels = 12;
    cfg.scenes.noise_sigma = 0.1;
    cfg.batch = 3;
    cfg.steps = 6;
    cfg.eval_every = 3;
    cfg.eval_scenes = 12;
    return cfg;
}

double param_distance(const ProjectionParams& a, const ProjectionParams& b)
{
    double s = 0;
    for (std::size_t k = 0; k < a.visual.size(); ++k)
        s += (a.visual[k] - b.visual[k]) * (a.visual[k] - b.visual[k]);
    for (std::size_t k = 0; k < a.audio.size(); ++k)
        s += (a.audio[k] - b.audio[k]) * (a.audio[k] - b.audio[k]);
    return std::sqrt(s);
}

} // namespace

TEST(Projection, InitScaleAndDeterminism)
{
    const ProjectionParams p = ProjectionParams::init(400, 50, 3);
    EXPECT_EQ(p, ProjectionParams::init(400, 50, 3));
    double s = 0;
    for (double v : p.visual)
        s += v * v;
    EXPECT_NEAR(s / static_cast<double>(p.visual.size()), 1.0 / 400.0, 0.1 / 400.0);
    EXPECT_THROW(ProjectionParams::init(0, 3, 1), ConfigError);
}

TEST(Projection, MatchesMatrixProduct)
{
    FeatureGrid raw(1, 1, 2, 2, Vector{1, 2, 3, 4});
    const Vector w{1, 0, -1, 0, 1, 2}; // 2x3
    const FeatureGrid f = project(raw, w, 3);
    EXPECT_EQ(f.cell(0, 0)[0], 1.0);
    EXPECT_EQ(f.cell(0, 0)[1], 2.0);
    EXPECT_EQ(f.cell(0, 0)[2], 3.0);
    EXPECT_EQ(f.cell(0, 1)[2], 5.0);
    EXPECT_THROW(project(raw, Vector(5, 0.0), 3), DimensionError);
}

TEST(ComposedLoss, GradientMatchesFiniteDifferences)
{
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto line = gradcheck::check_composed(s);
        EXPECT_TRUE(line.report.passed) << "seed " << s << " err " << line.report.max_rel_error;
    }
}

TEST(ComposedLoss, ComponentsAddUp)
{
    const auto inst = gradcheck::composed_instance(4);
    auto cfg = inst.cfg;
    cfg.lambda1 = 0.7;
    cfg.lambda2 = 1.3;
    const auto l = composed_loss(inst.params, inst.batch, inst.frozen, cfg, false);
    EXPECT_NEAR(l.total, 0.7 * l.avc + 1.3 * l.osc, 1e-12);
}

TEST(TrainStep, ZeroLearningRateLeavesParams)
{
    const auto inst = gradcheck::composed_instance(5);
    auto cfg = inst.cfg;
    cfg.lr = 0.0;
    ProjectionParams p = inst.params;
    MomentumState st;
    const StepResult r = train_step(p, st, inst.batch, cfg);
    EXPECT_EQ(p, inst.params);
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_NEAR(r.total, cfg.lambda1 * r.avc + cfg.lambda2 * r.osc, 1e-12);
}

TEST(TrainStep, SmallStepDescendsUnderFrozenStructure)
{
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto inst = gradcheck::composed_instance(s);
        const double before = composed_loss(inst.params, inst.batch, inst.frozen, inst.cfg, false).total;
        bool decreased = false;
        for (double lr : {1e-2, 1e-3, 1e-4}) {
            auto cfg = inst.cfg;
            cfg.lr = lr;
            cfg.momentum = 0.0;
            ProjectionParams p = inst.params;
            MomentumState st;
            train_step(p, st, inst.batch, cfg);
            if (composed_loss(p, inst.batch, inst.frozen, inst.cfg, false).total < before)
                decreased = true;
        }
        EXPECT_TRUE(decreased) << "seed " << s;
    }
}

TEST(TrainStep, UpdateIsLinearInSmallLearningRate)
{
    const auto inst = gradcheck::composed_instance(6);
    auto run = [&](double lr) {
        auto cfg = inst.cfg;
        cfg.lr = lr;
        cfg.momentum = 0.0;
        ProjectionParams p = inst.params;
        MomentumState st;
        train_step(p, st, inst.batch, cfg);
        return param_distance(p, inst.params);
    };
    const double a = run(1e-6), b = run(2e-6), c = run(1e-5);
    EXPECT_NEAR(b / a, 2.0, 1e-6);
    EXPECT_NEAR(c / a, 10.0, 1e-6);
}

TEST(TrainStep, MomentumAccumulates)
{
    const auto inst = gradcheck::composed_instance(7);
    auto cfg = inst.cfg;
    cfg.lr = 1e-3;
    cfg.momentum = 0.5;
    cfg.clip_norm = 0.0;
    ProjectionParams p = inst.params;
    MomentumState st;
    train_step(p, st, inst.batch, cfg);
    const auto g = composed_loss(inst.params, inst.batch, inst.frozen, cfg);
    for (std::size_t k = 0; k < p.visual.size(); ++k)
        EXPECT_NEAR(st.visual[k], g.grad_visual[k], 1e-12);
    const Vector v1 = st.visual;
    const ProjectionParams p1 = p;
    train_step(p, st, inst.batch, cfg);
    const auto g2 = composed_loss(p1, inst.batch, freeze(forward(p1, inst.batch, cfg)), cfg);
    for (std::size_t k = 0; k < p.visual.size(); ++k) {
        EXPECT_NEAR(st.visual[k], 0.5 * v1[k] + g2.grad_visual[k], 1e-12);
        EXPECT_NEAR(p.visual[k], p1.visual[k] - 1e-3 * st.visual[k], 1e-15);
    }
}

TEST(TrainStep, ClippingBoundsTheStep)
{
    const auto inst = gradcheck::composed_instance(8);
    auto cfg = inst.cfg;
    cfg.lr = 1.0;
    cfg.momentum = 0.0;
    cfg.clip_norm = 1e-3;
    ProjectionParams p = inst.params;
    MomentumState st;
    train_step(p, st, inst.batch, cfg);
    EXPECT_LE(param_distance(p, inst.params), 1e-3 * (1 + 1e-9));
}

TEST(TrainStep, HugeLearningRateIsReported)
{
    const auto inst = gradcheck::composed_instance(9);
    auto cfg = inst.cfg;
    cfg.lr = 1e6;
    ProjectionParams p = inst.params;
    MomentumState st;
    EXPECT_THROW(train_step(p, st, inst.batch, cfg), NumericalInstability);
}

TEST(TrainRun, ZeroStepsIsTheBaseline)
{
    TrainConfig cfg = small_config();
    cfg.steps = 0;
    const TrainRunResult r = train_run(cfg);
    EXPECT_EQ(r.params, r.initial);
    ASSERT_EQ(r.curve.size(), 1u);
    const auto held = held_out_scenes(cfg);
    const EvalPoint e = evaluate(r.initial, held, cfg);
    EXPECT_EQ(r.curve[0].counting_accuracy, e.counting_accuracy);
    EXPECT_EQ(r.curve[0].ciou, e.ciou);
}

TEST(TrainRun, DeterministicAndFinite)
{
    const TrainConfig cfg = small_config();
    const TrainRunResult a = train_run(cfg), b = train_run(cfg);
    EXPECT_EQ(a.params, b.params);
    ASSERT_EQ(a.trace.size(), cfg.steps);
    for (std::size_t k = 0; k < a.trace.size(); ++k) {
        EXPECT_EQ(a.trace[k].total, b.trace[k].total);
        EXPECT_TRUE(std::isfinite(a.trace[k].total));
    }
    ASSERT_EQ(a.curve.size(), 3u);
    EXPECT_EQ(a.curve[1].step, 3u);
    EXPECT_EQ(a.curve[2].step, 6u);
}

TEST(TrainRun, RejectsSingleClipBatches)
{
    TrainConfig cfg = small_config();
    cfg.batch = 1;
    EXPECT_THROW(train_run(cfg), ConfigError);
    cfg = small_config();
    cfg.lr = 0.0;
    EXPECT_THROW(train_run(cfg), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExactAtF32)
{
    ProjectionParams p = ProjectionParams::init(6, 4, 12);
    for (auto& v : p.visual)
        v = static_cast<float>(v);
    for (auto& v : p.audio)
        v = static_cast<float>(v);
    std::stringstream ss;
    write_checkpoint(ss, p);
    const std::string bytes = ss.str();
    EXPECT_EQ(bytes.substr(0, 4), "PRJW");
    EXPECT_EQ(bytes.size(), 16u + 2 * 24 * 4);
    std::stringstream in(bytes);
    EXPECT_EQ(read_checkpoint(in), p);

    std::stringstream trunc(bytes.substr(0, 40));
    EXPECT_THROW(read_checkpoint(trunc), FormatError);
    std::string bad = bytes;
    bad[1] = 'X';
    std::stringstream bin(bad);
    EXPECT_THROW(read_checkpoint(bin), FormatError);
}
