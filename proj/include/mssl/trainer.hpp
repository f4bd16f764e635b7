#pragma once

// Desk-scale training of two linear projections (visual and audio) under the
// weighted sum of the contrastive and clustering losses. The discrete
// structure of each forward pass (selected cells, clusters, background cells)
// is frozen while differentiating.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"
#include "mssl/io.hpp"
#include "mssl/metrics.hpp"
#include "mssl/objectives.hpp"
#include "mssl/pipeline.hpp"
#include "mssl/synthworld.hpp"

namespace mssl::train {

/// W_v and W_a, each raw_channels x channels, row-major.
struct ProjectionParams {
    std::size_t raw_channels = 0;
    std::size_t channels = 0;
    Vector visual;
    Vector audio;

    /// Seeded Gaussian entries with standard deviation 1/sqrt(raw_channels).
    static ProjectionParams init(std::size_t raw_channels, std::size_t channels, std::uint64_t seed)
    {
        if (raw_channels == 0 || channels == 0)
            throw ConfigError("projection dimensions must be >= 1");
        ProjectionParams p{raw_channels, channels, Vector(raw_channels * channels), Vector(raw_channels * channels)};
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(raw_channels)));
        for (double& v : p.visual)
            v = normal(rng);
        for (double& v : p.audio)
            v = normal(rng);
        return p;
    }

    bool operator==(const ProjectionParams&) const = default;
};

struct MomentumState {
    Vector visual;
    Vector audio;
};

struct TrainConfig {
    double lr = 1e-2;
    double momentum = 0.9;
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double clip_norm = 1.0;       ///< joint gradient norm cap; 0 disables
    std::size_t channels = 0;     ///< projected width; 0 means the raw width
    std::size_t eval_every = 50;  ///< steps per evaluation epoch
    std::size_t eval_scenes = 100;
    LocalizeConfig localize;
    synth::SynthConfig scenes;    ///< scene distribution for the built-in stream

    void validate() const
    {
        if (!(lr > 0.0) || !std::isfinite(lr))
            throw ConfigError("lr must be finite and > 0");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("momentum must lie in [0,1)");
        if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm))
            throw ConfigError("clip_norm must be finite and >= 0");
        if (batch < 2)
            throw ConfigError("batch must be >= 2");
        if (eval_every == 0)
            throw ConfigError("eval_every must be >= 1");
        localize.validate();
        scenes.validate();
    }
};

struct RawBatch {
    FeatureGrid features;
    VectorBatch audio;
};

/// Discrete decisions of one forward pass.
struct FrozenStructure {
    OscBatchStructure osc;
    std::vector<Mask> background; ///< cells averaged into E_n, per sample
};

// ---------------------------------------------------------------------------
// Projection

inline FeatureGrid project(const FeatureGrid& raw, std::span<const double> w, std::size_t channels)
{
    const std::size_t r = raw.channels();
    if (w.size() != r * channels)
        throw DimensionError("project: weight shape mismatch");
    FeatureGrid out(raw.batch(), raw.height(), raw.width(), channels);
    for (std::size_t b = 0; b < raw.batch(); ++b) {
        for (std::size_t k = 0; k < raw.cells(); ++k) {
            auto x = raw.cell(b, k);
            auto y = out.cell(b, k);
            for (std::size_t i = 0; i < r; ++i) {
                const double xi = x[i];
                for (std::size_t j = 0; j < channels; ++j)
                    y[j] += xi * w[i * channels + j];
            }
        }
    }
    return out;
}

inline VectorBatch project(const VectorBatch& raw, std::span<const double> w, std::size_t channels)
{
    const std::size_t r = raw.channels();
    if (w.size() != r * channels)
        throw DimensionError("project: weight shape mismatch");
    VectorBatch out(raw.batch(), channels);
    for (std::size_t b = 0; b < raw.batch(); ++b) {
        auto x = raw.row(b);
        auto y = out.row(b);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < channels; ++j)
                y[j] += x[i] * w[i * channels + j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses under a frozen structure

inline FrozenStructure freeze(const Localization& loc) { return FrozenStructure{loc.osc, loc.negatives.background}; }

/// Rebuilds every OSC vector from the current projected features: cells are
/// reweighted by the current self map, E_n is re-averaged over the frozen
/// background cells.
inline OscBatchStructure materialize(const FrozenStructure& frozen, const FeatureGrid& features,
                                     const SimilarityMap& maps)
{
    auto vector_for = [&](const OscVectorRef& ref) {
        const std::size_t b = ref.cell.sample;
        Vector v(features.channels(), 0.0);
        if (ref.kind == OscVectorRef::Kind::cell) {
            const std::size_t k = ref.cell.row * features.width() + ref.cell.col;
            const double s = maps.plane(b)[k];
            auto f = features.cell(b, k);
            for (std::size_t ch = 0; ch < v.size(); ++ch)
                v[ch] = s * f[ch];
        } else if (ref.kind == OscVectorRef::Kind::negative_mean) {
            const Mask& bg = frozen.background.at(b);
            const double n = static_cast<double>(mask_count(bg));
            for (std::size_t k = 0; k < bg.size(); ++k) {
                if (!bg[k])
                    continue;
                auto f = features.cell(b, k);
                for (std::size_t ch = 0; ch < v.size(); ++ch)
                    v[ch] += f[ch] / n;
            }
        } else {
            throw DimensionError("materialize: OSC vector without provenance");
        }
        return v;
    };

    OscBatchStructure out = frozen.osc;
    for (auto& groups : out.samples) {
        for (auto& g : groups) {
            g.anchor = vector_for(g.anchor_ref);
            for (std::size_t i = 0; i < g.positives.size(); ++i)
                g.positives[i] = vector_for(g.positive_refs[i]);
            for (std::size_t i = 0; i < g.negatives.size(); ++i)
                g.negatives[i] = vector_for(g.negative_refs[i]);
        }
    }
    return out;
}

struct ComposedLoss {
    double total = 0.0;
    double avc = 0.0;
    double osc = 0.0;
    Vector grad_visual; ///< d total / d W_v
    Vector grad_audio;  ///< d total / d W_a
};

/// lambda1 * avc + lambda2 * osc at `params` with the discrete structure held
/// fixed, plus its gradient with respect to both projections when requested.
inline ComposedLoss composed_loss(const ProjectionParams& params, const RawBatch& batch, const FrozenStructure& frozen,
                                  const TrainConfig& cfg, bool with_gradients = true)
{
    const std::size_t c = params.channels;
    const FeatureGrid features = project(batch.features, params.visual, c);
    const VectorBatch audio = project(batch.audio, params.audio, c);
    const SimilarityMap maps = self_maps(features, audio);

    const LossValue avc = avc_loss(features, audio, cfg.localize.sarl, with_gradients);
    const OscBatchStructure structure = materialize(frozen, features, maps);
    const LossValue osc = osc_loss(structure, with_gradients);

    ComposedLoss out;
    out.avc = avc.value;
    out.osc = osc.value;
    out.total = cfg.lambda1 * avc.value + cfg.lambda2 * osc.value;
    if (!std::isfinite(out.total))
        throw NumericalInstability("composed loss is not finite");
    if (!with_gradients)
        return out;

    // d/dF: the contrastive part directly; the clustering part through the
    // materialized vectors. A cell vector is s * F_cell and cosine is scale
    // invariant, so its gradient reaches F_cell scaled by s and nothing
    // flows through s.
    Vector grad_f = avc.gradients.at("visual");
    for (double& g : grad_f)
        g *= cfg.lambda1;
    const Vector& g_vec = osc.gradients.at("vectors");
    std::size_t cursor = 0;
    for_each_osc_vector(structure, [&](const Vector& v, const OscVectorRef& ref) {
        std::span<const double> g(g_vec.data() + cursor, v.size());
        cursor += v.size();
        const std::size_t b = ref.cell.sample;
        if (ref.kind == OscVectorRef::Kind::cell) {
            const std::size_t k = ref.cell.row * features.width() + ref.cell.col;
            const double s = maps.plane(b)[k];
            double* dst = grad_f.data() + (b * features.cells() + k) * c;
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[ch] += cfg.lambda2 * s * g[ch];
        } else {
            const Mask& bg = frozen.background.at(b);
            const double n = static_cast<double>(mask_count(bg));
            for (std::size_t k = 0; k < bg.size(); ++k) {
                if (!bg[k])
                    continue;
                double* dst = grad_f.data() + (b * features.cells() + k) * c;
                for (std::size_t ch = 0; ch < c; ++ch)
                    dst[ch] += cfg.lambda2 * g[ch] / n;
            }
        }
    });
    const Vector& grad_l = avc.gradients.at("audio");

    const std::size_t r = params.raw_channels;
    out.grad_visual.assign(r * c, 0.0);
    out.grad_audio.assign(r * c, 0.0);
    for (std::size_t b = 0; b < features.batch(); ++b) {
        for (std::size_t k = 0; k < features.cells(); ++k) {
            auto x = batch.features.cell(b, k);
            const double* g = grad_f.data() + (b * features.cells() + k) * c;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    out.grad_visual[i * c + j] += x[i] * g[j];
        }
        auto y = batch.audio.row(b);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                out.grad_audio[i * c + j] += cfg.lambda1 * y[i] * grad_l[b * c + j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

inline Localization forward(const ProjectionParams& params, const RawBatch& batch, const TrainConfig& cfg)
{
    const FeatureGrid features = project(batch.features, params.visual, params.channels);
    const VectorBatch audio = project(batch.audio, params.audio, params.channels);
    return localize(features, audio, cfg.localize);
}

struct StepResult {
    double total = 0.0;
    double avc = 0.0;
    double osc = 0.0;
};

/// An update longer than this multiple of the parameter norm is treated as
/// divergence.
inline constexpr double kMaxRelativeUpdate = 1e3;

/// One SGD-with-momentum step on the clipped gradient g
/// (v <- mu v + g; W <- W - lr v). Loss values are those at the parameters
/// before the update.
inline StepResult train_step(ProjectionParams& params, MomentumState& state, const RawBatch& batch,
                             const TrainConfig& cfg)
{
    const FrozenStructure frozen = freeze(forward(params, batch, cfg));
    const ComposedLoss loss = composed_loss(params, batch, frozen, cfg);

    double g2 = 0.0, w2 = 0.0;
    for (double g : loss.grad_visual)
        g2 += g * g;
    for (double g : loss.grad_audio)
        g2 += g * g;
    for (double w : params.visual)
        w2 += w * w;
    for (double w : params.audio)
        w2 += w * w;
    if (!std::isfinite(g2))
        throw NumericalInstability("non-finite gradient");
    const double gnorm = std::sqrt(g2);
    const double scale = (cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm) ? cfg.clip_norm / gnorm : 1.0;

    if (state.visual.size() != params.visual.size())
        state.visual.assign(params.visual.size(), 0.0);
    if (state.audio.size() != params.audio.size())
        state.audio.assign(params.audio.size(), 0.0);
    double step2 = 0.0;
    auto update = [&](Vector& w, Vector& v, const Vector& g) {
        for (std::size_t k = 0; k < w.size(); ++k) {
            v[k] = cfg.momentum * v[k] + scale * g[k];
            const double d = cfg.lr * v[k];
            w[k] -= d;
            step2 += d * d;
            if (!std::isfinite(w[k]))
                throw NumericalInstability("parameters diverged");
        }
    };
    update(params.visual, state.visual, loss.grad_visual);
    update(params.audio, state.audio, loss.grad_audio);
    if (std::sqrt(step2) > kMaxRelativeUpdate * std::sqrt(w2))
        throw NumericalInstability("update diverged");
    return StepResult{loss.total, loss.avc, loss.osc};
}

/// Supplies the raw batch for a given step index.
using SceneStream = std::function<RawBatch(std::size_t step)>;

inline RawBatch make_batch(std::span<const synth::Scene> scenes)
{
    auto [f, a] = synth::stack(scenes);
    return RawBatch{std::move(f), std::move(a)};
}

/// Fresh synthetic scenes every step, seeded from (cfg.seed, step).
inline SceneStream synthetic_stream(const TrainConfig& cfg)
{
    return [cfg](std::size_t step) {
        std::vector<synth::Scene> scenes;
        for (std::size_t i = 0; i < cfg.batch; ++i)
            scenes.push_back(synth::generate_scene(cfg.scenes, synth::derive_seed(cfg.seed, step * cfg.batch + i)));
        return make_batch(scenes);
    };
}

/// Held-out scenes, disjoint from the training stream's seeds.
inline std::vector<synth::Scene> held_out_scenes(const TrainConfig& cfg)
{
    std::vector<synth::Scene> scenes;
    const std::uint64_t base = synth::derive_seed(cfg.seed, 0xE7A1u);
    for (std::size_t i = 0; i < cfg.eval_scenes; ++i)
        scenes.push_back(synth::generate_scene(cfg.scenes, synth::derive_seed(base, i)));
    return scenes;
}

struct EvalPoint {
    std::size_t step = 0;
    double counting_accuracy = 0.0;
    double ciou = 0.0;
};

/// Counting accuracy and CIoU@0.3 of the projected pipeline. A scene whose
/// similarity map cannot be normalized counts as predicting nothing.
inline EvalPoint evaluate(const ProjectionParams& params, std::span<const synth::Scene> scenes,
                          const TrainConfig& cfg, std::size_t step = 0)
{
    std::vector<metrics::EvalCase> cases(scenes.size());
    parallel_for(scenes.size(), [&](std::size_t i) {
        const auto& s = scenes[i];
        metrics::EvalCase ec;
        ec.truth = metrics::TruthCase{s.truth.height, s.truth.width, s.truth.masks};
        ec.predicted = metrics::PredictedCase{s.truth.height, s.truth.width, {}, {}};
        try {
            const Localization loc = forward(params, RawBatch{s.features, s.audio}, cfg);
            ec.predicted = metrics::from_objects(loc.grouping[0]);
        } catch (const DegenerateNormalization&) {
        }
        cases[i] = std::move(ec);
    });
    return EvalPoint{step, metrics::counting_accuracy(cases), metrics::ciou_at(cases, 0.3)};
}

struct TrainRunResult {
    ProjectionParams initial;
    ProjectionParams params;
    std::vector<StepResult> trace;
    std::vector<EvalPoint> curve; ///< step 0 is the initialization baseline
};

inline TrainRunResult train_run(const TrainConfig& cfg, const SceneStream& stream)
{
    cfg.validate();
    const std::size_t raw = cfg.scenes.channels;
    const std::size_t c = cfg.channels == 0 ? raw : cfg.channels;
    TrainRunResult out;
    out.initial = ProjectionParams::init(raw, c, synth::derive_seed(cfg.seed, 0x1417u));
    out.params = out.initial;
    const auto held_out = held_out_scenes(cfg);

    out.curve.push_back(evaluate(out.params, held_out, cfg, 0));
    MomentumState state;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        out.trace.push_back(train_step(out.params, state, stream(step), cfg));
        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)
            out.curve.push_back(evaluate(out.params, held_out, cfg, step + 1));
    }
    return out;
}

inline TrainRunResult train_run(const TrainConfig& cfg) { return train_run(cfg, synthetic_stream(cfg)); }

// ---------------------------------------------------------------------------
// Checkpoint: "PRJW", u32 version, u32 raw_channels, u32 channels, then W_v
// and W_a as little-endian f32.

inline void write_checkpoint(std::ostream& os, const ProjectionParams& p)
{
    os.write("PRJW", 4);
    io::detail::put_u32(os, io::kFormatVersion);
    io::detail::put_u32(os, io::detail::checked_u32(p.raw_channels));
    io::detail::put_u32(os, io::detail::checked_u32(p.channels));
    for (double v : p.visual)
        io::detail::put_f32(os, v);
    for (double v : p.audio)
        io::detail::put_f32(os, v);
}

inline ProjectionParams read_checkpoint(std::istream& is)
{
    io::detail::expect_magic(is, "PRJW");
    ProjectionParams p;
    p.raw_channels = io::detail::get_u32(is);
    p.channels = io::detail::get_u32(is);
    if (p.raw_channels == 0 || p.channels == 0)
        throw FormatError("checkpoint: zero dimension");
    const std::size_t n = p.raw_channels * p.channels;
    io::detail::expect_payload(is, 2 * static_cast<std::uint64_t>(n));
    p.visual.resize(n);
    p.audio.resize(n);
    for (double& v : p.visual)
        v = io::detail::get_f32(is);
    for (double& v : p.audio)
        v = io::detail::get_f32(is);
    return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const ProjectionParams& p)
{
    auto os = io::detail::open_out(path);
    write_checkpoint(os, p);
}

inline ProjectionParams load_checkpoint(const std::filesystem::path& path)
{
    auto is = io::detail::open_in(path);
    return read_checkpoint(is);
}

} // namespace mssl::train
