#pragma once

// Seeded smoke instances for finite-difference checks of the contrastive
// loss, the clustering loss and the composed projection loss.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mssl/grid.hpp"
#include "mssl/objectives.hpp"
#include "mssl/sarl.hpp"
#include "mssl/synthworld.hpp"
#include "mssl/trainer.hpp"

namespace mssl::gradcheck {

struct CheckSettings {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t max_coordinates = 64;
};

struct CheckLine {
    std::string name;
    std::uint64_t seed = 0;
    GradCheckReport report;
};

inline std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi)
{
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct AvcInstance {
    FeatureGrid visual;
    VectorBatch audio;
};

/// Cells scatter around their own clip's audio direction so every self-pair
/// denominator stays well away from zero.
inline AvcInstance avc_instance(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t B = uniform(rng, 2, 3), h = uniform(rng, 2, 4), w = uniform(rng, 2, 4), c = uniform(rng, 3, 6);
    VectorBatch audio(B, c);
    FeatureGrid visual(B, h, w, c);
    for (std::size_t b = 0; b < B; ++b) {
        auto a = audio.row(b);
        for (double& v : a)
            v = normal(rng);
        const double n = norm(a);
        for (std::size_t k = 0; k < visual.cells(); ++k) {
            auto f = visual.cell(b, k);
            for (std::size_t ch = 0; ch < c; ++ch)
                f[ch] = a[ch] / n + 0.6 * normal(rng);
        }
    }
    return {std::move(visual), std::move(audio)};
}

inline OscBatchStructure osc_instance(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t B = uniform(rng, 1, 3), c = uniform(rng, 3, 6);
    auto random_vector = [&] {
        Vector v(c);
        for (double& x : v)
            x = normal(rng);
        return v;
    };
    OscBatchStructure s;
    s.samples.resize(B);
    for (auto& groups : s.samples) {
        const std::size_t K = uniform(rng, 1, 3);
        for (std::size_t k = 0; k < K; ++k) {
            OscGroup g;
            g.anchor = random_vector();
            for (std::size_t i = uniform(rng, 0, 3); i > 0; --i)
                g.positives.push_back(random_vector());
            for (std::size_t i = uniform(rng, 0, 3); i > 0; --i)
                g.negatives.push_back(random_vector());
            groups.push_back(std::move(g));
        }
    }
    return s;
}

/// Flat copy of every OSC vector in for_each_osc_vector order.
inline Vector flatten(const OscBatchStructure& s)
{
    Vector out;
    for_each_osc_vector(s, [&](const Vector& v, const OscVectorRef&) { out.insert(out.end(), v.begin(), v.end()); });
    return out;
}

inline OscBatchStructure with_vectors(OscBatchStructure s, std::span<const double> flat)
{
    std::size_t cursor = 0;
    auto take = [&](Vector& v) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(cursor),
                  flat.begin() + static_cast<std::ptrdiff_t>(cursor + v.size()), v.begin());
        cursor += v.size();
    };
    for (auto& groups : s.samples) {
        for (auto& g : groups) {
            take(g.anchor);
            for (auto& v : g.positives)
                take(v);
            for (auto& v : g.negatives)
                take(v);
        }
    }
    return s;
}

struct ComposedInstance {
    train::ProjectionParams params;
    train::RawBatch batch;
    train::FrozenStructure frozen;
    train::TrainConfig cfg;
};

/// Noisy synthetic scenes under a random projection, structure frozen at
/// the initial parameters.
inline ComposedInstance composed_instance(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    train::TrainConfig cfg;
    cfg.scenes.height = uniform(rng, 4, 6);
    cfg.scenes.width = uniform(rng, 4, 6);
    cfg.scenes.channels = uniform(rng, 8, 12);
    cfg.scenes.noise_sigma = 0.1;
    const std::size_t c = uniform(rng, 6, 10);
    const std::size_t B = uniform(rng, 2, 3);

    std::vector<synth::Scene> scenes;
    for (std::size_t b = 0; b < B; ++b)
        scenes.push_back(synth::generate_scene(cfg.scenes, synth::derive_seed(seed, b)));
    ComposedInstance out{train::ProjectionParams::init(cfg.scenes.channels, c, synth::derive_seed(seed, 0x5eed)),
                         train::make_batch(scenes), {}, cfg};
    out.frozen = train::freeze(train::forward(out.params, out.batch, cfg));
    return out;
}

inline CheckLine check_avc(std::uint64_t seed, const CheckSettings& s = {})
{
    const auto inst = avc_instance(seed);
    const SarlConfig sarl;
    const LossValue lv = avc_loss(inst.visual, inst.audio, sarl);
    const auto& fv = inst.visual.data();
    const auto& fa = inst.audio.data();
    Vector params(fv.begin(), fv.end());
    params.insert(params.end(), fa.begin(), fa.end());
    Vector analytic = lv.gradients.at("visual");
    const auto& ga = lv.gradients.at("audio");
    analytic.insert(analytic.end(), ga.begin(), ga.end());
    auto fn = [&](std::span<const double> x) {
        FeatureGrid v(inst.visual.batch(), inst.visual.height(), inst.visual.width(), inst.visual.channels(),
                      Vector(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(fv.size())));
        VectorBatch a(inst.audio.batch(), inst.audio.channels(),
                      Vector(x.begin() + static_cast<std::ptrdiff_t>(fv.size()), x.end()));
        return avc_loss(v, a, sarl, false).value;
    };
    return {"avc", seed, grad_check(fn, params, analytic, s.step, s.tolerance, s.max_coordinates, seed)};
}

inline CheckLine check_osc(std::uint64_t seed, const CheckSettings& s = {})
{
    const auto inst = osc_instance(seed);
    const LossValue lv = osc_loss(inst);
    const Vector params = flatten(inst);
    auto fn = [&](std::span<const double> x) { return osc_loss(with_vectors(inst, x), false).value; };
    return {"osc", seed,
            grad_check(fn, params, lv.gradients.at("vectors"), s.step, s.tolerance, s.max_coordinates, seed)};
}

inline CheckLine check_composed(std::uint64_t seed, const CheckSettings& s = {})
{
    const auto inst = composed_instance(seed);
    const auto loss = train::composed_loss(inst.params, inst.batch, inst.frozen, inst.cfg);
    Vector params = inst.params.visual;
    params.insert(params.end(), inst.params.audio.begin(), inst.params.audio.end());
    Vector analytic = loss.grad_visual;
    analytic.insert(analytic.end(), loss.grad_audio.begin(), loss.grad_audio.end());
    const std::size_t nv = inst.params.visual.size();
    auto fn = [&](std::span<const double> x) {
        train::ProjectionParams p = inst.params;
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nv), p.visual.begin());
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(nv), x.end(), p.audio.begin());
        return train::composed_loss(p, inst.batch, inst.frozen, inst.cfg, false).total;
    };
    return {"composed", seed, grad_check(fn, params, analytic, s.step, s.tolerance, s.max_coordinates, seed)};
}

/// `instances` seeded checks of each kind, seeds derived from `seed`.
inline std::vector<CheckLine> run_suite(std::uint64_t seed, std::size_t instances, const CheckSettings& s = {})
{
    std::vector<CheckLine> out;
    for (std::size_t i = 0; i < instances; ++i) {
        const std::uint64_t k = synth::derive_seed(seed, i);
        out.push_back(check_avc(k, s));
        out.push_back(check_osc(k, s));
        out.push_back(check_composed(k, s));
    }
    return out;
}

} // namespace mssl::gradcheck
