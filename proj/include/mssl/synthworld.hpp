#pragma once

// Synthetic scenes with planted sources: each source is a rectangle of cells
// sharing a prototype embedding, the rest of the grid carries a background
// prototype, and the audio embedding is the mean of the source prototypes.
//
// Background prototypes live on their own channel block, so in noiseless
// scenes background cells are exactly orthogonal to every source and to the
// audio embedding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mssl/errors.hpp"
#include "mssl/grid.hpp"

namespace mssl::synth {

struct SynthConfig {
    std::size_t height = 7;
    std::size_t width = 7;
    std::size_t channels = 32;
    /// Relative frequency of K = 0, 1, 2, 3 sources.
    std::array<double, 4> count_weights{0.0, 1.0, 1.0, 1.0};
    /// Source prototypes satisfy source_floor <= cos <= source_margin pairwise.
    double source_margin = 0.0;
    double source_floor = -0.2;
    /// Upper bound on cos between a source prototype and the background.
    double background_margin = 0.0;
    /// Per-channel standard deviation of the isotropic cell noise.
    double noise_sigma = 0.0;
    /// Source rectangles have sides in [1, max_side].
    std::size_t max_side = 2;
    /// Size of the background channel block; 0 means max(1, channels / 4).
    std::size_t background_channels = 0;
    std::size_t max_attempts = 10000;

    std::size_t resolved_background_channels() const
    {
        return background_channels == 0 ? std::max<std::size_t>(1, channels / 4) : background_channels;
    }

    void validate() const
    {
        if (height == 0 || width == 0 || channels == 0)
            throw ConfigError("synth: grid dimensions must be >= 1");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
            throw ConfigError("synth: noise sigma must be >= 0");
        double total = 0.0;
        for (double w : count_weights) {
            if (!(w >= 0.0) || !std::isfinite(w))
                throw ConfigError("synth: count weights must be >= 0");
            total += w;
        }
        if (!(total > 0.0))
            throw ConfigError("synth: count weights sum to zero");
        if (!(source_floor <= source_margin))
            throw ConfigError("synth: source_floor exceeds source_margin");
        if (max_side == 0 || max_side > std::min(height, width))
            throw ConfigError("synth: max_side must lie in [1, min(h, w)]");
        if (resolved_background_channels() >= channels)
            throw ConfigError("synth: background channel block leaves no room for sources");
    }

    std::size_t max_count() const
    {
        std::size_t k = 0;
        for (std::size_t i = 0; i < count_weights.size(); ++i)
            if (count_weights[i] > 0.0)
                k = i;
        return k;
    }
};

struct SceneTruth {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Mask> masks;             ///< one per source, pairwise disjoint
    std::vector<Vector> prototypes;      ///< visual prototype per source
    std::vector<Vector> audio_components;
    Vector background;
    std::uint64_t seed = 0;

    std::size_t count() const noexcept { return masks.size(); }
};

struct Scene {
    FeatureGrid features; ///< batch 1
    VectorBatch audio;    ///< batch 1
    SceneTruth truth;
};

/// splitmix64 finalizer; per-scene seeds are derive_seed(base, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index)
{
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace detail {

inline Vector random_unit(std::mt19937_64& rng, std::size_t channels, std::size_t first, std::size_t last)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(channels, 0.0);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (std::size_t k = first; k < last; ++k) {
            v[k] = normal(rng);
            n2 += v[k] * v[k];
        }
    } while (n2 < 1e-12);
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t k = first; k < last; ++k)
        v[k] *= inv;
    return v;
}

} // namespace detail

/// Scene with exactly `count` sources.
inline Scene generate_scene_with_count(const SynthConfig& cfg, std::uint64_t seed, std::size_t count)
{
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t c = cfg.channels;
    const std::size_t nb = cfg.resolved_background_channels();
    const std::size_t split = c - nb;

    SceneTruth truth;
    truth.height = cfg.height;
    truth.width = cfg.width;
    truth.seed = seed;
    truth.background = detail::random_unit(rng, c, split, c);

    for (std::size_t k = 0; k < count; ++k) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
            Vector p = detail::random_unit(rng, c, 0, split);
            bool ok = cosine_sim(p, truth.background) <= cfg.background_margin;
            for (const auto& q : truth.prototypes) {
                const double cs = cosine_sim(p, q);
                ok = ok && cs <= cfg.source_margin && cs >= cfg.source_floor;
            }
            if (ok) {
                truth.prototypes.push_back(p);
                truth.audio_components.push_back(std::move(p));
                placed = true;
            }
        }
        if (!placed)
            throw InfeasibleMargin("synth: prototype margin infeasible for " + std::to_string(count) + " sources in " +
                              std::to_string(c) + " channels");
    }

    // Sources go down one at a time; a source that finds no free spot within
    // kTriesPerSource draws restarts the whole layout.
    constexpr std::size_t kTriesPerSource = 64;
    std::uniform_int_distribution<std::size_t> side(1, cfg.max_side);
    std::size_t budget = cfg.max_attempts;
    bool laid_out = count == 0;
    while (!laid_out && budget > 0) {
        Mask occupied(cfg.height * cfg.width, 0);
        truth.masks.clear();
        for (std::size_t k = 0; k < count; ++k) {
            bool placed = false;
            for (std::size_t attempt = 0; attempt < kTriesPerSource && budget > 0 && !placed; ++attempt, --budget) {
                const std::size_t rh = side(rng), rw = side(rng);
                const std::size_t top = std::uniform_int_distribution<std::size_t>(0, cfg.height - rh)(rng);
                const std::size_t left = std::uniform_int_distribution<std::size_t>(0, cfg.width - rw)(rng);
                bool free = true;
                for (std::size_t i = top; i < top + rh && free; ++i)
                    for (std::size_t j = left; j < left + rw && free; ++j)
                        free = !occupied[i * cfg.width + j];
                if (!free)
                    continue;
                Mask m(cfg.height * cfg.width, 0);
                for (std::size_t i = top; i < top + rh; ++i)
                    for (std::size_t j = left; j < left + rw; ++j)
                        m[i * cfg.width + j] = occupied[i * cfg.width + j] = 1;
                truth.masks.push_back(std::move(m));
                placed = true;
            }
            if (!placed)
                break;
        }
        laid_out = truth.masks.size() == count;
    }
    if (!laid_out)
        throw InfeasibleMargin("synth: cannot place " + std::to_string(count) + " disjoint sources");

    FeatureGrid features(1, cfg.height, cfg.width, c);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
    for (std::size_t cell = 0; cell < cfg.height * cfg.width; ++cell) {
        const Vector* proto = &truth.background;
        for (std::size_t k = 0; k < count; ++k)
            if (truth.masks[k][cell])
                proto = &truth.prototypes[k];
        auto dst = features.cell(0, cell);
        for (std::size_t ch = 0; ch < c; ++ch)
            dst[ch] = (*proto)[ch] + (cfg.noise_sigma > 0.0 ? noise(rng) : 0.0);
    }

    VectorBatch audio(1, c);
    if (count == 0) {
        std::copy(truth.background.begin(), truth.background.end(), audio.row(0).begin());
    } else {
        auto dst = audio.row(0);
        for (const auto& a : truth.audio_components)
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[ch] += a[ch] / static_cast<double>(count);
    }
    return Scene{std::move(features), std::move(audio), std::move(truth)};
}

/// Draws K from cfg.count_weights, then generates the scene.
inline Scene generate_scene(const SynthConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    std::mt19937_64 rng(derive_seed(seed, 0xC0FFEE));
    std::discrete_distribution<std::size_t> pick(cfg.count_weights.begin(), cfg.count_weights.end());
    return generate_scene_with_count(cfg, seed, pick(rng));
}

/// Stacks batch-1 scenes into one batch.
inline std::pair<FeatureGrid, VectorBatch> stack(std::span<const Scene> scenes)
{
    if (scenes.empty())
        throw DimensionError("stack: no scenes");
    const auto& f0 = scenes.front().features;
    FeatureGrid features(scenes.size(), f0.height(), f0.width(), f0.channels());
    VectorBatch audio(scenes.size(), f0.channels());
    for (std::size_t b = 0; b < scenes.size(); ++b) {
        const auto& s = scenes[b];
        if (s.features.height() != f0.height() || s.features.width() != f0.width() ||
            s.features.channels() != f0.channels())
            throw DimensionError("stack: scene shapes differ");
        std::copy(s.features.sample(0).begin(), s.features.sample(0).end(), features.sample(b).begin());
        std::copy(s.audio.row(0).begin(), s.audio.row(0).end(), audio.row(b).begin());
    }
    return {std::move(features), std::move(audio)};
}

// ---------------------------------------------------------------------------
// truth.json: masks stored per row as [start, length] runs.

inline nlohmann::json encode_mask_rle(const Mask& m, std::size_t height, std::size_t width)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < height; ++i) {
        nlohmann::json runs = nlohmann::json::array();
        std::size_t j = 0;
        while (j < width) {
            if (!m[i * width + j]) {
                ++j;
                continue;
            }
            const std::size_t start = j;
            while (j < width && m[i * width + j])
                ++j;
            runs.push_back({start, j - start});
        }
        rows.push_back(std::move(runs));
    }
    return rows;
}

inline Mask decode_mask_rle(const nlohmann::json& rows, std::size_t height, std::size_t width)
{
    if (!rows.is_array() || rows.size() != height)
        throw FormatError("truth: mask row count mismatch");
    Mask m(height * width, 0);
    for (std::size_t i = 0; i < height; ++i) {
        for (const auto& run : rows[i]) {
            const auto start = run.at(0).get<std::size_t>();
            const auto len = run.at(1).get<std::size_t>();
            if (start + len > width)
                throw FormatError("truth: run exceeds row width");
            for (std::size_t j = start; j < start + len; ++j)
                m[i * width + j] = 1;
        }
    }
    return m;
}

inline nlohmann::json truth_to_json(const SceneTruth& t)
{
    nlohmann::json j;
    j["K"] = t.count();
    j["seed"] = t.seed;
    j["height"] = t.height;
    j["width"] = t.width;
    j["masks"] = nlohmann::json::array();
    for (const auto& m : t.masks)
        j["masks"].push_back(encode_mask_rle(m, t.height, t.width));
    return j;
}

/// Masks, K and seed only; prototypes are not serialized.
inline SceneTruth truth_from_json(const nlohmann::json& j)
{
    try {
        SceneTruth t;
        t.height = j.at("height").get<std::size_t>();
        t.width = j.at("width").get<std::size_t>();
        t.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& rows : j.at("masks"))
            t.masks.push_back(decode_mask_rle(rows, t.height, t.width));
        if (j.at("K").get<std::size_t>() != t.masks.size())
            throw FormatError("truth: K does not match mask count");
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("truth: ") + e.what());
    }
}

} // namespace mssl::synth
