#pragma once

// Sound-associated region localization: normalized audio-visual similarity
// maps, their sigmoid masks, the reweighted visual features and the
// background probe vector.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"

namespace mssl {

struct SarlConfig {
    double alpha = 0.65;         ///< mask center
    double omega = 0.03;         ///< mask sharpness, > 0
    double background_cut = 0.5; ///< a cell is background when its mask value is below this

    void validate() const
    {
        if (!(omega > 0.0) || !std::isfinite(omega))
            throw ConfigError("omega must be > 0");
        if (!std::isfinite(alpha))
            throw ConfigError("alpha must be finite");
        if (!(background_cut > 0.0 && background_cut < 1.0))
            throw ConfigError("background_cut must lie in (0,1)");
    }
};

/// Self-pair denominators smaller than this in magnitude are rejected.
inline constexpr double kDegenerateDenominator = 1e-9;

namespace detail {

inline void check_pair(const FeatureGrid& visual, const VectorBatch& audio)
{
    if (visual.channels() != audio.channels())
        throw DimensionError("visual/audio channel mismatch");
    if (visual.batch() != audio.batch())
        throw DimensionError("visual/audio batch mismatch");
}

} // namespace detail

/// Sum over cells of Sim(F^n_ij, l^n_a).
inline double self_denominator(const FeatureGrid& visual, const VectorBatch& audio, std::size_t n)
{
    double sum = 0.0;
    for (std::size_t k = 0; k < visual.cells(); ++k)
        sum += cosine_sim(visual.cell(n, k), audio.row(n));
    return sum;
}

/// The n-th image against the m-th audio, normalized by the n-th self-pair
/// sum of cosines. For n == m the plane sums to 1.
inline Vector sim_map(const FeatureGrid& visual, const VectorBatch& audio, std::size_t n, std::size_t m)
{
    detail::check_pair(visual, audio);
    if (n >= visual.batch() || m >= visual.batch())
        throw DimensionError("sim_map: sample index out of range");
    const double denom = self_denominator(visual, audio, n);
    if (std::abs(denom) <= kDegenerateDenominator)
        throw DegenerateNormalization("sim_map: self-pair denominator vanishes for sample " + std::to_string(n));
    Vector plane(visual.cells());
    for (std::size_t k = 0; k < visual.cells(); ++k)
        plane[k] = cosine_sim(visual.cell(n, k), audio.row(m)) / denom;
    return plane;
}

/// All self-pair planes S^{n->n}.
inline SimilarityMap self_maps(const FeatureGrid& visual, const VectorBatch& audio)
{
    detail::check_pair(visual, audio);
    SimilarityMap out(visual.batch(), visual.height(), visual.width());
    for (std::size_t n = 0; n < visual.batch(); ++n) {
        const Vector plane = sim_map(visual, audio, n, n);
        std::copy(plane.begin(), plane.end(), out.plane(n).begin());
    }
    return out;
}

inline double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// sigmoid((s - alpha) / omega), elementwise.
inline Vector soft_mask(std::span<const double> self_plane, const SarlConfig& cfg)
{
    Vector out(self_plane.size());
    for (std::size_t k = 0; k < self_plane.size(); ++k)
        out[k] = sigmoid((self_plane[k] - cfg.alpha) / cfg.omega);
    return out;
}

/// F_hat[b,i,j,:] = S[b,i,j] * F[b,i,j,:].
inline FeatureGrid sound_assoc_features(const FeatureGrid& visual, const SimilarityMap& maps)
{
    if (maps.batch() != visual.batch() || maps.height() != visual.height() || maps.width() != visual.width())
        throw DimensionError("sound_assoc_features: shape mismatch");
    FeatureGrid out = visual;
    for (std::size_t b = 0; b < visual.batch(); ++b) {
        auto plane = maps.plane(b);
        for (std::size_t k = 0; k < visual.cells(); ++k) {
            for (double& v : out.cell(b, k))
                v *= plane[k];
        }
    }
    return out;
}

struct NegativeVectors {
    VectorBatch vectors;            ///< E_n per sample (zero when no background cell exists)
    std::vector<Mask> background;   ///< cells averaged into E_n
    std::vector<bool> empty;        ///< true when the sample had no background cell
};

/// E_n: mean of the raw visual features over cells whose soft mask falls below
/// background_cut.
inline NegativeVectors negative_vector(const FeatureGrid& visual, const SimilarityMap& maps, const SarlConfig& cfg)
{
    if (maps.batch() != visual.batch() || maps.height() != visual.height() || maps.width() != visual.width())
        throw DimensionError("negative_vector: shape mismatch");
    const std::size_t c = visual.channels();
    NegativeVectors out{VectorBatch(visual.batch(), c), {}, {}};
    for (std::size_t b = 0; b < visual.batch(); ++b) {
        const Vector mask = soft_mask(maps.plane(b), cfg);
        Mask bg(visual.cells(), 0);
        std::size_t count = 0;
        auto dst = out.vectors.row(b);
        for (std::size_t k = 0; k < visual.cells(); ++k) {
            if (mask[k] < cfg.background_cut) {
                bg[k] = 1;
                ++count;
                auto src = visual.cell(b, k);
                for (std::size_t ch = 0; ch < c; ++ch)
                    dst[ch] += src[ch];
            }
        }
        if (count > 0) {
            for (double& v : dst)
                v /= static_cast<double>(count);
        }
        out.background.push_back(std::move(bg));
        out.empty.push_back(count == 0);
    }
    return out;
}

} // namespace mssl
