#pragma once

// Training objectives: the audio-visual contrastive loss, the object
// similarity-aware clustering loss, their weighted sum, analytic gradients
// and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"
#include "mssl/sarl.hpp"

namespace mssl {

struct LossValue {
    double value = 0.0;
    /// Named parameter blocks, each shaped like the block it differentiates.
    std::map<std::string, Vector> gradients;
};

/// Where an OSC vector came from, so gradients can be routed back to features.
struct OscVectorRef {
    enum class Kind { none, cell, negative_mean };
    Kind kind = Kind::none;
    CellIndex cell{}; ///< for Kind::cell; for Kind::negative_mean only cell.sample is used

    auto operator<=>(const OscVectorRef&) const = default;
};

struct OscGroup {
    Vector anchor;
    std::vector<Vector> positives;
    std::vector<Vector> negatives;

    // Optional provenance, parallel to the vectors above. Empty when the
    // structure was built by hand.
    OscVectorRef anchor_ref;
    std::vector<OscVectorRef> positive_refs;
    std::vector<OscVectorRef> negative_refs;
};

/// Per sample, the K_b object groups.
struct OscBatchStructure {
    std::vector<std::vector<OscGroup>> samples;
};

/// Visits every vector of the structure in a fixed order (sample, group,
/// anchor, positives, negatives). The flat "vectors" gradient block of
/// osc_loss follows the same order.
template <typename Fn>
void for_each_osc_vector(const OscBatchStructure& s, Fn&& fn)
{
    for (const auto& groups : s.samples) {
        for (const auto& g : groups) {
            fn(g.anchor, g.anchor_ref);
            for (std::size_t i = 0; i < g.positives.size(); ++i)
                fn(g.positives[i], i < g.positive_refs.size() ? g.positive_refs[i] : OscVectorRef{});
            for (std::size_t i = 0; i < g.negatives.size(); ++i)
                fn(g.negatives[i], i < g.negative_refs.size() ? g.negative_refs[i] : OscVectorRef{});
        }
    }
}

inline std::size_t osc_vector_count(const OscBatchStructure& s)
{
    std::size_t n = 0;
    for_each_osc_vector(s, [&](const Vector&, const OscVectorRef&) { ++n; });
    return n;
}

/// Anchors appear in exactly one group and no provenance is both a positive
/// and a negative of the same group. Only meaningful for structures that
/// carry provenance.
inline bool osc_structure_valid(const OscBatchStructure& s)
{
    for (const auto& groups : s.samples) {
        std::vector<OscVectorRef> anchors;
        for (const auto& g : groups) {
            if (g.positive_refs.size() != g.positives.size() || g.negative_refs.size() != g.negatives.size())
                return false;
            anchors.push_back(g.anchor_ref);
            auto pos = g.positive_refs;
            auto neg = g.negative_refs;
            std::sort(pos.begin(), pos.end());
            std::sort(neg.begin(), neg.end());
            std::vector<OscVectorRef> both;
            std::set_intersection(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(both));
            if (!both.empty())
                return false;
            if (std::binary_search(neg.begin(), neg.end(), g.anchor_ref) ||
                std::binary_search(pos.begin(), pos.end(), g.anchor_ref))
                return false;
        }
        std::sort(anchors.begin(), anchors.end());
        if (std::adjacent_find(anchors.begin(), anchors.end()) != anchors.end())
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Audio-visual contrastive loss

namespace detail {

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

} // namespace detail

/// Contrastive loss over the batch. Gradient blocks: "visual" (B*h*w*c) and
/// "audio" (B*c). The cross-clip negative term is empty when B == 1.
inline LossValue avc_loss(const FeatureGrid& visual, const VectorBatch& audio, const SarlConfig& cfg,
                          bool with_gradients = true)
{
    detail::check_pair(visual, audio);
    const std::size_t B = visual.batch();
    const std::size_t hw = visual.cells();
    const std::size_t c = visual.channels();
    const double inv_hw = 1.0 / static_cast<double>(hw);

    LossValue out;
    Vector grad_visual, grad_audio;
    if (with_gradients) {
        grad_visual.assign(visual.data().size(), 0.0);
        grad_audio.assign(audio.data().size(), 0.0);
    }

    Vector cos_self(hw), s(hw), mask(hw), inv_mask(hw), dmask(hw), g(hw);
    for (std::size_t n = 0; n < B; ++n) {
        double denom = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
            cos_self[k] = cosine_sim(visual.cell(n, k), audio.row(n));
            denom += cos_self[k];
        }
        if (std::abs(denom) <= kDegenerateDenominator)
            throw DegenerateNormalization("avc_loss: self-pair denominator vanishes for sample " + std::to_string(n));

        double mask_sum = 0.0, inv_sum = 0.0, pos_num = 0.0, neg_num = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
            s[k] = cos_self[k] / denom;
            const double z = (s[k] - cfg.alpha) / cfg.omega;
            mask[k] = sigmoid(z);
            inv_mask[k] = sigmoid(-z);
            dmask[k] = mask[k] * inv_mask[k] / cfg.omega;
            mask_sum += mask[k];
            inv_sum += inv_mask[k];
            pos_num += mask[k] * s[k];
            neg_num += inv_mask[k] * s[k];
        }
        if (!(mask_sum > 0.0) || !(inv_sum > 0.0))
            throw NumericalInstability("avc_loss: soft mask saturated");

        double cross = 0.0; // sum over m != n of all cross-pair cosines
        for (std::size_t m = 0; m < B; ++m) {
            if (m == n)
                continue;
            for (std::size_t k = 0; k < hw; ++k)
                cross += cosine_sim(visual.cell(n, k), audio.row(m));
        }

        const double pos = pos_num / mask_sum;
        const double neg_within = neg_num / inv_sum;
        const double neg = neg_within + cross * inv_hw / denom;
        out.value += detail::softplus(neg - pos) / static_cast<double>(B);

        if (!with_gradients)
            continue;

        const double weight = sigmoid(neg - pos) / static_cast<double>(B);
        const double g_pos = -weight;
        const double g_neg = weight;

        double gs = 0.0;
        for (std::size_t k = 0; k < hw; ++k) {
            const double d_pos = (mask[k] + (s[k] - pos) * dmask[k]) / mask_sum;
            const double d_neg = (inv_mask[k] - (s[k] - neg_within) * dmask[k]) / inv_sum;
            g[k] = g_pos * d_pos + g_neg * d_neg;
            gs += g[k] * s[k];
        }
        const double d_cross_denom = -g_neg * cross * inv_hw / (denom * denom);
        const double d_cross = g_neg * inv_hw / denom;

        std::span<double> ga_n(grad_audio.data() + n * c, c);
        for (std::size_t k = 0; k < hw; ++k) {
            std::span<double> gv(grad_visual.data() + visual.offset(n, 0, 0) + k * c, c);
            const double d_cos = (g[k] - gs) / denom + d_cross_denom;
            cosine_sim_grad(visual.cell(n, k), audio.row(n), d_cos, gv, ga_n);
            for (std::size_t m = 0; m < B; ++m) {
                if (m == n)
                    continue;
                std::span<double> ga_m(grad_audio.data() + m * c, c);
                cosine_sim_grad(visual.cell(n, k), audio.row(m), d_cross, gv, ga_m);
            }
        }
    }

    if (!std::isfinite(out.value))
        throw NumericalInstability("avc_loss: non-finite value");
    if (with_gradients) {
        out.gradients.emplace("visual", std::move(grad_visual));
        out.gradients.emplace("audio", std::move(grad_audio));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Object similarity-aware clustering loss

/// Per group: (1 - mean cos(anchor, positives)) + mean cos(anchor, negatives),
/// with empty sets contributing nothing. Averaged over groups within a sample
/// and over samples. Gradient block "vectors" is flat in for_each_osc_vector
/// order.
inline LossValue osc_loss(const OscBatchStructure& structure, bool with_gradients = true)
{
    LossValue out;
    const std::size_t B = structure.samples.size();
    if (B == 0)
        return out;

    // Offsets of every vector in the flat gradient block.
    std::size_t total = 0;
    for_each_osc_vector(structure, [&](const Vector& v, const OscVectorRef&) { total += v.size(); });
    Vector grad(with_gradients ? total : 0, 0.0);
    std::size_t cursor = 0;
    auto next_block = [&](std::size_t size) -> std::span<double> {
        std::span<double> blk;
        if (with_gradients)
            blk = std::span<double>(grad.data() + cursor, size);
        cursor += size;
        return blk;
    };

    for (const auto& groups : structure.samples) {
        const std::size_t K = groups.size();
        if (K == 0)
            continue;
        const double w = 1.0 / (static_cast<double>(B) * static_cast<double>(K));
        for (const auto& grp : groups) {
            auto g_anchor = next_block(grp.anchor.size());

            double cp = 1.0;
            if (!grp.positives.empty()) {
                cp = 0.0;
                const double inv = 1.0 / static_cast<double>(grp.positives.size());
                for (const auto& p : grp.positives) {
                    if (p.size() != grp.anchor.size())
                        throw DimensionError("osc_loss: positive length mismatch");
                    cp += cosine_sim(grp.anchor, p) * inv;
                    auto g_p = next_block(p.size());
                    if (with_gradients)
                        cosine_sim_grad(grp.anchor, p, -w * inv, g_anchor, g_p);
                }
            }
            double cn = 0.0;
            if (!grp.negatives.empty()) {
                const double inv = 1.0 / static_cast<double>(grp.negatives.size());
                for (const auto& q : grp.negatives) {
                    if (q.size() != grp.anchor.size())
                        throw DimensionError("osc_loss: negative length mismatch");
                    cn += cosine_sim(grp.anchor, q) * inv;
                    auto g_q = next_block(q.size());
                    if (with_gradients)
                        cosine_sim_grad(grp.anchor, q, w * inv, g_anchor, g_q);
                }
            }
            out.value += w * ((1.0 - cp) + cn);
        }
    }
    if (with_gradients)
        out.gradients.emplace("vectors", std::move(grad));
    return out;
}

/// lambda1 * avc + lambda2 * osc; gradient blocks with the same name are summed.
inline LossValue total_loss(const LossValue& avc, const LossValue& osc, double lambda1, double lambda2)
{
    if (!std::isfinite(avc.value) || !std::isfinite(osc.value))
        throw NumericalInstability("total_loss: non-finite component");
    LossValue out;
    out.value = lambda1 * avc.value + lambda2 * osc.value;
    auto accumulate = [&](const LossValue& part, double scale) {
        for (const auto& [name, g] : part.gradients) {
            auto [it, inserted] = out.gradients.try_emplace(name, g.size(), 0.0);
            if (it->second.size() != g.size())
                throw DimensionError("total_loss: gradient block '" + name + "' shape mismatch");
            for (std::size_t k = 0; k < g.size(); ++k)
                it->second[k] += scale * g[k];
        }
    };
    accumulate(avc, lambda1);
    accumulate(osc, lambda2);
    return out;
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t worst_coordinate = 0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// derivative is ~0 from dominating on rounding noise.
inline double relative_error(double analytic, double numeric, double floor = 1e-6)
{
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

/// Central differences (f(x+h) - f(x-h)) / 2h against an analytic gradient.
/// Blocks longer than max_coordinates are subsampled without replacement
/// with a seeded generator; max_coordinates is raised to 64 if lower.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& loss_fn,
                                  std::span<const double> params, std::span<const double> analytic, double step,
                                  double tolerance, std::size_t max_coordinates = 64, std::uint64_t seed = 0)
{
    if (!(step > 0.0))
        throw ConfigError("grad_check: step must be > 0");
    if (params.size() != analytic.size())
        throw DimensionError("grad_check: gradient length mismatch");

    std::vector<std::size_t> coords(params.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    const std::size_t budget = std::max<std::size_t>(max_coordinates, 64);
    if (coords.size() > budget) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(budget);
        std::sort(coords.begin(), coords.end());
    }

    GradCheckReport report;
    Vector x(params.begin(), params.end());
    for (std::size_t k : coords) {
        const double orig = x[k];
        x[k] = orig + step;
        const double fp = loss_fn(x);
        x[k] = orig - step;
        const double fm = loss_fn(x);
        x[k] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericalInstability("grad_check: non-finite loss while probing coordinate " + std::to_string(k));
        const double numeric = (fp - fm) / (2.0 * step);
        const double err = relative_error(analytic[k], numeric);
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_coordinate = k;
        }
        ++report.coordinates;
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

} // namespace mssl
