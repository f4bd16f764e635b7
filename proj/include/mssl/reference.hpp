#pragma once

// Straight-line reference for the localization pipeline, written without
// the optimized modules: literal similarity normalization and masking,
// literal iterative identification, threshold filtering, and clustering by
// boolean transitive closure (O(n^3)) instead of union-find. Used as an
// equivalence oracle on desk-scale grids.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mssl/grid.hpp"
#include "mssl/grouping.hpp"

namespace mssl::reference {

struct Params {
    double alpha = 0.65;
    double omega = 0.03;
    double background_cut = 0.5;
    double epsilon = -1.0; ///< negative means 1/(h*w)
    std::size_t t_max = 0; ///< 0 means h*w
    double tau1 = 0.7;
    double tau2 = 0.6;
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b)
{
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    aa = std::sqrt(aa);
    bb = std::sqrt(bb);
    if (aa < 1e-12 || bb < 1e-12)
        return 0.0;
    return ab / (aa * bb);
}

inline double inner(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        s += a[k] * b[k];
    return s;
}

} // namespace detail

/// Naive identification of one sample. `features` is h*w cell vectors in
/// row-major order, `audio` the sample's audio embedding.
inline SampleObjects oracle_identify(const std::vector<std::vector<double>>& features, const std::vector<double>& audio,
                                     std::size_t h, std::size_t w, const Params& prm)
{
    const std::size_t n = h * w;
    const std::size_t c = audio.size();

    // Normalized self map.
    std::vector<double> sim(n);
    double total = 0;
    for (std::size_t k = 0; k < n; ++k) {
        sim[k] = detail::cosine(features[k], audio);
        total += sim[k];
    }
    if (std::abs(total) <= 1e-9)
        throw DegenerateNormalization("reference: degenerate denominator");
    for (double& s : sim)
        s = s / total;

    // Background probe from the sigmoid mask.
    std::vector<double> e_n(c, 0.0);
    int bg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double m = 1.0 / (1.0 + std::exp(-(sim[k] - prm.alpha) / prm.omega));
        if (m < prm.background_cut) {
            for (std::size_t ch = 0; ch < c; ++ch)
                e_n[ch] += features[k][ch];
            ++bg;
        }
    }
    if (bg > 0)
        for (double& v : e_n)
            v = v / bg;

    std::vector<std::vector<double>> f_hat(n, std::vector<double>(c));
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t ch = 0; ch < c; ++ch)
            f_hat[k][ch] = sim[k] * features[k][ch];

    // Iterative identification.
    const double eps = prm.epsilon < 0 ? 1.0 / static_cast<double>(n) : prm.epsilon;
    const std::size_t t_max = (prm.t_max == 0 || prm.t_max > n) ? n : prm.t_max;
    std::vector<double> work = sim;
    std::vector<int> owner(n, -1);
    std::vector<std::vector<double>> bank;
    std::vector<double> peaks;
    std::vector<std::vector<double>> fg_maps;
    std::vector<Mask> regions;
    while (bank.size() < t_max) {
        std::size_t best = 0;
        for (std::size_t k = 0; k < n; ++k)
            if (work[k] > work[best])
                best = k;
        if (!(work[best] > eps))
            break;
        const std::vector<double> e_p = f_hat[best];
        Mask region(n, 0);
        std::vector<double> fg(n);
        for (std::size_t k = 0; k < n; ++k) {
            fg[k] = detail::inner(f_hat[k], e_p);
            const double r_n = detail::inner(f_hat[k], e_n);
            if (owner[k] < 0 && fg[k] > r_n)
                region[k] = 1;
        }
        region[best] = 1;
        for (std::size_t k = 0; k < n; ++k) {
            if (region[k]) {
                owner[k] = static_cast<int>(bank.size());
                work[k] = 0.0;
            }
        }
        bank.push_back(e_p);
        peaks.push_back(sim[best]);
        fg_maps.push_back(fg);
        regions.push_back(region);
    }

    // Background filtering.
    SampleObjects out;
    out.height = h;
    out.width = w;
    std::vector<std::size_t> kept;
    for (std::size_t t = 0; t < bank.size(); ++t) {
        if (detail::cosine(bank[t], e_n) > prm.tau1)
            out.discarded.push_back(t);
        else
            kept.push_back(t);
    }

    // Transitive closure of the threshold graph.
    const std::size_t m = kept.size();
    std::vector<std::vector<bool>> reach(m, std::vector<bool>(m, false));
    for (std::size_t a = 0; a < m; ++a) {
        reach[a][a] = true;
        for (std::size_t b = 0; b < m; ++b)
            if (a != b && detail::cosine(bank[kept[a]], bank[kept[b]]) > prm.tau2)
                reach[a][b] = true;
    }
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t a = 0; a < m; ++a)
            for (std::size_t b = 0; b < m; ++b)
                if (reach[a][k] && reach[k][b])
                    reach[a][b] = true;

    std::vector<bool> done(m, false);
    for (std::size_t a = 0; a < m; ++a) {
        if (done[a])
            continue;
        DetectedObject obj;
        for (std::size_t b = 0; b < m; ++b) {
            if (reach[a][b]) {
                done[b] = true;
                obj.members.push_back(kept[b]);
            }
        }
        obj.anchor = obj.members[0];
        for (std::size_t r : obj.members)
            if (peaks[r] > peaks[obj.anchor])
                obj.anchor = r;
        obj.map.assign(n, 0);
        obj.scores.assign(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            bool first = true;
            for (std::size_t r : obj.members) {
                if (regions[r][k]) {
                    obj.map[k] = 1;
                }
            }
            if (!obj.map[k])
                continue;
            for (std::size_t r : obj.members) {
                if (first || fg_maps[r][k] > obj.scores[k])
                    obj.scores[k] = fg_maps[r][k];
                first = false;
            }
        }
        out.objects.push_back(std::move(obj));
    }
    return out;
}

/// Convenience overload over one sample of a grid.
inline SampleObjects oracle_identify(const FeatureGrid& visual, const VectorBatch& audio, std::size_t b,
                                     const Params& prm)
{
    std::vector<std::vector<double>> cells;
    for (std::size_t k = 0; k < visual.cells(); ++k) {
        auto v = visual.cell(b, k);
        cells.emplace_back(v.begin(), v.end());
    }
    auto a = audio.row(b);
    return oracle_identify(cells, std::vector<double>(a.begin(), a.end()), visual.height(), visual.width(), prm);
}

/// Same K, discarded set, memberships, anchors and fused maps.
inline bool structurally_equal(const SampleObjects& a, const SampleObjects& b)
{
    if (a.height != b.height || a.width != b.width || a.discarded != b.discarded ||
        a.objects.size() != b.objects.size())
        return false;
    for (std::size_t k = 0; k < a.objects.size(); ++k) {
        const auto& x = a.objects[k];
        const auto& y = b.objects[k];
        if (x.members != y.members || x.anchor != y.anchor || x.map != y.map)
            return false;
    }
    return true;
}

} // namespace mssl::reference
