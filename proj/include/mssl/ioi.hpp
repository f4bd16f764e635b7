#pragma once

// Iterative object identification: pick the strongest remaining cell, carve
// out every cell that matches it better than the background probe, suppress
// that region and repeat while any cell is still salient.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"

namespace mssl {

struct IoiConfig {
    /// Loop continues while the working map has a cell above epsilon.
    /// Unset means 1/(h*w), the mean of a self-normalized map.
    std::optional<double> epsilon;
    /// Iteration cap; 0 means h*w. Values above h*w are clamped.
    std::size_t t_max = 0;

    double resolved_epsilon(std::size_t height, std::size_t width) const
    {
        return epsilon.value_or(1.0 / static_cast<double>(height * width));
    }

    std::size_t resolved_t_max(std::size_t height, std::size_t width) const
    {
        const std::size_t cells = height * width;
        return (t_max == 0 || t_max > cells) ? cells : t_max;
    }

    void validate() const
    {
        if (epsilon && !(*epsilon >= 0.0))
            throw ConfigError("epsilon must be >= 0");
    }
};

struct IterationRecord {
    std::size_t step = 0;
    CellIndex cell{};
    Vector cell_vector; ///< E^t_p, the reweighted feature at the selected cell
    Mask region;        ///< cells claimed in this iteration
    Vector foreground;  ///< R^t_p over the whole plane
    double peak_value = 0.0;
};

struct ObjectBank {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<IterationRecord> records;

    std::size_t iteration_count() const noexcept { return records.size(); }
};

/// Runs the loop for one sample. `self_plane` is copied; the caller's map is
/// not modified.
///
/// Each iteration claims the cells where <F_hat, E_p> > <F_hat, E_n> that no
/// earlier iteration claimed, plus the selected cell itself, then zeroes them
/// in the working map.
inline ObjectBank run_ioi_sample(const FeatureGrid& f_hat, std::span<const double> self_plane,
                                 std::span<const double> e_n, std::size_t b, const IoiConfig& cfg)
{
    if (self_plane.size() != f_hat.cells())
        throw DimensionError("run_ioi: map/feature shape mismatch");
    if (e_n.size() != f_hat.channels())
        throw DimensionError("run_ioi: negative vector channel mismatch");
    cfg.validate();

    const std::size_t w = f_hat.width();
    const double eps = cfg.resolved_epsilon(f_hat.height(), w);
    const std::size_t t_max = cfg.resolved_t_max(f_hat.height(), w);

    ObjectBank bank{f_hat.height(), w, {}};
    Vector working(self_plane.begin(), self_plane.end());
    Mask claimed(f_hat.cells(), 0);
    const Vector background = inner_product_plane(f_hat, b, e_n);

    while (bank.records.size() < t_max) {
        const std::size_t peak = argmax_index(working);
        if (!(working[peak] > eps))
            break;

        IterationRecord rec;
        rec.step = bank.records.size();
        rec.cell = CellIndex{b, peak / w, peak % w};
        rec.peak_value = working[peak];
        auto selected = f_hat.cell(b, peak);
        rec.cell_vector.assign(selected.begin(), selected.end());
        rec.foreground = inner_product_plane(f_hat, b, rec.cell_vector);

        rec.region.assign(f_hat.cells(), 0);
        for (std::size_t k = 0; k < f_hat.cells(); ++k) {
            if (!claimed[k] && rec.foreground[k] > background[k])
                rec.region[k] = 1;
        }
        rec.region[peak] = 1;

        for (std::size_t k = 0; k < f_hat.cells(); ++k) {
            if (rec.region[k]) {
                claimed[k] = 1;
                working[k] = 0.0;
            }
        }
        bank.records.push_back(std::move(rec));
    }
    return bank;
}

/// Per-sample loop over the batch.
inline std::vector<ObjectBank> run_ioi(const FeatureGrid& f_hat, const SimilarityMap& self_maps,
                                       const VectorBatch& e_n, const IoiConfig& cfg)
{
    if (self_maps.batch() != f_hat.batch() || self_maps.height() != f_hat.height() ||
        self_maps.width() != f_hat.width())
        throw DimensionError("run_ioi: map/feature shape mismatch");
    if (e_n.batch() != f_hat.batch())
        throw DimensionError("run_ioi: negative vector batch mismatch");
    std::vector<ObjectBank> banks;
    banks.reserve(f_hat.batch());
    for (std::size_t b = 0; b < f_hat.batch(); ++b)
        banks.push_back(run_ioi_sample(f_hat, self_maps.plane(b), e_n.row(b), b, cfg));
    return banks;
}

} // namespace mssl
