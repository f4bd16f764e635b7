#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mssl/errors.hpp"

namespace mssl {

using Vector = std::vector<double>;

/// Binary h*w map in row-major order (1 = inside).
using Mask = std::vector<std::uint8_t>;

struct CellIndex {
    std::size_t sample = 0;
    std::size_t row = 0;
    std::size_t col = 0;

    auto operator<=>(const CellIndex&) const = default;
};

namespace detail {

inline void require_finite(std::span<const double> values, const char* what)
{
    for (double v : values) {
        if (!std::isfinite(v))
            throw NumericalInstability(std::string(what) + ": non-finite entry");
    }
}

} // namespace detail

/// Batched visual feature tensor, row-major (b, i, j, ch).
class FeatureGrid {
public:
    FeatureGrid() = default;

    FeatureGrid(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels)
        : FeatureGrid(batch, height, width, channels, Vector(batch * height * width * channels, 0.0))
    {
    }

    FeatureGrid(std::size_t batch, std::size_t height, std::size_t width, std::size_t channels, Vector data)
        : batch_(batch), height_(height), width_(width), channels_(channels), data_(std::move(data))
    {
        if (batch == 0 || height == 0 || width == 0 || channels == 0)
            throw DimensionError("FeatureGrid: all dimensions must be >= 1");
        if (data_.size() != batch * height * width * channels)
            throw DimensionError("FeatureGrid: data length does not match B*h*w*c");
        detail::require_finite(data_, "FeatureGrid");
    }

    std::size_t batch() const noexcept { return batch_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t cells() const noexcept { return height_ * width_; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::size_t offset(std::size_t b, std::size_t i, std::size_t j) const noexcept
    {
        return ((b * height_ + i) * width_ + j) * channels_;
    }

    std::span<const double> cell(std::size_t b, std::size_t i, std::size_t j) const noexcept
    {
        return {data_.data() + offset(b, i, j), channels_};
    }
    std::span<double> cell(std::size_t b, std::size_t i, std::size_t j) noexcept
    {
        return {data_.data() + offset(b, i, j), channels_};
    }

    /// Cell by linear index k = i*w + j within sample b.
    std::span<const double> cell(std::size_t b, std::size_t k) const noexcept
    {
        return {data_.data() + (b * cells() + k) * channels_, channels_};
    }
    std::span<double> cell(std::size_t b, std::size_t k) noexcept
    {
        return {data_.data() + (b * cells() + k) * channels_, channels_};
    }

    /// All h*w*c values of one sample.
    std::span<const double> sample(std::size_t b) const noexcept
    {
        return {data_.data() + b * cells() * channels_, cells() * channels_};
    }
    std::span<double> sample(std::size_t b) noexcept
    {
        return {data_.data() + b * cells() * channels_, cells() * channels_};
    }

    bool operator==(const FeatureGrid&) const = default;

private:
    std::size_t batch_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    Vector data_;
};

/// One c-vector per sample. Holds audio embeddings and per-sample probes such as E_n.
class VectorBatch {
public:
    VectorBatch() = default;

    VectorBatch(std::size_t batch, std::size_t channels)
        : VectorBatch(batch, channels, Vector(batch * channels, 0.0))
    {
    }

    VectorBatch(std::size_t batch, std::size_t channels, Vector data)
        : batch_(batch), channels_(channels), data_(std::move(data))
    {
        if (batch == 0 || channels == 0)
            throw DimensionError("VectorBatch: dimensions must be >= 1");
        if (data_.size() != batch * channels)
            throw DimensionError("VectorBatch: data length does not match B*c");
        detail::require_finite(data_, "VectorBatch");
    }

    std::size_t batch() const noexcept { return batch_; }
    std::size_t channels() const noexcept { return channels_; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    std::span<const double> row(std::size_t b) const noexcept { return {data_.data() + b * channels_, channels_}; }
    std::span<double> row(std::size_t b) noexcept { return {data_.data() + b * channels_, channels_}; }

    bool operator==(const VectorBatch&) const = default;

private:
    std::size_t batch_ = 0;
    std::size_t channels_ = 0;
    Vector data_;
};

using AudioEmbedding = VectorBatch;

/// Batched h*w real field (similarity maps, inner-product maps).
class SimilarityMap {
public:
    SimilarityMap() = default;

    SimilarityMap(std::size_t batch, std::size_t height, std::size_t width)
        : SimilarityMap(batch, height, width, Vector(batch * height * width, 0.0))
    {
    }

    SimilarityMap(std::size_t batch, std::size_t height, std::size_t width, Vector data)
        : batch_(batch), height_(height), width_(width), data_(std::move(data))
    {
        if (batch == 0 || height == 0 || width == 0)
            throw DimensionError("SimilarityMap: dimensions must be >= 1");
        if (data_.size() != batch * height * width)
            throw DimensionError("SimilarityMap: data length does not match B*h*w");
        detail::require_finite(data_, "SimilarityMap");
    }

    std::size_t batch() const noexcept { return batch_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t cells() const noexcept { return height_ * width_; }

    std::span<const double> data() const noexcept { return data_; }

    std::span<const double> plane(std::size_t b) const noexcept { return {data_.data() + b * cells(), cells()}; }
    std::span<double> plane(std::size_t b) noexcept { return {data_.data() + b * cells(), cells()}; }

    double at(std::size_t b, std::size_t i, std::size_t j) const noexcept { return data_[b * cells() + i * width_ + j]; }

    bool operator==(const SimilarityMap&) const = default;

private:
    std::size_t batch_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    Vector data_;
};

// ---------------------------------------------------------------------------
// Elementary operations

inline double dot(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k)
        s += a[k] * b[k];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Norms below this are treated as zero by cosine_sim.
inline constexpr double kZeroNorm = 1e-12;

/// <a,b> / (|a| |b|), or 0 when either norm is below kZeroNorm.
inline double cosine_sim(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw DimensionError("cosine_sim: length mismatch");
    const double na = norm(a);
    const double nb = norm(b);
    if (na < kZeroNorm || nb < kZeroNorm)
        return 0.0;
    return dot(a, b) / (na * nb);
}

/// Accumulates scale * d cos(a,b)/da into grad_a and scale * d cos(a,b)/db into grad_b.
/// Either output may be empty to skip it. Zero-norm operands contribute nothing.
inline void cosine_sim_grad(std::span<const double> a, std::span<const double> b, double scale,
                            std::span<double> grad_a, std::span<double> grad_b)
{
    const double na = norm(a);
    const double nb = norm(b);
    if (na < kZeroNorm || nb < kZeroNorm)
        return;
    const double cos = dot(a, b) / (na * nb);
    const double inv = 1.0 / (na * nb);
    if (!grad_a.empty()) {
        for (std::size_t k = 0; k < a.size(); ++k)
            grad_a[k] += scale * (b[k] * inv - cos * a[k] / (na * na));
    }
    if (!grad_b.empty()) {
        for (std::size_t k = 0; k < b.size(); ++k)
            grad_b[k] += scale * (a[k] * inv - cos * b[k] / (nb * nb));
    }
}

/// Channelwise mean over all h*w cells of each sample.
inline VectorBatch gap(const FeatureGrid& features)
{
    const std::size_t c = features.channels();
    VectorBatch out(features.batch(), c);
    const double inv = 1.0 / static_cast<double>(features.cells());
    for (std::size_t b = 0; b < features.batch(); ++b) {
        auto dst = out.row(b);
        for (std::size_t k = 0; k < features.cells(); ++k) {
            auto src = features.cell(b, k);
            for (std::size_t ch = 0; ch < c; ++ch)
                dst[ch] += src[ch];
        }
        for (double& v : dst)
            v *= inv;
    }
    return out;
}

/// out[b,i,j] = <features[b,i,j,:], probe[b]>, unnormalized.
inline SimilarityMap inner_product_map(const FeatureGrid& features, const VectorBatch& probe)
{
    if (probe.channels() != features.channels())
        throw DimensionError("inner_product_map: channel mismatch");
    if (probe.batch() != features.batch())
        throw DimensionError("inner_product_map: batch mismatch");
    SimilarityMap out(features.batch(), features.height(), features.width());
    for (std::size_t b = 0; b < features.batch(); ++b) {
        auto dst = out.plane(b);
        for (std::size_t k = 0; k < features.cells(); ++k)
            dst[k] = dot(features.cell(b, k), probe.row(b));
    }
    return out;
}

/// Single-sample form of inner_product_map.
inline Vector inner_product_plane(const FeatureGrid& features, std::size_t b, std::span<const double> probe)
{
    if (probe.size() != features.channels())
        throw DimensionError("inner_product_map: channel mismatch");
    Vector out(features.cells());
    for (std::size_t k = 0; k < features.cells(); ++k)
        out[k] = dot(features.cell(b, k), probe);
    return out;
}

/// Index of the largest entry; ties resolve to the smallest index.
inline std::size_t argmax_index(std::span<const double> plane)
{
    std::size_t best = 0;
    for (std::size_t k = 1; k < plane.size(); ++k) {
        if (plane[k] > plane[best])
            best = k;
    }
    return best;
}

inline std::pair<CellIndex, double> argmax_cell(const SimilarityMap& map, std::size_t sample)
{
    if (sample >= map.batch())
        throw DimensionError("argmax_cell: sample index out of range");
    auto plane = map.plane(sample);
    const std::size_t k = argmax_index(plane);
    return {CellIndex{sample, k / map.width(), k % map.width()}, plane[k]};
}

inline std::size_t mask_count(const Mask& m)
{
    std::size_t n = 0;
    for (auto v : m)
        n += v ? 1 : 0;
    return n;
}

} // namespace mssl
