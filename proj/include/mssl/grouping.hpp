#pragma once

// Turns an object bank into objects: drop background-like entries, merge the
// rest by pairwise cosine similarity, and fuse each object's regions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mssl/errors.hpp"
#include "mssl/grid.hpp"
#include "mssl/ioi.hpp"
#include "mssl/objectives.hpp"
#include "mssl/union_find.hpp"

namespace mssl {

struct GroupConfig {
    double tau1 = 0.7; ///< bank entries closer than this to E_n are background
    double tau2 = 0.6; ///< entries closer than this to each other are one object

    void validate() const
    {
        if (!(tau1 > 0.0 && tau1 < 1.0))
            throw ConfigError("tau1 must lie in (0,1)");
        if (!(tau2 > 0.0 && tau2 < 1.0))
            throw ConfigError("tau2 must lie in (0,1)");
    }
};

struct BackgroundSplit {
    std::vector<std::size_t> kept;
    std::vector<std::size_t> discarded;
};

inline BackgroundSplit filter_background(const ObjectBank& bank, std::span<const double> e_n, const GroupConfig& cfg)
{
    BackgroundSplit out;
    for (std::size_t t = 0; t < bank.records.size(); ++t) {
        if (cosine_sim(bank.records[t].cell_vector, e_n) > cfg.tau1)
            out.discarded.push_back(t);
        else
            out.kept.push_back(t);
    }
    return out;
}

/// Sorted member lists, ordered by smallest member.
using Partition = std::vector<std::vector<std::size_t>>;

/// Connected components of the graph with an edge wherever cosine > tau2.
inline Partition cluster_cells(std::span<const Vector> vectors, const GroupConfig& cfg)
{
    UnionFind uf(vectors.size());
    for (std::size_t u = 0; u < vectors.size(); ++u) {
        for (std::size_t v = u + 1; v < vectors.size(); ++v) {
            if (cosine_sim(vectors[u], vectors[v]) > cfg.tau2)
                uf.unite(u, v);
        }
    }
    return uf.components();
}

struct DetectedObject {
    std::vector<std::size_t> members; ///< record indices into the bank
    std::size_t anchor = 0;           ///< record index of the representative member
    Mask map;                         ///< union of member regions
    Vector scores;                    ///< max member foreground response inside map, 0 outside
};

struct SampleObjects {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<DetectedObject> objects;
    std::vector<std::size_t> discarded;

    std::size_t count() const noexcept { return objects.size(); }
};

using ObjectGrouping = std::vector<SampleObjects>;

struct AssembledSample {
    SampleObjects objects;
    std::vector<OscGroup> osc; ///< one group per object
};

/// Builds objects from a partition of the kept records (partition indices
/// refer to positions in split.kept). The anchor is the member with the
/// highest peak value, earliest on ties. OSC negatives of an object are the
/// members of other objects, the discarded entries, and E_n when the sample
/// had background cells.
inline AssembledSample assemble_objects(const ObjectBank& bank, const BackgroundSplit& split, const Partition& partition,
                                        std::span<const double> e_n, bool e_n_valid, std::size_t sample)
{
    const std::size_t cells = bank.height * bank.width;
    AssembledSample out;
    out.objects.height = bank.height;
    out.objects.width = bank.width;
    out.objects.discarded = split.discarded;

    auto cell_ref = [&](std::size_t record) {
        return OscVectorRef{OscVectorRef::Kind::cell, bank.records[record].cell};
    };

    for (const auto& component : partition) {
        DetectedObject obj;
        for (std::size_t pos : component) {
            if (pos >= split.kept.size())
                throw DimensionError("assemble_objects: partition index out of range");
            obj.members.push_back(split.kept[pos]);
        }
        std::sort(obj.members.begin(), obj.members.end());
        obj.anchor = obj.members.front();
        for (std::size_t r : obj.members) {
            if (bank.records[r].peak_value > bank.records[obj.anchor].peak_value)
                obj.anchor = r;
        }
        obj.map.assign(cells, 0);
        obj.scores.assign(cells, 0.0);
        std::vector<bool> seen(cells, false);
        for (std::size_t r : obj.members) {
            const auto& rec = bank.records[r];
            for (std::size_t k = 0; k < cells; ++k) {
                if (rec.region[k])
                    obj.map[k] = 1;
            }
        }
        for (std::size_t k = 0; k < cells; ++k) {
            if (!obj.map[k])
                continue;
            for (std::size_t r : obj.members) {
                const double v = bank.records[r].foreground[k];
                if (!seen[k] || v > obj.scores[k]) {
                    obj.scores[k] = v;
                    seen[k] = true;
                }
            }
        }
        out.objects.objects.push_back(std::move(obj));
    }

    const auto& objs = out.objects.objects;
    for (std::size_t k = 0; k < objs.size(); ++k) {
        OscGroup g;
        g.anchor = bank.records[objs[k].anchor].cell_vector;
        g.anchor_ref = cell_ref(objs[k].anchor);
        for (std::size_t r : objs[k].members) {
            if (r == objs[k].anchor)
                continue;
            g.positives.push_back(bank.records[r].cell_vector);
            g.positive_refs.push_back(cell_ref(r));
        }
        for (std::size_t other = 0; other < objs.size(); ++other) {
            if (other == k)
                continue;
            for (std::size_t r : objs[other].members) {
                g.negatives.push_back(bank.records[r].cell_vector);
                g.negative_refs.push_back(cell_ref(r));
            }
        }
        for (std::size_t r : split.discarded) {
            g.negatives.push_back(bank.records[r].cell_vector);
            g.negative_refs.push_back(cell_ref(r));
        }
        if (e_n_valid) {
            g.negatives.emplace_back(e_n.begin(), e_n.end());
            g.negative_refs.push_back(OscVectorRef{OscVectorRef::Kind::negative_mean, CellIndex{sample, 0, 0}});
        }
        out.osc.push_back(std::move(g));
    }
    return out;
}

/// filter_background, cluster_cells and assemble_objects for one bank.
inline AssembledSample group_objects(const ObjectBank& bank, std::span<const double> e_n, bool e_n_valid,
                                     std::size_t sample, const GroupConfig& cfg)
{
    cfg.validate();
    const BackgroundSplit split = filter_background(bank, e_n, cfg);
    std::vector<Vector> kept;
    kept.reserve(split.kept.size());
    for (std::size_t r : split.kept)
        kept.push_back(bank.records[r].cell_vector);
    const Partition partition = cluster_cells(kept, cfg);
    return assemble_objects(bank, split, partition, e_n, e_n_valid, sample);
}

} // namespace mssl
