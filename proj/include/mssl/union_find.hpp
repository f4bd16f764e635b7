#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace mssl {

/// Disjoint sets over 0..n-1 with path compression and union by rank.
class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0), sets_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

    std::size_t find(std::size_t x) noexcept
    {
        std::size_t root = x;
        while (parent_[root] != root)
            root = parent_[root];
        while (parent_[x] != root) {
            const std::size_t next = parent_[x];
            parent_[x] = root;
            x = next;
        }
        return root;
    }

    /// Returns false when a and b were already connected.
    bool unite(std::size_t a, std::size_t b) noexcept
    {
        a = find(a);
        b = find(b);
        if (a == b)
            return false;
        if (rank_[a] < rank_[b])
            std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b])
            ++rank_[a];
        --sets_;
        return true;
    }

    bool connected(std::size_t a, std::size_t b) noexcept { return find(a) == find(b); }

    std::size_t size() const noexcept { return parent_.size(); }
    std::size_t set_count() const noexcept { return sets_; }

    /// Components as sorted member lists, ordered by their smallest member.
    std::vector<std::vector<std::size_t>> components()
    {
        std::vector<std::size_t> slot(parent_.size(), parent_.size());
        std::vector<std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < parent_.size(); ++i) {
            const std::size_t r = find(i);
            if (slot[r] == parent_.size()) {
                slot[r] = out.size();
                out.emplace_back();
            }
            out[slot[r]].push_back(i);
        }
        return out;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<unsigned char> rank_;
    std::size_t sets_;
};

} // namespace mssl
