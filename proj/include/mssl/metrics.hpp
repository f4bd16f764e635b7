#pragma once

// Localization metrics on cell-level masks: IoU, optimal object matching,
// success rates (IoU@t, CIoU@0.3, AUC), ranking AP, CAP/PIAP and counting
// accuracy.
//
// Conventions for degenerate inputs:
//   - IoU of two empty masks is 1, of exactly one empty mask 0.
//   - Rate metrics over a case set with no ground-truth sources are 1 when
//     nothing was predicted either, 0 otherwise.
//   - Matched pairs with IoU 0 are treated as unmatched.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mssl/errors.hpp"
#include "mssl/grid.hpp"
#include "mssl/grouping.hpp"

namespace mssl::metrics {

struct PredictedCase {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Mask> maps;
    std::vector<Vector> scores; ///< per-object relevance, same order as maps
};

struct TruthCase {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Mask> masks;
};

struct EvalCase {
    PredictedCase predicted;
    TruthCase truth;
};

inline PredictedCase from_objects(const SampleObjects& s)
{
    PredictedCase p{s.height, s.width, {}, {}};
    for (const auto& o : s.objects) {
        p.maps.push_back(o.map);
        p.scores.push_back(o.scores);
    }
    return p;
}

inline double iou(const Mask& a, const Mask& b)
{
    if (a.size() != b.size())
        throw DimensionError("iou: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        inter += (a[k] && b[k]) ? 1 : 0;
        uni += (a[k] || b[k]) ? 1 : 0;
    }
    if (uni == 0)
        return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Assignment

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vector data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    Matrix transposed() const
    {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                t(j, i) = (*this)(i, j);
        return t;
    }
};

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs; ///< (row, col), sorted by row
    std::vector<std::size_t> unmatched_rows;
    std::vector<std::size_t> unmatched_cols;
    double total = 0.0;
};

namespace detail {

inline Assignment finish(const Matrix& w, std::vector<std::pair<std::size_t, std::size_t>> pairs)
{
    Assignment a;
    std::sort(pairs.begin(), pairs.end());
    std::vector<bool> row_used(w.rows, false), col_used(w.cols, false);
    for (auto [r, c] : pairs) {
        row_used[r] = col_used[c] = true;
        a.total += w(r, c);
    }
    a.pairs = std::move(pairs);
    for (std::size_t r = 0; r < w.rows; ++r)
        if (!row_used[r])
            a.unmatched_rows.push_back(r);
    for (std::size_t c = 0; c < w.cols; ++c)
        if (!col_used[c])
            a.unmatched_cols.push_back(c);
    return a;
}

// rows <= cols; picks the first maximum in lexicographic order of column choices.
inline void enumerate(const Matrix& w, std::size_t row, std::vector<bool>& used, std::vector<std::size_t>& cur,
                      double sum, double& best, std::vector<std::size_t>& best_cols)
{
    if (row == w.rows) {
        if (sum > best) {
            best = sum;
            best_cols = cur;
        }
        return;
    }
    for (std::size_t c = 0; c < w.cols; ++c) {
        if (used[c])
            continue;
        used[c] = true;
        cur[row] = c;
        enumerate(w, row + 1, used, cur, sum + w(row, c), best, best_cols);
        used[c] = false;
    }
}

} // namespace detail

/// Maximum-weight matching of min(rows, cols) pairs by trying every injective map.
inline Assignment exhaustive_assignment(const Matrix& w)
{
    if (w.rows > w.cols) {
        Assignment t = exhaustive_assignment(w.transposed());
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (auto [r, c] : t.pairs)
            pairs.emplace_back(c, r);
        return detail::finish(w, std::move(pairs));
    }
    std::vector<bool> used(w.cols, false);
    std::vector<std::size_t> cur(w.rows), best_cols(w.rows);
    double best = -std::numeric_limits<double>::infinity();
    detail::enumerate(w, 0, used, cur, 0.0, best, best_cols);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t r = 0; r < w.rows; ++r)
        pairs.emplace_back(r, best_cols[r]);
    return detail::finish(w, std::move(pairs));
}

/// Maximum-weight matching of min(rows, cols) pairs, O(n^2 m) shortest
/// augmenting paths with potentials.
inline Assignment hungarian_assignment(const Matrix& w)
{
    if (w.rows > w.cols) {
        Assignment t = hungarian_assignment(w.transposed());
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (auto [r, c] : t.pairs)
            pairs.emplace_back(c, r);
        return detail::finish(w, std::move(pairs));
    }
    const std::size_t n = w.rows, m = w.cols;
    if (n == 0)
        return detail::finish(w, {});
    const double inf = std::numeric_limits<double>::infinity();
    // Minimize -w. Arrays are 1-based; index 0 is the virtual root.
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j])
                    continue;
                const double cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0)
            pairs.emplace_back(p[j] - 1, j - 1);
    return detail::finish(w, std::move(pairs));
}

/// Exhaustive search up to 6 objects per side, Hungarian beyond.
inline Assignment max_weight_assignment(const Matrix& w)
{
    if (std::max(w.rows, w.cols) <= 6)
        return exhaustive_assignment(w);
    return hungarian_assignment(w);
}

namespace detail {

inline Assignment drop_nonpositive(const Matrix& w, const Assignment& a)
{
    std::vector<std::pair<std::size_t, std::size_t>> keep;
    for (auto [r, c] : a.pairs)
        if (w(r, c) > 0.0)
            keep.emplace_back(r, c);
    return finish(w, std::move(keep));
}

} // namespace detail

inline Matrix iou_matrix(const EvalCase& c)
{
    Matrix m(c.predicted.maps.size(), c.truth.masks.size());
    for (std::size_t p = 0; p < m.rows; ++p)
        for (std::size_t t = 0; t < m.cols; ++t)
            m(p, t) = iou(c.predicted.maps[p], c.truth.masks[t]);
    return m;
}

/// One-to-one predicted (rows) to truth (cols) matching maximizing total IoU.
inline Assignment match_objects(const EvalCase& c)
{
    const Matrix m = iou_matrix(c);
    return detail::drop_nonpositive(m, max_weight_assignment(m));
}

/// IoU of each ground-truth source with its matched prediction (0 if unmatched),
/// pooled over all cases.
inline Vector matched_truth_ious(std::span<const EvalCase> cases)
{
    Vector out;
    for (const auto& c : cases) {
        const Matrix m = iou_matrix(c);
        const Assignment a = detail::drop_nonpositive(m, max_weight_assignment(m));
        Vector per_truth(c.truth.masks.size(), 0.0);
        for (auto [p, t] : a.pairs)
            per_truth[t] = m(p, t);
        out.insert(out.end(), per_truth.begin(), per_truth.end());
    }
    return out;
}

namespace detail {

inline bool any_prediction(std::span<const EvalCase> cases)
{
    return std::any_of(cases.begin(), cases.end(), [](const EvalCase& c) { return !c.predicted.maps.empty(); });
}

inline double vacuous_rate(std::span<const EvalCase> cases) { return any_prediction(cases) ? 0.0 : 1.0; }

inline double success_rate(const Vector& ious, double threshold)
{
    std::size_t hits = 0;
    for (double v : ious)
        hits += v >= threshold ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(ious.size());
}

} // namespace detail

/// Fraction of ground-truth sources whose matched prediction reaches IoU >= threshold.
inline double ciou_at(std::span<const EvalCase> cases, double threshold = 0.3)
{
    const Vector ious = matched_truth_ious(cases);
    if (ious.empty())
        return detail::vacuous_rate(cases);
    return detail::success_rate(ious, threshold);
}

/// 0.05, 0.10, ..., 0.95.
inline Vector default_auc_thresholds()
{
    Vector t;
    for (int k = 1; k <= 19; ++k)
        t.push_back(static_cast<double>(k) / 20.0);
    return t;
}

/// Mean success rate over the threshold grid.
inline double auc(std::span<const EvalCase> cases, std::span<const double> thresholds)
{
    if (thresholds.empty())
        throw ConfigError("auc: empty threshold grid");
    const Vector ious = matched_truth_ious(cases);
    if (ious.empty())
        return detail::vacuous_rate(cases);
    double sum = 0.0;
    for (double t : thresholds)
        sum += detail::success_rate(ious, t);
    return sum / static_cast<double>(thresholds.size());
}

inline double auc(std::span<const EvalCase> cases)
{
    const Vector grid = default_auc_thresholds();
    return auc(cases, grid);
}

/// All-points average precision of a cell ranking (descending score, ties by
/// smaller index) against a truth mask. 0 for an empty truth mask.
inline double ap_map(std::span<const double> scores, const Mask& truth)
{
    if (scores.size() != truth.size())
        throw DimensionError("ap_map: shape mismatch");
    const std::size_t positives = mask_count(truth);
    if (positives == 0)
        return 0.0;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (truth[order[r]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

struct CapPiap {
    double cap = 0.0;
    double piap = 0.0;
};

/// CAP: per-truth AP of the IoU-matched prediction's scores (0 if unmatched).
/// PIAP: the same with the assignment chosen to maximize total AP.
/// Both are means over all ground-truth sources.
inline CapPiap cap_piap(std::span<const EvalCase> cases)
{
    double cap_sum = 0.0, piap_sum = 0.0;
    std::size_t truths = 0;
    for (const auto& c : cases) {
        const std::size_t np = c.predicted.maps.size(), nt = c.truth.masks.size();
        if (c.predicted.scores.size() != np)
            throw DimensionError("cap_piap: missing per-object score maps");
        truths += nt;
        Matrix ap(np, nt);
        for (std::size_t p = 0; p < np; ++p)
            for (std::size_t t = 0; t < nt; ++t)
                ap(p, t) = ap_map(c.predicted.scores[p], c.truth.masks[t]);
        for (auto [p, t] : match_objects(c).pairs)
            cap_sum += ap(p, t);
        piap_sum += max_weight_assignment(ap).total;
    }
    if (truths == 0) {
        const double v = detail::vacuous_rate(cases);
        return {v, v};
    }
    return {cap_sum / static_cast<double>(truths), piap_sum / static_cast<double>(truths)};
}

/// Class-agnostic AP per case: the max-over-objects score map ranked against
/// the union of truth masks, averaged over cases that have any truth.
inline double single_source_ap(std::span<const EvalCase> cases)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cases) {
        const std::size_t cells = c.truth.height * c.truth.width;
        Mask truth(cells, 0);
        for (const auto& m : c.truth.masks)
            for (std::size_t k = 0; k < cells; ++k)
                truth[k] = truth[k] || m[k];
        if (mask_count(truth) == 0)
            continue;
        Vector combined(cells, 0.0);
        for (std::size_t p = 0; p < c.predicted.scores.size(); ++p) {
            for (std::size_t k = 0; k < cells; ++k) {
                const double v = c.predicted.scores[p][k];
                if (p == 0 || v > combined[k])
                    combined[k] = v;
            }
        }
        sum += ap_map(combined, truth);
        ++n;
    }
    if (n == 0)
        return detail::vacuous_rate(cases);
    return sum / static_cast<double>(n);
}

/// Fraction of cases whose predicted object count equals the true count.
inline double counting_accuracy(std::span<const EvalCase> cases)
{
    if (cases.empty())
        return 0.0;
    std::size_t hits = 0;
    for (const auto& c : cases)
        hits += c.predicted.maps.size() == c.truth.masks.size() ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(cases.size());
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
    std::map<double, double> iou_at;
    double auc = 0.0;
    double ap = 0.0;
    double ciou_at_03 = 0.0;
    double cap = 0.0;
    double piap = 0.0;
    double counting_accuracy = 0.0;
};

inline EvalReport evaluate(std::span<const EvalCase> cases, std::span<const double> iou_thresholds,
                           std::span<const double> auc_thresholds)
{
    EvalReport r;
    for (double t : iou_thresholds)
        r.iou_at[t] = ciou_at(cases, t);
    r.auc = auc(cases, auc_thresholds);
    r.ap = single_source_ap(cases);
    r.ciou_at_03 = ciou_at(cases, 0.3);
    const CapPiap cp = cap_piap(cases);
    r.cap = cp.cap;
    r.piap = cp.piap;
    r.counting_accuracy = counting_accuracy(cases);
    return r;
}

inline EvalReport evaluate(std::span<const EvalCase> cases)
{
    const Vector iou_t{0.5};
    const Vector auc_t = default_auc_thresholds();
    return evaluate(cases, iou_t, auc_t);
}

inline std::string threshold_key(double t)
{
    std::ostringstream ss;
    ss << "iou@" << t;
    return ss.str();
}

inline nlohmann::json to_json(const EvalReport& r)
{
    nlohmann::json j;
    j["ap"] = r.ap;
    for (const auto& [t, v] : r.iou_at)
        j[threshold_key(t)] = v;
    j["auc"] = r.auc;
    j["ciou@0.3"] = r.ciou_at_03;
    j["cap"] = r.cap;
    j["piap"] = r.piap;
    j["counting_accuracy"] = r.counting_accuracy;
    return j;
}

} // namespace mssl::metrics
