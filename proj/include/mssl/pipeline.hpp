#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mssl/grid.hpp"
#include "mssl/grouping.hpp"
#include "mssl/ioi.hpp"
#include "mssl/objectives.hpp"
#include "mssl/sarl.hpp"

namespace mssl {

/// Worker count: SSL_THREADS when set to a positive integer, otherwise the
/// hardware concurrency.
inline std::size_t worker_count()
{
    if (const char* env = std::getenv("SSL_THREADS")) {
        try {
            const long n = std::stol(env);
            if (n > 0)
                return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. The first
/// exception thrown by any call is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                    return;
                }
            }
        });
    }
    pool.clear();
    if (error)
        std::rethrow_exception(error);
}

struct LocalizeConfig {
    SarlConfig sarl;
    IoiConfig ioi;
    GroupConfig group;

    void validate() const
    {
        sarl.validate();
        ioi.validate();
        group.validate();
    }
};

/// Everything one forward pass produces, including the discrete structure
/// the trainer freezes for differentiation.
struct Localization {
    SimilarityMap self_maps;
    FeatureGrid f_hat;
    NegativeVectors negatives;
    std::vector<ObjectBank> banks;
    ObjectGrouping grouping;
    OscBatchStructure osc;
};

inline Localization localize(const FeatureGrid& visual, const VectorBatch& audio, const LocalizeConfig& cfg)
{
    cfg.validate();
    Localization out;
    out.self_maps = self_maps(visual, audio);
    out.f_hat = sound_assoc_features(visual, out.self_maps);
    out.negatives = negative_vector(visual, out.self_maps, cfg.sarl);

    const std::size_t B = visual.batch();
    out.banks.resize(B);
    out.grouping.resize(B);
    out.osc.samples.resize(B);
    parallel_for(B, [&](std::size_t b) {
        out.banks[b] = run_ioi_sample(out.f_hat, out.self_maps.plane(b), out.negatives.vectors.row(b), b, cfg.ioi);
        AssembledSample assembled =
            group_objects(out.banks[b], out.negatives.vectors.row(b), !out.negatives.empty[b], b, cfg.group);
        out.grouping[b] = std::move(assembled.objects);
        out.osc.samples[b] = std::move(assembled.osc);
    });
    return out;
}

} // namespace mssl
