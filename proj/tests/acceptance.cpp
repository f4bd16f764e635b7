// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>

#include "mssl/commands.hpp"
#include "mssl/config.hpp"
#include "mssl/gradcheck_suite.hpp"
#include "mssl/ioi.hpp"
#include "mssl/metrics.hpp"
#include "mssl/pipeline.hpp"
#include "mssl/reference.hpp"
#include "mssl/trainer.hpp"
#include "oracles.hpp"

using namespace mssl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Outcome config_fidelity()
{
    const auto c = config::load("");
    const auto t = c.train_config();
    const bool ok = c.localize.group.tau1 == 0.7 && c.localize.group.tau2 == 0.6 && c.lambda1 == 1.0 &&
                    c.lambda2 == 1.0 && c.localize.sarl.alpha == 0.65 && c.localize.sarl.omega == 0.03 &&
                    t.lambda1 == 1.0 && t.lambda2 == 1.0 && t.localize.group.tau1 == 0.7 &&
                    t.localize.group.tau2 == 0.6 && t.localize.sarl.alpha == 0.65 && t.localize.sarl.omega == 0.03;
    return {ok, fmt("tau1=%g tau2=%g lambda1=%g lambda2=%g alpha=%g omega=%g", c.localize.group.tau1,
                    c.localize.group.tau2, c.lambda1, c.lambda2, c.localize.sarl.alpha, c.localize.sarl.omega)};
}

Outcome formula_oracles()
{
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(1001);
    double worst_avc = 0, worst_osc = 0;
    for (int t = 0; t < 1000; ++t) {
        SarlConfig cfg;
        if (t % 2) {
            cfg.alpha = std::uniform_real_distribution<double>(-0.2, 0.5)(rng);
            cfg.omega = std::uniform_real_distribution<double>(0.02, 0.5)(rng);
        }
        const std::size_t B = oracle::pick(rng, 1, 4), h = oracle::pick(rng, 1, 6), w = oracle::pick(rng, 1, 6),
                          c = oracle::pick(rng, 2, 8);
        auto [f, a] = oracle::conditioned_pair(rng, B, h, w, c);
        const double got = avc_loss(f, a, cfg, false).value;
        worst_avc = std::max(worst_avc, rel(got, oracle::avc(oracle::to_nested(f), oracle::to_nested(a), cfg.alpha,
                                                             cfg.omega)));
        const auto s = gradcheck::osc_instance(synth::derive_seed(1002, t));
        worst_osc = std::max(worst_osc, rel(osc_loss(s, false).value, oracle::osc(s)));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {worst_avc < 1e-10 && worst_osc < 1e-10 && secs < 10.0,
            fmt("1000 instances, max rel err avc=%.2e osc=%.2e, %.2fs", worst_avc, worst_osc, secs)};
}

Outcome gradient_checks()
{
    const auto start = std::chrono::steady_clock::now();
    const auto lines = gradcheck::run_suite(0, 50);
    double worst[3] = {0, 0, 0};
    std::size_t failed = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        worst[i % 3] = std::max(worst[i % 3], lines[i].report.max_rel_error);
        failed += lines[i].report.passed ? 0 : 1;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool ok = failed == 0 && std::max({worst[0], worst[1], worst[2]}) < 1e-4 && secs < 60.0;
    return {ok, fmt("50 instances each, h=1e-5, max rel err avc=%.2e osc=%.2e composed=%.2e, %.1fs", worst[0],
                    worst[1], worst[2], secs)};
}

Outcome algorithm_equivalence()
{
    const auto start = std::chrono::steady_clock::now();
    std::size_t mismatches = 0, objects = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        auto [f, a] = oracle::localization_instance(synth::derive_seed(2024, s));
        const Localization loc = localize(f, a, LocalizeConfig{});
        const SampleObjects want = reference::oracle_identify(f, a, 0, reference::Params{});
        objects += want.count();
        mismatches += reference::structurally_equal(loc.grouping[0], want) ? 0 : 1;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {mismatches == 0 && secs < 60.0,
            fmt("1000 scenes, %zu objects, %zu mismatches, %.1fs", objects, mismatches, secs)};
}

Outcome termination()
{
    std::mt19937_64 rng(3003);
    std::normal_distribution<double> n(0, 1);
    std::size_t violations = 0, longest = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t h = oracle::pick(rng, 1, 8), w = oracle::pick(rng, 1, 8), c = oracle::pick(rng, 1, 6);
        Vector data(h * w * c), plane(h * w), e(c);
        for (auto& v : data)
            v = n(rng);
        const bool positive = t % 2;
        for (auto& v : plane)
            v = positive ? std::abs(n(rng)) : n(rng);
        double sum = 0;
        for (double v : plane)
            sum += v;
        if (positive)
            for (auto& v : plane)
                v /= sum;
        for (auto& v : e)
            v = n(rng);
        const FeatureGrid f(1, h, w, c, data);
        const ObjectBank bank = run_ioi_sample(f, plane, e, 0, IoiConfig{});
        longest = std::max(longest, bank.iteration_count());
        bool bad = bank.iteration_count() > h * w;
        Mask owner(h * w, 0);
        for (const auto& r : bank.records)
            for (std::size_t k = 0; k < h * w; ++k)
                if (r.region[k]) {
                    bad |= owner[k] != 0;
                    owner[k] = 1;
                }
        violations += bad ? 1 : 0;
    }
    return {violations == 0, fmt("10000 instances, %zu violations, longest run %zu iterations", violations, longest)};
}

Outcome noiseless_recovery()
{
    synth::SynthConfig cfg;
    std::vector<metrics::EvalCase> cases;
    for (std::uint64_t s = 0; s < 300; ++s) {
        const auto sc = synth::generate_scene(cfg, synth::derive_seed(4004, s));
        const Localization loc = localize(sc.features, sc.audio, LocalizeConfig{});
        cases.push_back({metrics::from_objects(loc.grouping[0]),
                         metrics::TruthCase{sc.truth.height, sc.truth.width, sc.truth.masks}});
    }
    const Vector ious = metrics::matched_truth_ious(cases);
    const double min_iou = ious.empty() ? 0.0 : *std::min_element(ious.begin(), ious.end());
    const double acc = metrics::counting_accuracy(cases), ciou = metrics::ciou_at(cases, 0.3);
    return {acc == 1.0 && min_iou == 1.0 && ciou == 1.0,
            fmt("300 scenes, counting=%.4f min object IoU=%.4f CIoU@0.3=%.4f", acc, min_iou, ciou)};
}

Outcome noisy_counting()
{
    synth::SynthConfig cfg;
    cfg.noise_sigma = 0.1;
    double acc[3];
    for (std::size_t k = 1; k <= 3; ++k) {
        std::size_t right = 0;
        for (std::uint64_t s = 0; s < 300; ++s) {
            const auto sc = synth::generate_scene_with_count(cfg, synth::derive_seed(5005 + k, s), k);
            right += localize(sc.features, sc.audio, LocalizeConfig{}).grouping[0].count() == k ? 1 : 0;
        }
        acc[k - 1] = right / 300.0;
    }
    return {acc[0] >= 0.9 && acc[1] <= acc[0] && acc[2] <= acc[1],
            fmt("sigma=0.1, 300 per K: K1=%.4f K2=%.4f K3=%.4f", acc[0], acc[1], acc[2])};
}

Outcome metric_oracles()
{
    std::mt19937_64 rng(6006);
    std::uniform_real_distribution<double> u(0, 1);
    std::size_t mismatches = 0;
    for (int t = 0; t < 10000; ++t) {
        const std::size_t cells = oracle::pick(rng, 4, 16);
        metrics::EvalCase c{metrics::PredictedCase{1, cells, {}, {}}, metrics::TruthCase{1, cells, {}}};
        for (std::size_t p = oracle::pick(rng, 0, 6); p > 0; --p) {
            c.predicted.maps.push_back(oracle::random_mask(rng, cells, 0.35));
            c.predicted.scores.push_back(Vector(cells, 0.0));
        }
        for (std::size_t q = oracle::pick(rng, 0, 6); q > 0; --q)
            c.truth.masks.push_back(oracle::random_mask(rng, cells, 0.35));
        std::vector<oracle::Vec> w(c.predicted.maps.size(), oracle::Vec(c.truth.masks.size()));
        for (std::size_t i = 0; i < w.size(); ++i)
            for (std::size_t j = 0; j < c.truth.masks.size(); ++j)
                w[i][j] = oracle::mask_iou(c.predicted.maps[i], c.truth.masks[j]);
        mismatches += std::abs(metrics::match_objects(c).total - oracle::brute_force_assignment(w)) > 1e-12;
    }

    std::size_t violations = 0;
    for (int t = 0; t < 1000; ++t) {
        std::vector<metrics::EvalCase> cases;
        for (std::size_t k = oracle::pick(rng, 1, 4); k > 0; --k) {
            metrics::EvalCase c{metrics::PredictedCase{3, 3, {}, {}}, metrics::TruthCase{3, 3, {}}};
            for (std::size_t p = oracle::pick(rng, 0, 4); p > 0; --p) {
                c.predicted.maps.push_back(oracle::random_mask(rng, 9, 0.4));
                Vector s(9);
                for (auto& v : s)
                    v = u(rng);
                c.predicted.scores.push_back(s);
            }
            for (std::size_t q = oracle::pick(rng, 0, 4); q > 0; --q)
                c.truth.masks.push_back(oracle::random_mask(rng, 9, 0.4));
            cases.push_back(std::move(c));
        }
        const auto r = metrics::cap_piap(cases);
        violations += r.piap + 1e-12 < r.cap;
    }

    std::vector<metrics::EvalCase> half;
    for (int i = 0; i < 7; ++i)
        half.push_back({metrics::PredictedCase{2, 2, {Mask{1, 1, 0, 0}}, {Vector{1, 1, 0, 0}}},
                        metrics::TruthCase{2, 2, {Mask{1, 0, 0, 0}}}});
    const double auc = metrics::auc(half);
    const bool ok = mismatches == 0 && violations == 0 && std::abs(auc - 10.0 / 19.0) <= 1e-12;
    return {ok, fmt("10000 matrices, %zu assignment mismatches; 1000 case sets, %zu PIAP<CAP; AUC=%.15f", mismatches,
                    violations, auc)};
}

Outcome training_signal()
{
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        train::TrainConfig cfg;
        cfg.scenes.count_weights = {0, 0, 1, 0};
        cfg.scenes.noise_sigma = 0.1;
        cfg.steps = 200;
        cfg.eval_every = 200;
        cfg.eval_scenes = 300;
        cfg.seed = seed;
        const auto run = train::train_run(cfg);
        const double before = run.curve.front().counting_accuracy, after = run.curve.back().counting_accuracy;
        ok &= after > before;
        detail += fmt("seed %llu %.4f->%.4f; ", static_cast<unsigned long long>(seed), before, after);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {ok && secs < 300.0, detail + fmt("%.1fs", secs)};
}

template <class Write, class Read>
bool round_trips(const auto& value, Write write, Read read)
{
    std::stringstream first;
    write(first, value);
    const std::string bytes = first.str();
    std::stringstream in(bytes);
    std::stringstream second;
    write(second, read(in));
    return bytes == second.str();
}

Outcome file_formats()
{
    std::mt19937_64 rng(7007);
    std::normal_distribution<double> n(0, 1);
    std::size_t failures = 0;
    for (int t = 0; t < 200; ++t) {
        auto [f, a] = oracle::random_pair(rng, oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 8),
                                          oracle::pick(rng, 1, 8), oracle::pick(rng, 1, 16));
        for (double& x : f.data())
            x = static_cast<float>(x);
        for (double& x : a.data())
            x = static_cast<float>(x);
        failures += !round_trips(f, io::write_fgrid, io::read_fgrid);
        failures += !round_trips(a, io::write_aemb, io::read_aemb);
        std::stringstream fs_;
        io::write_fgrid(fs_, f);
        failures += !(io::read_fgrid(fs_) == f);
        auto p = train::ProjectionParams::init(oracle::pick(rng, 1, 12), oracle::pick(rng, 1, 12), t);
        failures += !round_trips(p, train::write_checkpoint, train::read_checkpoint);
    }

    const fs::path dir = fs::temp_directory_path() / ("mssl_accept_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    std::ostringstream sink;
    cli::SynthArgs sy{{}, 0, 11, dir / "data"};
    sy.n = 40;
    fs::create_directories(dir);
    std::ofstream(dir / "c.toml") << "noise_sigma = 0.1\n";
    sy.config = dir / "c.toml";
    bool deterministic = cli::cmd_synth(sy, sink, sink) == cli::kOk;
    for (const char* out : {"a", "b"})
        deterministic &= cli::cmd_localize(cli::LocalizeArgs{dir / "data" / "features.fgrid",
                                                             dir / "data" / "audio.aemb", {}, dir / out, "nearest:3"},
                                           sink, sink) == cli::kOk;
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        deterministic &= io::read_file_bytes(e.path()) == io::read_file_bytes(dir / "b" / e.path().filename());
        ++files;
    }
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "b"))
        --files;
    deterministic &= files == 0;
    fs::remove_all(dir);
    return {failures == 0 && deterministic,
            fmt("200 fgrid/aemb/checkpoint round trips, %zu failures; localize byte-identical: %s", failures,
                deterministic ? "yes" : "no")};
}

} // namespace

int main()
{
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"config fidelity", config_fidelity},
        {"formula oracles", formula_oracles},
        {"gradient checks", gradient_checks},
        {"algorithm equivalence", algorithm_equivalence},
        {"termination and disjointness", termination},
        {"noiseless recovery", noiseless_recovery},
        {"noisy counting trend", noisy_counting},
        {"metric oracles", metric_oracles},
        {"training signal", training_signal},
        {"file formats and determinism", file_formats},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
