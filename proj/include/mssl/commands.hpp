#pragma once

// Command implementations behind the mssl executable. Each command returns a
// process exit code; run_command maps library exceptions onto codes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mssl/config.hpp"
#include "mssl/errors.hpp"
#include "mssl/gradcheck_suite.hpp"
#include "mssl/io.hpp"
#include "mssl/metrics.hpp"
#include "mssl/pipeline.hpp"
#include "mssl/synthworld.hpp"
#include "mssl/trainer.hpp"

namespace mssl::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kFormatError = 2,
    kDimensionMismatch = 3,
    kMissingCase = 4,
    kInfeasibleMargin = 5,
};

/// A case present on one side of an evaluation but not the other.
class MissingCase : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline int run_command(const std::function<int()>& fn, std::ostream& err)
{
    try {
        return fn();
    } catch (const InfeasibleMargin& e) {
        err << "error: " << e.what() << '\n';
        return kInfeasibleMargin;
    } catch (const FormatError& e) {
        err << "format error: " << e.what() << '\n';
        return kFormatError;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kFormatError;
    } catch (const nlohmann::json::exception& e) {
        err << "format error: " << e.what() << '\n';
        return kFormatError;
    } catch (const DimensionError& e) {
        err << "dimension mismatch: " << e.what() << '\n';
        return kDimensionMismatch;
    } catch (const MissingCase& e) {
        err << "missing case: " << e.what() << '\n';
        return kMissingCase;
    } catch (const NumericalInstability& e) {
        err << "numerical instability: " << e.what() << '\n';
        return kFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kFailure;
    }
}

/// "nearest:F" with integer F >= 1.
inline std::size_t parse_upsample(const std::string& spec)
{
    const std::string prefix = "nearest:";
    if (!spec.starts_with(prefix))
        throw ConfigError("upsample must be nearest:F");
    const std::string digits = spec.substr(prefix.size());
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos || digits.size() > 4)
        throw ConfigError("upsample factor must be a positive integer");
    const std::size_t f = std::stoul(digits);
    if (f == 0)
        throw ConfigError("upsample factor must be a positive integer");
    return f;
}

inline std::string pgm_name(std::size_t sample, std::size_t object)
{
    return "sample" + std::to_string(sample) + "_object" + std::to_string(object) + ".pgm";
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j)
{
    auto os = io::detail::open_out(path);
    os << j.dump(2) << '\n';
}

inline nlohmann::json read_json(const std::filesystem::path& path)
{
    const std::string text = io::read_file_bytes(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeArgs {
    std::filesystem::path features;
    std::filesystem::path audio;
    std::filesystem::path config;
    std::filesystem::path out;
    std::string upsample = "nearest:1";
};

inline nlohmann::json cell_json(std::size_t k, std::size_t width) { return {k / width, k % width}; }

inline nlohmann::json sample_json(std::size_t b, const std::optional<Localization>& loc)
{
    nlohmann::json s;
    s["sample"] = b;
    if (!loc) {
        s["K"] = 0;
        s["degenerate"] = true;
        s["selections"] = nlohmann::json::array();
        s["discarded"] = nlohmann::json::array();
        s["objects"] = nlohmann::json::array();
        return s;
    }
    const ObjectBank& bank = loc->banks[0];
    const SampleObjects& objs = loc->grouping[0];
    const std::size_t w = objs.width;
    s["K"] = objs.count();
    s["degenerate"] = false;
    s["selections"] = nlohmann::json::array();
    for (const auto& r : bank.records)
        s["selections"].push_back({{"cell", {r.cell.row, r.cell.col}}, {"peak", r.peak_value}});
    s["discarded"] = objs.discarded;
    s["objects"] = nlohmann::json::array();
    for (const auto& o : objs.objects) {
        nlohmann::json jo;
        jo["members"] = o.members;
        jo["anchor"] = o.anchor;
        const auto& a = bank.records[o.anchor];
        jo["anchor_cell"] = {a.cell.row, a.cell.col};
        jo["peak"] = a.peak_value;
        jo["cells"] = nlohmann::json::array();
        jo["scores"] = nlohmann::json::array();
        for (std::size_t k = 0; k < o.map.size(); ++k) {
            if (!o.map[k])
                continue;
            jo["cells"].push_back(cell_json(k, w));
            jo["scores"].push_back(o.scores[k]);
        }
        s["objects"].push_back(std::move(jo));
    }
    return s;
}

inline FeatureGrid slice(const FeatureGrid& g, std::size_t b)
{
    auto s = g.sample(b);
    return FeatureGrid(1, g.height(), g.width(), g.channels(), Vector(s.begin(), s.end()));
}

inline VectorBatch slice(const VectorBatch& a, std::size_t b)
{
    auto r = a.row(b);
    return VectorBatch(1, a.channels(), Vector(r.begin(), r.end()));
}

/// Localizes every sample independently. A sample whose similarity map
/// cannot be normalized yields no objects and is flagged degenerate.
inline std::vector<std::optional<Localization>> localize_samples(const FeatureGrid& visual, const VectorBatch& audio,
                                                                 const LocalizeConfig& cfg)
{
    if (visual.batch() != audio.batch())
        throw DimensionError("features and audio have different batch sizes");
    if (visual.channels() != audio.channels())
        throw DimensionError("features and audio have different channel counts");
    cfg.validate();
    std::vector<std::optional<Localization>> out(visual.batch());
    parallel_for(visual.batch(), [&](std::size_t b) {
        try {
            out[b] = localize(slice(visual, b), slice(audio, b), cfg);
        } catch (const DegenerateNormalization&) {
            out[b].reset();
        }
    });
    return out;
}

inline int cmd_localize(const LocalizeArgs& args, std::ostream& out, std::ostream& err)
{
    return run_command(
        [&] {
            const auto cfg = config::load(args.config);
            const std::size_t f = parse_upsample(args.upsample);
            const FeatureGrid visual = io::load_fgrid(args.features);
            const VectorBatch audio = io::load_aemb(args.audio);
            const auto results = localize_samples(visual, audio, cfg.localize);

            std::filesystem::create_directories(args.out);
            nlohmann::json doc;
            doc["height"] = visual.height();
            doc["width"] = visual.width();
            doc["samples"] = nlohmann::json::array();
            std::size_t maps = 0;
            for (std::size_t b = 0; b < results.size(); ++b) {
                doc["samples"].push_back(sample_json(b, results[b]));
                if (!results[b])
                    continue;
                const auto& objs = results[b]->grouping[0];
                for (std::size_t k = 0; k < objs.count(); ++k, ++maps)
                    io::save_pgm(args.out / pgm_name(b, k), objs.objects[k].map, objs.height, objs.width, f);
            }
            write_json(args.out / "objects.json", doc);
            out << "localized " << results.size() << " samples, " << maps << " objects\n";
            return int{kOk};
        },
        err);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::filesystem::path pred;
    std::filesystem::path truth;
    std::filesystem::path out;
    std::vector<double> iou_thresholds{0.5};
};

/// Predicted cases keyed by sample index, read from objects.json.
inline std::map<std::size_t, metrics::PredictedCase> read_predictions(const nlohmann::json& doc)
{
    std::map<std::size_t, metrics::PredictedCase> out;
    const auto h = doc.at("height").get<std::size_t>();
    const auto w = doc.at("width").get<std::size_t>();
    for (const auto& s : doc.at("samples")) {
        metrics::PredictedCase p{h, w, {}, {}};
        for (const auto& o : s.at("objects")) {
            Mask m(h * w, 0);
            Vector sc(h * w, 0.0);
            const auto& cells = o.at("cells");
            const auto& scores = o.at("scores");
            if (cells.size() != scores.size())
                throw FormatError("objects.json: cells and scores differ in length");
            for (std::size_t k = 0; k < cells.size(); ++k) {
                const auto i = cells[k].at(0).get<std::size_t>();
                const auto j = cells[k].at(1).get<std::size_t>();
                if (i >= h || j >= w)
                    throw DimensionError("objects.json: cell outside the grid");
                m[i * w + j] = 1;
                sc[i * w + j] = scores[k].get<double>();
            }
            p.maps.push_back(std::move(m));
            p.scores.push_back(std::move(sc));
        }
        if (!out.emplace(s.at("sample").get<std::size_t>(), std::move(p)).second)
            throw FormatError("objects.json: duplicate sample");
    }
    return out;
}

inline std::map<std::size_t, metrics::TruthCase> read_truths(const nlohmann::json& doc)
{
    std::map<std::size_t, metrics::TruthCase> out;
    for (const auto& s : doc.at("scenes")) {
        const synth::SceneTruth t = synth::truth_from_json(s);
        if (!out.emplace(s.at("sample").get<std::size_t>(), metrics::TruthCase{t.height, t.width, t.masks}).second)
            throw FormatError("truth.json: duplicate sample");
    }
    return out;
}

inline std::vector<metrics::EvalCase> align_cases(const std::map<std::size_t, metrics::PredictedCase>& pred,
                                                  const std::map<std::size_t, metrics::TruthCase>& truth)
{
    std::vector<metrics::EvalCase> cases;
    for (const auto& [b, t] : truth) {
        auto it = pred.find(b);
        if (it == pred.end())
            throw MissingCase("no prediction for sample " + std::to_string(b));
        if (it->second.height != t.height || it->second.width != t.width)
            throw DimensionError("sample " + std::to_string(b) + ": prediction and truth grids differ");
        cases.push_back({it->second, t});
    }
    for (const auto& [b, p] : pred)
        if (!truth.contains(b))
            throw MissingCase("no truth for sample " + std::to_string(b));
    return cases;
}

inline int cmd_evaluate(const EvaluateArgs& args, std::ostream& out, std::ostream& err)
{
    return run_command(
        [&] {
            const auto pred = read_predictions(read_json(args.pred / "objects.json"));
            const auto truth = read_truths(read_json(args.truth / "truth.json"));
            const auto cases = align_cases(pred, truth);
            const Vector auc_t = metrics::default_auc_thresholds();
            const auto report = metrics::evaluate(cases, args.iou_thresholds, auc_t);
            const auto j = metrics::to_json(report);
            if (args.out.has_parent_path())
                std::filesystem::create_directories(args.out.parent_path());
            write_json(args.out, j);
            out << j.dump() << '\n';
            return int{kOk};
        },
        err);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::filesystem::path config;
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};

inline int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err)
{
    return run_command(
        [&] {
            const auto cfg = config::load(args.config);
            std::vector<std::optional<synth::Scene>> slots(args.n);
            parallel_for(args.n, [&](std::size_t i) {
                slots[i] = synth::generate_scene(cfg.synth, synth::derive_seed(args.seed, i));
            });
            std::vector<synth::Scene> scenes;
            for (auto& s : slots)
                scenes.push_back(std::move(*s));

            std::filesystem::create_directories(args.out);
            nlohmann::json manifest;
            manifest["n"] = args.n;
            manifest["seed"] = args.seed;
            manifest["height"] = cfg.synth.height;
            manifest["width"] = cfg.synth.width;
            manifest["channels"] = cfg.synth.channels;
            manifest["noise_sigma"] = cfg.synth.noise_sigma;
            std::array<std::size_t, 4> counts{};
            for (const auto& s : scenes)
                ++counts[s.truth.count()];
            manifest["counts"] = nlohmann::json::object();
            for (std::size_t k = 0; k < counts.size(); ++k)
                manifest["counts"][std::to_string(k)] = counts[k];
            manifest["files"] = nlohmann::json::array();

            if (!scenes.empty()) {
                const auto [features, audio] = synth::stack(scenes);
                io::save_fgrid(args.out / "features.fgrid", features);
                io::save_aemb(args.out / "audio.aemb", audio);
                nlohmann::json truth;
                truth["scenes"] = nlohmann::json::array();
                for (std::size_t i = 0; i < scenes.size(); ++i) {
                    auto t = synth::truth_to_json(scenes[i].truth);
                    t["sample"] = i;
                    truth["scenes"].push_back(std::move(t));
                }
                write_json(args.out / "truth.json", truth);
                manifest["files"] = {"features.fgrid", "audio.aemb", "truth.json"};
            }
            write_json(args.out / "manifest.json", manifest);
            out << "wrote " << args.n << " scenes to " << args.out.string() << '\n';
            return int{kOk};
        },
        err);
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path out;   ///< checkpoint path
    std::filesystem::path curve; ///< optional JSON metric curve
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::size_t eval_scenes = 100;
};

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err)
{
    return run_command(
        [&] {
            auto pc = config::load(args.config);
            if (args.steps)
                pc.steps = *args.steps;
            if (args.seed)
                pc.seed = *args.seed;
            if (args.lr)
                pc.lr = *args.lr;
            auto cfg = pc.train_config();
            cfg.eval_scenes = args.eval_scenes;
            const auto run = train::train_run(cfg);

            if (args.out.has_parent_path())
                std::filesystem::create_directories(args.out.parent_path());
            train::save_checkpoint(args.out, run.params);
            nlohmann::json curve = nlohmann::json::array();
            for (const auto& p : run.curve) {
                curve.push_back({{"step", p.step}, {"counting_accuracy", p.counting_accuracy}, {"ciou@0.3", p.ciou}});
                out << "step " << p.step << " counting_accuracy " << p.counting_accuracy << " ciou@0.3 " << p.ciou
                    << '\n';
            }
            if (!args.curve.empty()) {
                nlohmann::json doc;
                doc["curve"] = curve;
                doc["loss"] = nlohmann::json::array();
                for (const auto& s : run.trace)
                    doc["loss"].push_back({{"total", s.total}, {"avc", s.avc}, {"osc", s.osc}});
                write_json(args.curve, doc);
            }
            return int{kOk};
        },
        err);
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::uint64_t seed = 0;
    std::size_t instances = 50;
    double step = 1e-5;
    double tolerance = 1e-4;
};

inline int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err)
{
    return run_command(
        [&] {
            gradcheck::CheckSettings s;
            s.step = args.step;
            s.tolerance = args.tolerance;
            const auto lines = gradcheck::run_suite(args.seed, args.instances, s);
            std::size_t failed = 0;
            for (const auto& l : lines) {
                out << l.name << " seed=" << l.seed << " max_rel_error=" << l.report.max_rel_error
                    << " coords=" << l.report.coordinates << (l.report.passed ? " pass" : " FAIL") << '\n';
                failed += l.report.passed ? 0 : 1;
            }
            out << (failed == 0 ? "all " : "") << lines.size() - failed << "/" << lines.size() << " checks passed\n";
            return failed == 0 ? int{kOk} : int{kFailure};
        },
        err);
}

} // namespace mssl::cli
