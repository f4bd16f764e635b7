#pragma once

// Flat key = value configuration in TOML syntax: integers, floats, comments
// and blank lines only. No tables, arrays or strings.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "mssl/errors.hpp"
#include "mssl/pipeline.hpp"
#include "mssl/synthworld.hpp"
#include "mssl/trainer.hpp"

namespace mssl::config {

struct PipelineConfig {
    LocalizeConfig localize;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lr = 1e-2;
    double momentum = 0.9;
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    synth::SynthConfig synth;

    /// Trainer settings with the loss and localization fields filled in.
    train::TrainConfig train_config() const
    {
        train::TrainConfig t;
        t.localize = localize;
        t.lambda1 = lambda1;
        t.lambda2 = lambda2;
        t.lr = lr;
        t.momentum = momentum;
        t.steps = steps;
        t.batch = batch;
        t.seed = seed;
        t.clip_norm = clip_norm;
        t.scenes = synth;
        return t;
    }

    void validate() const
    {
        localize.validate();
        if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || lambda1 < 0.0 || lambda2 < 0.0)
            throw ConfigError("lambda1 and lambda2 must be finite and >= 0");
        if (!(lr > 0.0) || !std::isfinite(lr))
            throw ConfigError("lr must be finite and > 0");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("momentum must lie in [0,1)");
        if (batch < 2)
            throw ConfigError("batch must be >= 2");
        if (!(clip_norm >= 0.0))
            throw ConfigError("clip_norm must be >= 0");
        synth.validate();
    }
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline bool bare_key(std::string_view k)
{
    if (k.empty())
        return false;
    for (char ch : k)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-'))
            return false;
    return true;
}

/// TOML integer or float; underscores between digits are accepted.
inline double parse_number(std::string_view raw, const std::string& where)
{
    std::string s;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] == '_') {
            if (i == 0 || i + 1 == raw.size() || !std::isdigit(static_cast<unsigned char>(raw[i - 1])) ||
                !std::isdigit(static_cast<unsigned char>(raw[i + 1])))
                throw ConfigError(where + ": misplaced underscore");
            continue;
        }
        s.push_back(raw[i]);
    }
    std::string_view body = s;
    if (!body.empty() && body.front() == '+')
        body.remove_prefix(1);
    if (body.empty() || body == "inf" || body == "-inf" || body == "nan" || body == "-nan")
        throw ConfigError(where + ": expected a finite number");
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
    if (ec != std::errc{} || ptr != body.data() + body.size() || !std::isfinite(v))
        throw ConfigError(where + ": expected a number, got '" + std::string(raw) + "'");
    return v;
}

inline std::size_t as_count(double v, const std::string& key)
{
    if (v < 0.0 || v != std::floor(v) || v > 9.007199254740992e15)
        throw ConfigError(key + ": expected a non-negative integer");
    return static_cast<std::size_t>(v);
}

} // namespace detail

/// Raw key/value pairs of a flat document. Duplicate keys, tables and
/// malformed lines are errors.
inline std::map<std::string, double> parse_flat(std::string_view text)
{
    std::map<std::string, double> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const std::string where = "config line " + std::to_string(line_no);
        if (line.front() == '[')
            throw ConfigError(where + ": tables are not supported");
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(where + ": expected key = value");
        const std::string key(detail::trim(line.substr(0, eq)));
        if (!detail::bare_key(key))
            throw ConfigError(where + ": invalid key");
        const double value = detail::parse_number(detail::trim(line.substr(eq + 1)), where);
        if (!out.emplace(key, value).second)
            throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    return out;
}

inline const std::set<std::string>& known_keys()
{
    static const std::set<std::string> keys{
        "alpha",          "omega",         "background_cut",    "epsilon",      "t_max",       "tau1",
        "tau2",           "lambda1",       "lambda2",           "lr",           "momentum",    "steps",
        "batch",          "seed",          "clip_norm",         "height",       "width",       "channels",
        "noise_sigma",    "source_margin", "source_floor",      "background_margin", "max_side",
        "background_channels", "weight_k0", "weight_k1",        "weight_k2",    "weight_k3"};
    return keys;
}

inline PipelineConfig parse(std::string_view text)
{
    PipelineConfig cfg;
    for (const auto& [key, v] : parse_flat(text)) {
        if (!known_keys().contains(key))
            throw ConfigError("unknown config key '" + key + "'");
        if (key == "alpha")
            cfg.localize.sarl.alpha = v;
        else if (key == "omega")
            cfg.localize.sarl.omega = v;
        else if (key == "background_cut")
            cfg.localize.sarl.background_cut = v;
        else if (key == "epsilon")
            cfg.localize.ioi.epsilon = v;
        else if (key == "t_max")
            cfg.localize.ioi.t_max = detail::as_count(v, key);
        else if (key == "tau1")
            cfg.localize.group.tau1 = v;
        else if (key == "tau2")
            cfg.localize.group.tau2 = v;
        else if (key == "lambda1")
            cfg.lambda1 = v;
        else if (key == "lambda2")
            cfg.lambda2 = v;
        else if (key == "lr")
            cfg.lr = v;
        else if (key == "momentum")
            cfg.momentum = v;
        else if (key == "steps")
            cfg.steps = detail::as_count(v, key);
        else if (key == "batch")
            cfg.batch = detail::as_count(v, key);
        else if (key == "seed")
            cfg.seed = detail::as_count(v, key);
        else if (key == "clip_norm")
            cfg.clip_norm = v;
        else if (key == "height")
            cfg.synth.height = detail::as_count(v, key);
        else if (key == "width")
            cfg.synth.width = detail::as_count(v, key);
        else if (key == "channels")
            cfg.synth.channels = detail::as_count(v, key);
        else if (key == "noise_sigma")
            cfg.synth.noise_sigma = v;
        else if (key == "source_margin")
            cfg.synth.source_margin = v;
        else if (key == "source_floor")
            cfg.synth.source_floor = v;
        else if (key == "background_margin")
            cfg.synth.background_margin = v;
        else if (key == "max_side")
            cfg.synth.max_side = detail::as_count(v, key);
        else if (key == "background_channels")
            cfg.synth.background_channels = detail::as_count(v, key);
        else if (key.starts_with("weight_k"))
            cfg.synth.count_weights[static_cast<std::size_t>(key.back() - '0')] = v;
    }
    cfg.validate();
    return cfg;
}

/// Defaults when `path` is empty.
inline PipelineConfig load(const std::filesystem::path& path)
{
    if (path.empty())
        return PipelineConfig{};
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

} // namespace mssl::config
