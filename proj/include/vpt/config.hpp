#pragma once

#include "vpt/cascade.hpp"
#include "vpt/error.hpp"
#include "vpt/field.hpp"
#include "vpt/parallel.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace vpt {

// Everything a run needs, addressable by dotted key.
struct RunConfig {
    FieldArch arch = desk_arch();
    CascadeConfig cascade;
    int workers = default_workers();

    RunConfig() { cascade.train.workers = workers; }
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string &key, const std::string &v) {
    errno = 0;
    char *end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno) throw UsageError("config key '" + key + "': '" + v + "' is not an integer");
    return x;
}

inline double parse_double(const std::string &key, const std::string &v) {
    errno = 0;
    char *end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno) throw UsageError("config key '" + key + "': '" + v + "' is not a number");
    return x;
}

inline bool parse_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw UsageError("config key '" + key + "': '" + v + "' is not a boolean");
}

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

} // namespace detail

struct ConfigKey {
    std::string key;
    std::function<std::string()> get;
    std::function<void(const std::string &)> set;
};

inline std::vector<ConfigKey> config_keys(RunConfig &c) {
    std::vector<ConfigKey> keys;
    auto add_int = [&](const std::string &k, int &ref) {
        keys.push_back({k, [&ref] { return std::to_string(ref); },
                        [&ref, k](const std::string &v) { ref = static_cast<int>(detail::parse_int(k, v)); }});
    };
    auto add_u64 = [&](const std::string &k, std::uint64_t &ref) {
        keys.push_back({k, [&ref] { return std::to_string(ref); }, [&ref, k](const std::string &v) {
                            const long long x = detail::parse_int(k, v);
                            if (x < 0) throw UsageError("config key '" + k + "' must be >= 0");
                            ref = static_cast<std::uint64_t>(x);
                        }});
    };
    auto add_double = [&](const std::string &k, double &ref) {
        keys.push_back({k, [&ref] { return detail::fmt_double(ref); },
                        [&ref, k](const std::string &v) { ref = detail::parse_double(k, v); }});
    };
    auto add_bool = [&](const std::string &k, bool &ref) {
        keys.push_back({k, [&ref] { return std::string(ref ? "true" : "false"); },
                        [&ref, k](const std::string &v) { ref = detail::parse_bool(k, v); }});
    };
    auto &a = c.arch;
    add_int("arch.trunk_depth", a.trunk_depth);
    add_int("arch.trunk_width", a.trunk_width);
    add_int("arch.skip_at", a.skip_at);
    add_int("arch.dir_branch_width", a.dir_branch_width);
    add_int("arch.pos_freqs", a.pos_freqs);
    add_int("arch.dir_freqs", a.dir_freqs);
    add_bool("arch.include_input", a.include_input);
    add_bool("arch.hierarchical", a.hierarchical);
    add_double("arch.pos_scale", a.pos_scale);

    auto &t = c.cascade.train;
    add_int("train.iterations", t.iterations);
    add_int("train.batch_rays", t.batch_rays);
    add_double("train.learning_rate", t.learning_rate);
    add_double("train.lr_decay", t.lr_decay);
    add_int("train.lr_decay_steps", t.lr_decay_steps);
    add_double("train.beta1", t.beta1);
    add_double("train.beta2", t.beta2);
    add_double("train.adam_eps", t.adam_eps);
    add_int("train.val_every", t.val_every);
    add_int("train.chunk_rays", t.chunk_rays);

    add_int("render.n_coarse", t.render.n_coarse);
    add_int("render.n_fine", t.render.n_fine);
    add_bool("render.perturb", t.render.perturb);
    add_bool("render.white_background", t.render.white_background);

    auto &k = c.cascade;
    add_int("cascade.max_stages", k.max_stages);
    add_double("cascade.stop_threshold", k.stop_threshold);
    add_bool("cascade.warm_start", k.warm_start);
    add_bool("cascade.warm_start_first", k.warm_start_first);
    keys.push_back({"cascade.prompt_site", [&k] { return std::string(prompt_site_name(k.prompt_site)); },
                    [&k](const std::string &v) { k.prompt_site = parse_prompt_site(v); }});
    keys.push_back({"cascade.prompt_source", [&k] { return std::string(prompt_source_name(k.prompt_source.kind)); },
                    [&k](const std::string &v) { k.prompt_source.kind = parse_prompt_source(v); }});
    add_double("cascade.noise_mean", k.prompt_source.mean);
    add_double("cascade.noise_stddev", k.prompt_source.stddev);
    add_double("cascade.iteration_shrink", k.iteration_shrink);
    add_int("cascade.min_iterations", k.min_iterations);

    add_u64("seed", k.seed);
    return keys;
}

// Applies one dotted-key assignment; unknown keys are rejected.
inline void config_set(RunConfig &c, const std::string &key, const std::string &value) {
    for (auto &k : config_keys(c)) {
        if (k.key == key) {
            k.set(detail::trim(value));
            c.cascade.prompt_source.seed = derive_seed({c.cascade.seed, 0x7015E});
            return;
        }
    }
    throw UsageError("unknown config key '" + key + "'");
}

// Parses a "key = value" file ('#' starts a comment).
inline void config_load_file(RunConfig &c, const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, "cannot open config file");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(path, "line " + std::to_string(lineno) + ": expected key = value");
        try {
            config_set(c, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const UsageError &e) {
            throw ParseError(path, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

// "key=value" override as given on the command line.
inline void config_apply_override(RunConfig &c, const std::string &kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("override '" + kv + "' is not key=value");
    config_set(c, detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
}

inline std::map<std::string, std::string> config_effective(RunConfig &c) {
    std::map<std::string, std::string> out;
    for (auto &k : config_keys(c)) out[k.key] = k.get();
    return out;
}

inline void config_finalize(RunConfig &c) {
    c.cascade.prompt_source.seed = derive_seed({c.cascade.seed, 0x7015E});
    c.cascade.train.workers = c.workers;
    c.arch.validate();
    c.cascade.validate();
}

// Rebuilds the configuration echoed into a run directory's run.json.
inline RunConfig config_from_run(const std::filesystem::path &run_dir) {
    const auto run = detail::read_json(run_dir / "run.json");
    RunConfig c;
    try {
        for (const auto &[k, v] : run.at("config").items()) config_set(c, k, v.get<std::string>());
    } catch (const nlohmann::json::exception &e) {
        throw IntegrityError("corrupted run.json: " + std::string(e.what()));
    }
    config_finalize(c);
    return c;
}

} // namespace vpt
