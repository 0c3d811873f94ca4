// Run configuration: JSON text in, validated RunConfig out, canonical JSON back.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridstitch/cost_model.hpp"
#include "hybridstitch/denoiser.hpp"
#include "hybridstitch/stitcher.hpp"

namespace hybridstitch {

struct RunConfig {
    DenoiserConfig large = preset("large");
    DenoiserConfig small = preset("small");
    std::size_t steps = 50;
    std::vector<double> thresholds{0.0065, 0.0055};
    std::vector<double> mask_ratios{0.3};
    std::optional<std::vector<double>> sigma_schedule;
    Variant variant = Variant::Hybrid;
    std::vector<std::uint64_t> noise_seeds{0};
    std::string output_dir = "out";
    bool simulated_latency = false;
    double sim_latency_large = 0.4144;
    double sim_latency_small = 0.1154;
    std::vector<std::size_t> probe_steps;  // empty: {0, T/4, T/2, T-1}
    std::vector<double> latency_ratios{0.1, 0.2, 0.3, 0.4};
    std::size_t latency_runs = 50;
    double tolerance = 0.25;

    std::vector<double> sigmas() const { return sigma_schedule ? *sigma_schedule : uniform_sigmas(steps); }

    std::vector<std::size_t> effective_probe_steps() const {
        if (!probe_steps.empty()) return probe_steps;
        std::set<std::size_t> s{0, steps / 4, steps / 2, steps - 1};
        return {s.begin(), s.end()};
    }

    /// Threshold ladder; in simulated-latency mode M_1 must also respect 1 - L_s/L_l.
    ThresholdSchedule schedule() const {
        std::optional<double> bound;
        if (simulated_latency) bound = feasible_mask_bound(sim_latency_large, sim_latency_small);
        return ThresholdSchedule(thresholds, mask_ratios, sigmas(), bound);
    }

    /// Throws ConfigError naming the violated rule.
    void validate() const {
        auto check_model = [](const DenoiserConfig& c, const std::string& which) {
            try {
                c.validate();
            } catch (const ConfigError& e) {
                throw ConfigError(which + ": " + e.what());
            }
        };
        check_model(large, "large");
        check_model(small, "small");
        if (large.tokens != small.tokens || large.channels != small.channels) {
            throw ConfigError("large and small models must share tokens and channels");
        }
        if (steps == 0) throw ConfigError("steps must be >= 1");
        if (sigma_schedule && sigma_schedule->size() != steps) {
            throw ConfigError("sigma_schedule must have exactly `steps` entries (got " +
                              std::to_string(sigma_schedule->size()) + ", steps=" + std::to_string(steps) + ")");
        }
        if (noise_seeds.empty()) throw ConfigError("noise_seeds must not be empty");
        if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
        if (simulated_latency) {
            if (!(sim_latency_small > 0.0 && sim_latency_large > sim_latency_small)) {
                throw ConfigError("simulated latencies must satisfy 0 < sim_L_s < sim_L_l");
            }
        }
        for (auto p : probe_steps) {
            if (p >= steps) throw ConfigError("probe step " + std::to_string(p) + " must be < steps");
        }
        for (double r : latency_ratios) {
            if (!(r > 0.0 && r <= 1.0)) throw ConfigError("latency_ratios entries must lie in (0, 1]");
        }
        if (latency_runs == 0) throw ConfigError("latency_runs must be >= 1");
        if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be >= 0");
        try {
            (void)schedule();
        } catch (const ScheduleError& e) {
            throw ConfigError(e.what());
        } catch (const CostModelError& e) {
            throw ConfigError(e.what());
        }
    }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_field(const json& obj, const std::string& key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline DenoiserConfig model_from_json(const json& j, const std::string& where) {
    reject_unknown_keys(j, {"preset", "layers", "heads", "model_dim", "tokens", "channels", "weight_seed",
                            "content_seed"},
                        where);
    DenoiserConfig c;
    if (j.contains("preset")) {
        const auto name = get_field<std::string>(j, "preset", where);
        try {
            if (name == "custom") {
                c.preset_name = name;
            } else {
                c = preset(name);
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + ".preset: " + e.what());
        }
    }
    if (j.contains("layers")) c.layers = get_field<std::size_t>(j, "layers", where);
    if (j.contains("heads")) c.heads = get_field<std::size_t>(j, "heads", where);
    if (j.contains("model_dim")) c.model_dim = get_field<std::size_t>(j, "model_dim", where);
    if (j.contains("tokens")) c.tokens = get_field<std::size_t>(j, "tokens", where);
    if (j.contains("channels")) c.channels = get_field<std::size_t>(j, "channels", where);
    if (j.contains("weight_seed")) c.weight_seed = get_field<std::uint64_t>(j, "weight_seed", where);
    if (j.contains("content_seed")) c.content_seed = get_field<std::uint64_t>(j, "content_seed", where);
    return c;
}

inline json model_to_json(const DenoiserConfig& c) {
    return json{{"preset", c.preset_name}, {"layers", c.layers},     {"heads", c.heads},
                {"model_dim", c.model_dim}, {"tokens", c.tokens},     {"channels", c.channels},
                {"weight_seed", c.weight_seed}, {"content_seed", c.content_seed}};
}

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = detail::line_column(text, e.byte);
        throw ConfigError("parse error at line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                          e.what());
    }
    detail::reject_unknown_keys(j,
                                {"large", "small", "steps", "thresholds", "mask_ratios", "sigma_schedule", "variant",
                                 "noise_seeds", "output_dir", "simulated_latency", "sim_L_l", "sim_L_s",
                                 "probe_steps", "latency_ratios", "latency_runs", "tolerance"},
                                "config");
    RunConfig c;
    const std::string w = "config";
    if (j.contains("large")) c.large = detail::model_from_json(j["large"], "large");
    if (j.contains("small")) c.small = detail::model_from_json(j["small"], "small");
    if (j.contains("steps")) c.steps = detail::get_field<std::size_t>(j, "steps", w);
    if (j.contains("thresholds")) c.thresholds = detail::get_field<std::vector<double>>(j, "thresholds", w);
    if (j.contains("mask_ratios")) c.mask_ratios = detail::get_field<std::vector<double>>(j, "mask_ratios", w);
    if (j.contains("sigma_schedule")) c.sigma_schedule = detail::get_field<std::vector<double>>(j, "sigma_schedule", w);
    if (j.contains("variant")) {
        try {
            c.variant = parse_variant(detail::get_field<std::string>(j, "variant", w));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config.variant: ") + e.what());
        }
    }
    if (j.contains("noise_seeds")) c.noise_seeds = detail::get_field<std::vector<std::uint64_t>>(j, "noise_seeds", w);
    if (j.contains("output_dir")) c.output_dir = detail::get_field<std::string>(j, "output_dir", w);
    if (j.contains("simulated_latency")) c.simulated_latency = detail::get_field<bool>(j, "simulated_latency", w);
    if (j.contains("sim_L_l")) c.sim_latency_large = detail::get_field<double>(j, "sim_L_l", w);
    if (j.contains("sim_L_s")) c.sim_latency_small = detail::get_field<double>(j, "sim_L_s", w);
    if (j.contains("probe_steps")) c.probe_steps = detail::get_field<std::vector<std::size_t>>(j, "probe_steps", w);
    if (j.contains("latency_ratios")) c.latency_ratios = detail::get_field<std::vector<double>>(j, "latency_ratios", w);
    if (j.contains("latency_runs")) c.latency_runs = detail::get_field<std::size_t>(j, "latency_runs", w);
    if (j.contains("tolerance")) c.tolerance = detail::get_field<double>(j, "tolerance", w);
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

/// Canonical form: every key written, sorted, two-space indent, trailing newline.
inline std::string dump_config(const RunConfig& c) {
    using detail::json;
    json j{{"large", detail::model_to_json(c.large)},
           {"small", detail::model_to_json(c.small)},
           {"steps", c.steps},
           {"thresholds", c.thresholds},
           {"mask_ratios", c.mask_ratios},
           {"variant", to_string(c.variant)},
           {"noise_seeds", c.noise_seeds},
           {"output_dir", c.output_dir},
           {"simulated_latency", c.simulated_latency},
           {"sim_L_l", c.sim_latency_large},
           {"sim_L_s", c.sim_latency_small},
           {"probe_steps", c.probe_steps},
           {"latency_ratios", c.latency_ratios},
           {"latency_runs", c.latency_runs},
           {"tolerance", c.tolerance}};
    if (c.sigma_schedule) j["sigma_schedule"] = *c.sigma_schedule;
    return j.dump(2) + "\n";
}

}  // namespace hybridstitch
