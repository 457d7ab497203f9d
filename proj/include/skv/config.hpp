// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "skv/common.hpp"
#include "skv/engine.hpp"

namespace skv {

// Full experiment configuration. JSON in, validated field by field.
struct RunConfig {
    ModelShape shape;
    bool skewed_init = false;

    std::size_t batch = 1;
    std::size_t prompt_len = 8;
    std::size_t gen_len = 16;
    std::uint64_t seed = 0;
    std::int64_t eos_id = -1;

    SparsityConfig sparsity;

    ScheduleMode mode = ScheduleMode::Dynamic;
    std::uint64_t device_capacity = 1ull << 40;
    double bandwidth = 1e9;
    double mac_rate = 1e12;
    double recompute_overhead = 1.0;
    double static_fraction = 0.5;
    bool recompute_enabled = true;

    QuantSettings quant;

    std::map<std::string, std::vector<double>> sweep_axes;

    CostParams cost_params() const {
        CostParams p;
        p.hidden = shape.hidden();
        p.layers = shape.layers;
        p.batch = batch;
        p.input_len = prompt_len;
        p.output_len = gen_len;
        p.ratio = sparsity.variant == AttentionVariant::Dense ? 1.0 : sparsity.ratio;
        p.bandwidth = bandwidth;
        p.bytes_per_element = quant.enabled ? 1 : 2;
        p.device_capacity = device_capacity;
        p.mac_rate = mac_rate;
        p.recompute_overhead = recompute_overhead;
        return p;
    }

    EngineConfig engine_config() const {
        EngineConfig e;
        e.shape = shape;
        e.seed = seed;
        e.skewed_init = skewed_init;
        e.prompt_len = prompt_len;
        e.gen_len = gen_len;
        e.eos_id = eos_id;
        e.sparsity = sparsity;
        e.cost = cost_params();
        e.mode = mode;
        e.static_fraction = static_fraction;
        e.recompute_enabled = recompute_enabled;
        e.quant = quant;
        return e;
    }
};

namespace detail {

using json = nlohmann::json;

inline const json* find(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

template <typename T>
T get_number(const json& obj, const std::string& section, const std::string& key,
             T fallback, double lo, double hi) {
    const json* v = find(obj, key);
    if (v == nullptr) {
        return fallback;
    }
    if (!v->is_number()) {
        throw ConfigError(section + "." + key + ": expected a number");
    }
    const double d = v->get<double>();
    if (d < lo || d > hi) {
        throw ConfigError(section + "." + key + ": value " + std::to_string(d) +
                          " outside [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
    }
    return v->get<T>();
}

inline bool get_bool(const json& obj, const std::string& section, const std::string& key,
                     bool fallback) {
    const json* v = find(obj, key);
    if (v == nullptr) {
        return fallback;
    }
    if (!v->is_boolean()) {
        throw ConfigError(section + "." + key + ": expected a boolean");
    }
    return v->get<bool>();
}

inline std::string get_string(const json& obj, const std::string& section,
                              const std::string& key, const std::string& fallback) {
    const json* v = find(obj, key);
    if (v == nullptr) {
        return fallback;
    }
    if (!v->is_string()) {
        throw ConfigError(section + "." + key + ": expected a string");
    }
    return v->get<std::string>();
}

} // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::get_bool;
    using detail::get_number;
    using detail::get_string;
    RunConfig cfg;
    if (!j.is_object()) {
        throw ConfigError("config root must be a JSON object");
    }

    const nlohmann::json empty = nlohmann::json::object();
    const auto& model = j.contains("model") ? j.at("model") : empty;
    if (!model.is_object()) {
        throw ConfigError("model: expected an object");
    }
    cfg.shape.layers = get_number<std::size_t>(model, "model", "layers", 2, 1, 64);
    cfg.shape.heads = get_number<std::size_t>(model, "model", "heads", 2, 1, 64);
    cfg.shape.head_dim = get_number<std::size_t>(model, "model", "head_dim", 8, 1, 256);
    cfg.shape.vocab = get_number<std::size_t>(model, "model", "vocab", 64, 2, 65536);
    cfg.shape.ffn_mult = get_number<std::size_t>(model, "model", "ffn_mult", 4, 1, 16);
    cfg.skewed_init = get_bool(model, "model", "skewed_init", false);

    const auto& wl = j.contains("workload") ? j.at("workload") : empty;
    if (!wl.is_object()) {
        throw ConfigError("workload: expected an object");
    }
    cfg.batch = get_number<std::size_t>(wl, "workload", "batch", 1, 1, 4096);
    cfg.prompt_len = get_number<std::size_t>(wl, "workload", "prompt_tokens", 8, 1, 8192);
    cfg.gen_len = get_number<std::size_t>(wl, "workload", "generate_tokens", 16, 0, 8192);
    cfg.seed = get_number<std::uint64_t>(wl, "workload", "seed", 0, 0, 1.8e19);
    cfg.eos_id = get_number<std::int64_t>(wl, "workload", "eos_id", -1, -1, 65535);

    const auto& sp = j.contains("sparsity") ? j.at("sparsity") : empty;
    if (!sp.is_object()) {
        throw ConfigError("sparsity: expected an object");
    }
    const std::string variant = get_string(sp, "sparsity", "variant", "dense");
    if (variant == "dense") {
        cfg.sparsity.variant = AttentionVariant::Dense;
    } else if (variant == "swa") {
        cfg.sparsity.variant = AttentionVariant::Swa;
    } else if (variant == "local") {
        cfg.sparsity.variant = AttentionVariant::Local;
    } else if (variant == "strided") {
        cfg.sparsity.variant = AttentionVariant::Strided;
    } else {
        throw ConfigError("sparsity.variant: unknown variant '" + variant +
                          "' (expected dense|swa|local|strided)");
    }
    cfg.sparsity.ratio = get_number<double>(sp, "sparsity", "ratio", 1.0, 1e-6, 1.0);
    cfg.sparsity.stride = get_number<std::size_t>(sp, "sparsity", "stride", 0, 0, 8192);

    const auto& sc = j.contains("schedule") ? j.at("schedule") : empty;
    if (!sc.is_object()) {
        throw ConfigError("schedule: expected an object");
    }
    const std::string mode = get_string(sc, "schedule", "mode", "dynamic");
    if (mode == "dynamic") {
        cfg.mode = ScheduleMode::Dynamic;
    } else if (mode == "all_device") {
        cfg.mode = ScheduleMode::AllDevice;
    } else if (mode == "static_split") {
        cfg.mode = ScheduleMode::StaticSplit;
    } else {
        throw ConfigError("schedule.mode: unknown mode '" + mode +
                          "' (expected dynamic|all_device|static_split)");
    }
    cfg.device_capacity = get_number<std::uint64_t>(sc, "schedule", "device_capacity_bytes",
                                                    1ull << 40, 0, 1.8e19);
    cfg.bandwidth =
        get_number<double>(sc, "schedule", "bandwidth_bytes_per_sec", 1e9, 1e-3, 1e15);
    cfg.mac_rate = get_number<double>(sc, "schedule", "mac_rate", 1e12, 1e-3, 1e18);
    cfg.recompute_overhead =
        get_number<double>(sc, "schedule", "recompute_overhead", 1.0, 1.0, 1e3);
    cfg.static_fraction =
        get_number<double>(sc, "schedule", "static_fraction", 0.5, 1e-6, 0.999999);
    cfg.recompute_enabled = get_bool(sc, "schedule", "recompute_enabled", true);

    const auto& q = j.contains("quant") ? j.at("quant") : empty;
    if (!q.is_object()) {
        throw ConfigError("quant: expected an object");
    }
    cfg.quant.enabled = get_bool(q, "quant", "enabled", false);
    cfg.quant.bits = get_number<std::uint32_t>(q, "quant", "bits", 8, 4, 8);
    if (cfg.quant.bits != 4 && cfg.quant.bits != 8) {
        throw ConfigError("quant.bits: must be 4 or 8");
    }

    if (j.contains("sweep")) {
        const auto& sw = j.at("sweep");
        if (!sw.is_object()) {
            throw ConfigError("sweep: expected an object");
        }
        for (const auto& [axis, values] : sw.items()) {
            if (axis != "batch" && axis != "ratio" && axis != "bandwidth" &&
                axis != "capacity") {
                throw ConfigError("sweep." + axis +
                                  ": unknown axis (expected batch|ratio|bandwidth|capacity)");
            }
            if (!values.is_array() || values.empty()) {
                throw ConfigError("sweep." + axis + ": expected a non-empty array");
            }
            std::vector<double> vals;
            for (const auto& v : values) {
                if (!v.is_number()) {
                    throw ConfigError("sweep." + axis + ": values must be numbers");
                }
                vals.push_back(v.get<double>());
            }
            cfg.sweep_axes[axis] = vals;
        }
    }

    if (cfg.eos_id >= static_cast<std::int64_t>(cfg.shape.vocab)) {
        throw ConfigError("workload.eos_id: beyond vocab");
    }
    return cfg;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

} // namespace skv
