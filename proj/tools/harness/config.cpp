// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include "config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace fuselora::harness {
namespace {

using json = nlohmann::json;

std::size_t as_count(const json& v, const std::string& key) {
    if (!v.is_number_unsigned()) {
        throw InputError(fmt::format("config key '{}' must be a non-negative integer", key));
    }
    return v.get<std::size_t>();
}

double as_positive(const json& v, const std::string& key) {
    if (!v.is_number() || !(v.get<double>() > 0.0)) {
        throw InputError(fmt::format("config key '{}' must be a positive number", key));
    }
    return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
    if (!v.is_string()) {
        throw InputError(fmt::format("config key '{}' must be a string", key));
    }
    return v.get<std::string>();
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"layers", [](RunConfig& c, const json& v, const std::string& k) { c.model.layers = as_count(v, k); }},
        {"hidden", [](RunConfig& c, const json& v, const std::string& k) { c.model.hidden = as_count(v, k); }},
        {"vocab", [](RunConfig& c, const json& v, const std::string& k) { c.model.vocab = as_count(v, k); }},
        {"experts", [](RunConfig& c, const json& v, const std::string& k) { c.model.experts = as_count(v, k); }},
        {"rank", [](RunConfig& c, const json& v, const std::string& k) { c.model.rank = as_count(v, k); }},
        {"top_k", [](RunConfig& c, const json& v, const std::string& k) { c.model.top_k = as_count(v, k); }},
        {"seed", [](RunConfig& c, const json& v, const std::string& k) { c.model.seed = as_count(v, k); }},
        {"tile_m", [](RunConfig& c, const json& v, const std::string& k) { c.model.tile.m = as_count(v, k); }},
        {"tile_n", [](RunConfig& c, const json& v, const std::string& k) { c.model.tile.n = as_count(v, k); }},
        {"tile_k", [](RunConfig& c, const json& v, const std::string& k) { c.model.tile.k = as_count(v, k); }},
        {"refresh_interval",
         [](RunConfig& c, const json& v, const std::string& k) { c.model.refresh_interval = as_count(v, k); }},
        {"precision",
         [](RunConfig& c, const json& v, const std::string& k) {
             const std::string p = as_string(v, k);
             if (p == "double") {
                 c.model.precision = Precision::Double;
             } else if (p == "single") {
                 c.model.precision = Precision::Single;
             } else {
                 throw InputError("precision must be \"single\" or \"double\", got \"" + p + "\"");
             }
         }},
        {"strategy",
         [](RunConfig& c, const json& v, const std::string& k) {
             try {
                 c.model.strategy = parse_strategy(as_string(v, k));
             } catch (const ParameterError& e) {
                 throw InputError(e.what());
             }
         }},
        {"c_launch_us",
         [](RunConfig& c, const json& v, const std::string& k) { c.cost.launch_s = as_positive(v, k) * 1e-6; }},
        {"flops_throughput",
         [](RunConfig& c, const json& v, const std::string& k) { c.cost.flops_per_s = as_positive(v, k); }},
        {"bytes_bandwidth",
         [](RunConfig& c, const json& v, const std::string& k) { c.cost.bytes_per_s = as_positive(v, k); }},
        {"n_new", [](RunConfig& c, const json& v, const std::string& k) { c.n_new = as_count(v, k); }},
        {"synthetic_prompts",
         [](RunConfig& c, const json& v, const std::string& k) { c.synthetic_prompts = as_count(v, k); }},
        {"synthetic_len_min",
         [](RunConfig& c, const json& v, const std::string& k) { c.synthetic_len_min = as_count(v, k); }},
        {"synthetic_len_max",
         [](RunConfig& c, const json& v, const std::string& k) { c.synthetic_len_max = as_count(v, k); }},
        {"verify_prompts",
         [](RunConfig& c, const json& v, const std::string& k) { c.verify_prompts = as_count(v, k); }},
        {"verify_tokens",
         [](RunConfig& c, const json& v, const std::string& k) { c.verify_tokens = as_count(v, k); }},
        {"workers", [](RunConfig& c, const json& v, const std::string& k) { c.workers = as_count(v, k); }},
    };
    return table;
}

}  // namespace

void RunConfig::validate() const {
    try {
        model.validate();
        cost.validate();
    } catch (const ParameterError& e) {
        throw InputError(std::string("invalid config: ") + e.what());
    }
    if (n_new < 1 || verify_tokens < 1) {
        throw InputError("n_new and verify_tokens must be >= 1");
    }
    if (synthetic_prompts < 1 || verify_prompts < 1) {
        throw InputError("synthetic_prompts and verify_prompts must be >= 1");
    }
    if (synthetic_len_min < 1 || synthetic_len_min > synthetic_len_max) {
        throw InputError("need 1 <= synthetic_len_min <= synthetic_len_max");
    }
    if (workers < 1) {
        throw InputError("workers must be >= 1");
    }
}

RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw InputError("config must be a JSON object");
    }
    RunConfig config;
    for (const auto& [key, value] : doc.items()) {
        const auto it = setters().find(key);
        if (it == setters().end()) {
            throw InputError("unknown config key '" + key + "'");
        }
        it->second(config, value, key);
    }
    config.validate();
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot read config " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["layers"] = c.model.layers;
    j["hidden"] = c.model.hidden;
    j["vocab"] = c.model.vocab;
    j["experts"] = c.model.experts;
    j["rank"] = c.model.rank;
    j["top_k"] = c.model.top_k;
    j["precision"] = std::string(to_string(c.model.precision));
    j["seed"] = c.model.seed;
    j["strategy"] = std::string(to_string(c.model.strategy));
    j["tile_m"] = c.model.tile.m;
    j["tile_n"] = c.model.tile.n;
    j["tile_k"] = c.model.tile.k;
    j["refresh_interval"] = c.model.refresh_interval;
    j["c_launch_us"] = c.cost.launch_s * 1e6;
    j["flops_throughput"] = c.cost.flops_per_s;
    j["bytes_bandwidth"] = c.cost.bytes_per_s;
    j["n_new"] = c.n_new;
    j["synthetic_prompts"] = c.synthetic_prompts;
    j["synthetic_len_min"] = c.synthetic_len_min;
    j["synthetic_len_max"] = c.synthetic_len_max;
    j["verify_prompts"] = c.verify_prompts;
    j["verify_tokens"] = c.verify_tokens;
    j["workers"] = c.workers;
    return j;
}

}  // namespace fuselora::harness
