// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "fuselora/model.hpp"
#include "fuselora/perf.hpp"

namespace fuselora::harness {

/// Everything a run needs: model shape, cost model overrides and workload knobs.
struct RunConfig {
    ModelConfig model;
    CostModel cost;
    std::size_t n_new = 200;
    std::size_t synthetic_prompts = 50;
    std::size_t synthetic_len_min = 8;
    std::size_t synthetic_len_max = 32;
    std::size_t verify_prompts = 4;
    std::size_t verify_tokens = 64;
    std::size_t workers = 1;

    void validate() const;
};

/// Parses a flat JSON object. Unknown keys, wrong types and invalid values throw InputError.
RunConfig parse_config(const std::string& text);

/// Reads and parses a config file; unreadable files throw InputError.
RunConfig load_config(const std::string& path);

/// Flat echo of every key, in the same vocabulary the parser accepts.
nlohmann::ordered_json config_to_json(const RunConfig& config);

}  // namespace fuselora::harness
