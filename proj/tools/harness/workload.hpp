// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fuselora::harness {

using Prompt = std::vector<std::size_t>;

struct Workload {
    std::vector<Prompt> prompts;
    std::size_t n_new = 0;
};

struct WorkloadSpec {
    std::size_t vocab = 256;
    std::size_t prompts = 50;
    std::size_t len_min = 8;
    std::size_t len_max = 32;
    std::uint64_t seed = 42;
};

/// Random prompts: lengths uniform in [len_min, len_max], ids uniform below vocab.
std::vector<Prompt> synthetic_prompts(const WorkloadSpec& spec);

/// Bytes of text mapped to ids modulo vocab.
Prompt tokenize_bytes(const std::string& text, std::size_t vocab);

/// Line-delimited JSON: each non-blank line is {"tokens": [ids...]} or {"text": "..."}.
/// Malformed records, empty prompts and out-of-vocabulary ids throw InputError
/// naming the offending line.
std::vector<Prompt> parse_workload(const std::string& text, std::size_t vocab);

std::vector<Prompt> load_workload(const std::string& path, std::size_t vocab);

/// One {"tokens": [...]} record per line.
std::string serialize_workload(const std::vector<Prompt>& prompts);

/// "MIN:MAX" with 1 <= MIN <= MAX.
std::pair<std::size_t, std::size_t> parse_len_range(const std::string& text);

}  // namespace fuselora::harness
