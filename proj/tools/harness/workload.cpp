// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include "workload.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "fuselora/error.hpp"
#include "fuselora/rng.hpp"

namespace fuselora::harness {

std::vector<Prompt> synthetic_prompts(const WorkloadSpec& spec) {
    if (spec.vocab < 1 || spec.len_min < 1 || spec.len_min > spec.len_max) {
        throw InputError("invalid workload spec");
    }
    Rng rng(spec.seed);
    std::vector<Prompt> out(spec.prompts);
    for (Prompt& p : out) {
        p.resize(spec.len_min + rng.below(spec.len_max - spec.len_min + 1));
        for (std::size_t& t : p) {
            t = rng.below(spec.vocab);
        }
    }
    return out;
}

Prompt tokenize_bytes(const std::string& text, std::size_t vocab) {
    Prompt out;
    out.reserve(text.size());
    for (unsigned char c : text) {
        out.push_back(c % vocab);
    }
    return out;
}

std::vector<Prompt> parse_workload(const std::string& text, std::size_t vocab) {
    std::vector<Prompt> out;
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const auto fail = [&](const std::string& why) {
            return InputError(fmt::format("workload line {}: {}", line_no, why));
        };
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw fail("not valid JSON");
        }
        Prompt prompt;
        if (record.is_object() && record.contains("tokens") && record["tokens"].is_array()) {
            for (const auto& id : record["tokens"]) {
                if (!id.is_number_unsigned()) {
                    throw fail("token ids must be non-negative integers");
                }
                prompt.push_back(id.get<std::size_t>());
                if (prompt.back() >= vocab) {
                    throw fail(fmt::format("token id {} outside vocabulary of {}", prompt.back(), vocab));
                }
            }
        } else if (record.is_object() && record.contains("text") && record["text"].is_string()) {
            prompt = tokenize_bytes(record["text"].get<std::string>(), vocab);
        } else {
            throw fail("expected {\"tokens\": [...]} or {\"text\": \"...\"}");
        }
        if (prompt.empty()) {
            throw fail("empty prompt");
        }
        out.push_back(std::move(prompt));
    }
    if (out.empty()) {
        throw InputError("workload has no prompts");
    }
    return out;
}

std::vector<Prompt> load_workload(const std::string& path, std::size_t vocab) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot read workload " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_workload(text.str(), vocab);
}

std::string serialize_workload(const std::vector<Prompt>& prompts) {
    std::string out;
    for (const Prompt& p : prompts) {
        out += nlohmann::json{{"tokens", p}}.dump();
        out += '\n';
    }
    return out;
}

std::pair<std::size_t, std::size_t> parse_len_range(const std::string& text) {
    const auto colon = text.find(':');
    const auto number = [&](std::string_view s) {
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
            throw InputError("length range must look like MIN:MAX, got '" + text + "'");
        }
        return v;
    };
    if (colon == std::string::npos) {
        throw InputError("length range must look like MIN:MAX, got '" + text + "'");
    }
    const std::string_view all(text);
    const std::size_t lo = number(all.substr(0, colon));
    const std::size_t hi = number(all.substr(colon + 1));
    if (lo < 1 || lo > hi) {
        throw InputError("length range needs 1 <= MIN <= MAX");
    }
    return {lo, hi};
}

}  // namespace fuselora::harness
