// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "workload.hpp"

namespace fuselora::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitTolerance = 1;
inline constexpr int kExitUsage = 2;

inline constexpr int kReportSchemaVersion = 1;

// ---- verify ---------------------------------------------------------------

struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<CheckResult> checks;
    bool all_pass() const;
};

/// Equivalence and restoration checks at double precision. A single-precision
/// config is promoted; a single-precision checkpoint is rejected with InputError.
VerifyReport run_verify(const RunConfig& config, const std::optional<std::string>& checkpoint = {});

std::string format_verify(const VerifyReport& report);

// ---- bench ----------------------------------------------------------------

struct PromptRecord {
    std::size_t prompt_tokens = 0;
    double decode_ms_per_token = 0.0;
    std::uint64_t sgmm_events = 0;
    std::uint64_t gemm_class_events = 0;
    double backbone_deviation = 0.0;
};

struct StrategyReport {
    Strategy strategy = Strategy::Base;
    std::vector<PromptRecord> prompts;
    /// Decode dispatches per generated token, by kind, averaged over prompts.
    std::map<std::string, double> dispatches_per_token;
    double gemm_class_per_token = 0.0;
    double prefill_dispatches_per_prompt = 0.0;
    std::map<std::string, double> per_component_ms;
    double decode_ms_per_token = 0.0;
    double overhead_vs_base_pct = 0.0;
    double max_backbone_deviation = 0.0;
};

struct PairDeviation {
    Strategy a = Strategy::PreGatedNaive;
    Strategy b = Strategy::PreGatedNaive;
    double max_hidden_deviation = 0.0;
    std::size_t token_mismatches = 0;
};

struct BenchReport {
    RunConfig config;
    std::string workload_source;
    std::size_t n_prompts = 0;
    std::size_t n_new = 0;
    std::vector<StrategyReport> strategies;  // kAllStrategies order
    std::vector<PairDeviation> equivalence;
    double equivalence_tolerance = 0.0;
    std::string timestamp;

    const StrategyReport& at(Strategy s) const;
};

/// Runs every strategy over the workload. Prompts are independent; with
/// workers > 1 they run on parallel threads and results are merged by index.
BenchReport run_bench(const RunConfig& config, const Workload& workload, std::string workload_source,
                      const std::optional<std::string>& checkpoint = {});

nlohmann::ordered_json bench_to_json(const BenchReport& report);
std::string bench_to_csv(const BenchReport& report);

/// SOURCE_DATE_EPOCH as an ISO-8601 UTC string, or the epoch when unset.
std::string report_timestamp();

// ---- profile --------------------------------------------------------------

struct ProfileRow {
    std::string section;  // decode | prefill | rank_sweep
    Strategy strategy = Strategy::Base;
    std::size_t rank = 0;
    std::string label;
    DispatchKind kind = DispatchKind::Gemm;
    std::uint64_t count = 0;
    std::uint64_t flops = 0;
    double ms = 0.0;
};

struct RankPoint {
    Strategy strategy = Strategy::Base;
    std::size_t rank = 0;
    std::string adapter_label;
    double adapter_ms = 0.0;
    std::uint64_t adapter_flops = 0;
    double backbone_ms = 0.0;
};

struct ProfileReport {
    RunConfig config;
    std::size_t prefill_tokens = 100;
    std::vector<ProfileRow> rows;
    std::vector<RankPoint> rank_sweep;
    /// (max - min) / min of adapter_ms across ranks, per strategy.
    std::map<std::string, double> rank_spread;
};

inline constexpr std::size_t kSweepRanks[] = {2, 4, 8, 16};

ProfileReport run_profile(const RunConfig& config);

nlohmann::ordered_json profile_to_json(const ProfileReport& report);
std::string profile_to_csv(const ProfileReport& report);

// ---- files ----------------------------------------------------------------

/// Writes the file or throws InputError.
void write_text_file(const std::string& path, const std::string& contents);

/// Creates the directory (and parents) or throws InputError.
void ensure_directory(const std::string& path);

}  // namespace fuselora::harness
