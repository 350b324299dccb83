// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line harness: verify, bench, profile, gen-workload and init.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fuselora/io.hpp"
#include "harness/commands.hpp"

namespace fl = fuselora;
namespace h = fuselora::harness;

namespace {

std::optional<std::string> optional_path(const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

int cmd_verify(const std::string& config_path, const std::string& checkpoint) {
    const h::RunConfig config = h::load_config(config_path);
    const h::VerifyReport report = h::run_verify(config, optional_path(checkpoint));
    std::cout << h::format_verify(report);
    return report.all_pass() ? h::kExitOk : h::kExitTolerance;
}

int cmd_bench(const std::string& config_path, const std::string& workload_path, bool synthetic,
              const std::string& out_dir, std::size_t workers, const std::string& checkpoint) {
    h::RunConfig config = h::load_config(config_path);
    if (workers > 0) {
        config.workers = workers;
    }
    h::Workload workload;
    workload.n_new = config.n_new;
    std::string source;
    if (synthetic) {
        workload.prompts = h::synthetic_prompts({config.model.vocab, config.synthetic_prompts,
                                                 config.synthetic_len_min, config.synthetic_len_max,
                                                 config.model.seed});
        source = "synthetic";
    } else {
        workload.prompts = h::load_workload(workload_path, config.model.vocab);
        source = std::filesystem::path(workload_path).filename().string();
    }
    h::ensure_directory(out_dir);

    const auto start = std::chrono::steady_clock::now();
    const h::BenchReport report = h::run_bench(config, workload, source, optional_path(checkpoint));
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const auto dir = std::filesystem::path(out_dir);
    h::write_text_file((dir / "report.json").string(), h::bench_to_json(report).dump(2) + "\n");
    h::write_text_file((dir / "report.csv").string(), h::bench_to_csv(report));

    std::cout << fmt::format("{:<24}{:>14}{:>14}{:>16}\n", "strategy", "ms/token", "overhead %",
                             "gemm-class/tok");
    for (const h::StrategyReport& r : report.strategies) {
        std::cout << fmt::format("{:<24}{:>14.5f}{:>14.1f}{:>16.2f}\n", fl::to_string(r.strategy),
                                 r.decode_ms_per_token, r.overhead_vs_base_pct, r.gemm_class_per_token);
    }
    for (const h::PairDeviation& p : report.equivalence) {
        std::cout << fmt::format("equivalence {} vs {}: max deviation {:.3e}, {} token mismatches\n",
                                 fl::to_string(p.a), fl::to_string(p.b), p.max_hidden_deviation,
                                 p.token_mismatches);
    }
    std::cout << fmt::format("{} prompts x {} tokens, wall time {:.2f} s (informational)\n",
                             report.n_prompts, report.n_new, wall);
    std::cout << "wrote " << (dir / "report.json").string() << " and " << (dir / "report.csv").string()
              << "\n";
    return h::kExitOk;
}

int cmd_profile(const std::string& config_path, const std::string& out_dir) {
    const h::RunConfig config = h::load_config(config_path);
    h::ensure_directory(out_dir);
    const h::ProfileReport report = h::run_profile(config);
    const auto dir = std::filesystem::path(out_dir);
    h::write_text_file((dir / "profile.json").string(), h::profile_to_json(report).dump(2) + "\n");
    h::write_text_file((dir / "profile.csv").string(), h::profile_to_csv(report));
    for (const h::RankPoint& p : report.rank_sweep) {
        std::cout << fmt::format("{:<18} r={:<3} {:<8} {:>10.4f} ms  flops={:<10} backbone {:.4f} ms\n",
                                 fl::to_string(p.strategy), p.rank, p.adapter_label, p.adapter_ms,
                                 p.adapter_flops, p.backbone_ms);
    }
    for (const auto& [name, spread] : report.rank_spread) {
        std::cout << fmt::format("{}: adapter latency spread across ranks {:.2f}%\n", name, 100.0 * spread);
    }
    std::cout << "wrote " << (dir / "profile.json").string() << " and " << (dir / "profile.csv").string()
              << "\n";
    return h::kExitOk;
}

int cmd_gen_workload(std::size_t vocab, std::size_t prompts, const std::string& len, std::uint64_t seed,
                     const std::string& out, const std::string& conversations) {
    if (vocab < 1) {
        throw fl::InputError("--vocab must be >= 1");
    }
    std::vector<h::Prompt> records;
    if (conversations.empty()) {
        const auto [lo, hi] = h::parse_len_range(len);
        records = h::synthetic_prompts({vocab, prompts, lo, hi, seed});
    } else {
        records = h::load_workload(conversations, vocab);
        if (records.size() > prompts) {
            records.resize(prompts);
        }
    }
    h::write_text_file(out, h::serialize_workload(records));
    std::cout << fmt::format("wrote {} prompts to {}\n", records.size(), out);
    return h::kExitOk;
}

int cmd_init(const std::string& config_path, const std::string& out) {
    const h::RunConfig config = h::load_config(config_path);
    try {
        if (config.model.precision == fl::Precision::Double) {
            fl::save_checkpoint_file(out, fl::build_model<double>(config.model));
        } else {
            fl::save_checkpoint_file(out, fl::build_model<float>(config.model));
        }
    } catch (const fl::FormatError& e) {
        throw fl::InputError(e.what());
    }
    std::cout << "wrote checkpoint " << out << "\n";
    return h::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuselora: pre-gated dynamic LoRA engine with fused adapter switching"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::string checkpoint;

    auto* verify = app.add_subcommand("verify", "Check strategy equivalence and backbone restoration");
    verify->add_option("--config", config_path, "Config file (flat JSON)")->required();
    verify->add_option("--checkpoint", checkpoint, "Load weights from a checkpoint instead of the seed");

    std::string workload_path;
    bool synthetic = false;
    std::size_t workers = 0;
    auto* bench = app.add_subcommand("bench", "Run every strategy over a workload and write reports");
    bench->add_option("--config", config_path, "Config file (flat JSON)")->required();
    auto* wl = bench->add_option("--workload", workload_path, "JSONL workload file");
    auto* syn = bench->add_flag("--synthetic", synthetic, "Generate the workload from the config");
    wl->excludes(syn);
    bench->add_option("--out", out, "Output directory for report.json and report.csv")->required();
    bench->add_option("--workers", workers, "Parallel prompt workers (overrides the config)");
    bench->add_option("--checkpoint", checkpoint, "Load weights from a checkpoint instead of the seed");

    auto* profile = app.add_subcommand("profile", "Per-component dispatch breakdown and rank sweep");
    profile->add_option("--config", config_path, "Config file (flat JSON)")->required();
    profile->add_option("--out", out, "Output directory for profile.json and profile.csv")->required();

    std::size_t vocab = 0;
    std::size_t prompts = 0;
    std::string len = "8:32";
    std::uint64_t seed = 0;
    std::string conversations;
    auto* gen = app.add_subcommand("gen-workload", "Write a JSONL workload of random prompts");
    gen->add_option("--vocab", vocab, "Vocabulary size")->required();
    gen->add_option("--prompts", prompts, "Number of prompts")->required();
    gen->add_option("--len", len, "Prompt length range MIN:MAX");
    gen->add_option("--seed", seed, "Random seed")->required();
    gen->add_option("--out", out, "Output JSONL path")->required();
    gen->add_option("--conversations", conversations,
                    "Tokenize {\"text\": ...} records from this JSONL file instead of sampling");

    auto* init = app.add_subcommand("init", "Build a model from a config and save a checkpoint");
    init->add_option("--config", config_path, "Config file (flat JSON)")->required();
    init->add_option("--out", out, "Checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return h::kExitUsage;
    }

    try {
        if (verify->parsed()) {
            return cmd_verify(config_path, checkpoint);
        }
        if (bench->parsed()) {
            if (!synthetic && workload_path.empty()) {
                std::cerr << "bench: pass --workload PATH or --synthetic\n";
                return h::kExitUsage;
            }
            return cmd_bench(config_path, workload_path, synthetic, out, workers, checkpoint);
        }
        if (profile->parsed()) {
            return cmd_profile(config_path, out);
        }
        if (gen->parsed()) {
            return cmd_gen_workload(vocab, prompts, len, seed, out, conversations);
        }
        if (init->parsed()) {
            return cmd_init(config_path, out);
        }
    } catch (const fl::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return h::kExitUsage;
    } catch (const fl::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return h::kExitUsage;
    }
    return h::kExitUsage;
}
