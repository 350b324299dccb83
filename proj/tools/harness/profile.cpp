// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

#include "commands.hpp"
#include "fuselora/rng.hpp"
#include "runner.hpp"

namespace fuselora::harness {
namespace {

void append_rows(std::vector<ProfileRow>& rows, const std::string& section, Strategy s, std::size_t rank,
                 const DispatchTrace& trace, const CostModel& cm) {
    for (const BreakdownRow& b : breakdown(trace)) {
        const double ms = detail::trace_ms(trace, cm, [&](const DispatchEvent& e) {
            return e.label == b.label && e.kind == b.kind;
        });
        rows.push_back({section, s, rank, b.label, b.kind, b.count, b.flops, ms});
    }
}

std::string adapter_label(Strategy s) {
    return std::string(merges_into_backbone(s) ? labels::kSwitch : labels::kAdapter);
}

template <Real T>
ProfileReport profile_impl(const RunConfig& config) {
    ProfileReport report;
    report.config = config;
    const CostModel& cm = config.cost;
    const DecoderModel<T> base = detail::make_model<T>(config.model, std::nullopt);
    const std::size_t vocab = base.config().vocab;

    Rng rng(base.config().seed);
    std::vector<std::size_t> prefill_tokens(report.prefill_tokens);
    for (std::size_t& t : prefill_tokens) {
        t = rng.below(vocab);
    }
    const std::size_t warm = prefill_tokens[0];
    const std::size_t token = prefill_tokens[1];

    for (Strategy s : kAllStrategies) {
        DecoderModel<T> model = base;
        append_rows(report.rows, "decode", s, base.config().rank,
                    detail::steady_decode_trace(model, s, warm, token), cm);
        DispatchRecorder rec;
        prefill(model, std::span<const std::size_t>(prefill_tokens), rec);
        append_rows(report.rows, "prefill", s, base.config().rank, rec.events(), cm);
    }

    for (std::size_t r : kSweepRanks) {
        ModelConfig mc = config.model;
        mc.rank = r;
        mc.precision = precision_of<T>();
        DecoderModel<T> model = build_model<T>(mc);
        for (Strategy s : {Strategy::LayerWiseRouted, Strategy::PreGatedFused}) {
            const DispatchTrace trace = detail::steady_decode_trace(model, s, warm, token);
            append_rows(report.rows, "rank_sweep", s, r, trace, cm);
            RankPoint point{s, r, adapter_label(s)};
            point.adapter_ms =
                detail::trace_ms(trace, cm, [&](const DispatchEvent& e) { return e.label == point.adapter_label; });
            point.backbone_ms =
                detail::trace_ms(trace, cm, [](const DispatchEvent& e) { return e.label == labels::kBackbone; });
            for (const DispatchEvent& e : trace) {
                point.adapter_flops += e.label == point.adapter_label ? e.flops : 0;
            }
            report.rank_sweep.push_back(point);
        }
    }
    for (Strategy s : {Strategy::LayerWiseRouted, Strategy::PreGatedFused}) {
        double lo = 0.0;
        double hi = 0.0;
        bool first = true;
        for (const RankPoint& p : report.rank_sweep) {
            if (p.strategy == s) {
                lo = first ? p.adapter_ms : std::min(lo, p.adapter_ms);
                hi = first ? p.adapter_ms : std::max(hi, p.adapter_ms);
                first = false;
            }
        }
        report.rank_spread[std::string(to_string(s))] = (hi - lo) / lo;
    }
    return report;
}

}  // namespace

ProfileReport run_profile(const RunConfig& config) {
    return config.model.precision == Precision::Double ? profile_impl<double>(config)
                                                       : profile_impl<float>(config);
}

nlohmann::ordered_json profile_to_json(const ProfileReport& report) {
    using ojson = nlohmann::ordered_json;
    ojson j;
    j["schema_version"] = kReportSchemaVersion;
    j["command"] = "profile";
    j["timestamp"] = report_timestamp();
    j["seed"] = report.config.model.seed;
    j["config"] = config_to_json(report.config);
    j["prefill_tokens"] = report.prefill_tokens;
    ojson rows = ojson::array();
    for (const ProfileRow& r : report.rows) {
        rows.push_back({{"section", r.section},
                        {"strategy", std::string(to_string(r.strategy))},
                        {"rank", r.rank},
                        {"label", r.label},
                        {"kind", std::string(to_string(r.kind))},
                        {"count", r.count},
                        {"flops", r.flops},
                        {"ms", r.ms}});
    }
    j["breakdown"] = std::move(rows);
    ojson sweep = ojson::array();
    for (const RankPoint& p : report.rank_sweep) {
        sweep.push_back({{"strategy", std::string(to_string(p.strategy))},
                         {"rank", p.rank},
                         {"adapter_label", p.adapter_label},
                         {"adapter_ms", p.adapter_ms},
                         {"adapter_flops", p.adapter_flops},
                         {"backbone_ms", p.backbone_ms}});
    }
    j["rank_sweep"] = std::move(sweep);
    j["rank_spread"] = report.rank_spread;
    return j;
}

std::string profile_to_csv(const ProfileReport& report) {
    std::string out = "schema_version,section,strategy,rank,label,kind,count,flops,ms\n";
    for (const ProfileRow& r : report.rows) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", kReportSchemaVersion, r.section, to_string(r.strategy),
                           r.rank, r.label, to_string(r.kind), r.count, r.flops, r.ms);
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << contents) || !out.flush()) {
        throw InputError("cannot write " + path);
    }
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec || !std::filesystem::is_directory(path)) {
        throw InputError("cannot create output directory " + path);
    }
}

}  // namespace fuselora::harness
