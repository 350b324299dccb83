// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "commands.hpp"
#include "runner.hpp"

namespace fuselora::harness {
namespace {

constexpr std::size_t kNumStrategies = kAllStrategies.size();

// Pairs among the pre-gated strategies, as indices into kAllStrategies.
constexpr std::array<std::pair<std::size_t, std::size_t>, 3> kPairs = {{{2, 3}, {2, 4}, {3, 4}}};

struct PromptOutcome {
    std::array<PromptRecord, kNumStrategies> records;
    std::array<std::map<std::string, double>, kNumStrategies> component_ms;
    std::array<DispatchSummary, kNumStrategies> decode;
    std::array<std::size_t, kNumStrategies> prefill_events{};
    std::array<PairDeviation, kPairs.size()> pairs;
};

template <Real T>
PromptOutcome run_prompt(std::vector<DecoderModel<T>>& models, const Prompt& prompt, std::size_t n_new,
                         const CostModel& cm) {
    PromptOutcome out;
    std::array<GenerateResult<T>, kNumStrategies> results;
    for (std::size_t i = 0; i < kNumStrategies; ++i) {
        const Strategy s = kAllStrategies[i];
        models[i].restore_pristine();
        DispatchRecorder rec;
        results[i] = generate(models[i], std::span<const std::size_t>(prompt), n_new, rec,
                              is_pregated(s) ? Capture::FinalHidden : Capture::None);
        const GenerateResult<T>& g = results[i];
        const DispatchSummary decode = summarize(g.decode_trace);
        const LatencyEstimate est = estimate(g.decode_trace, cm, n_new);
        out.records[i] = {prompt.size(), est.total_ms_per_token, decode.sgmm, decode.gemm_class(),
                          g.backbone_deviation};
        out.component_ms[i] = est.per_component_ms;
        out.decode[i] = decode;
        out.prefill_events[i] = g.prefill_trace.size();
        results[i].decode_trace.clear();
        results[i].prefill_trace.clear();
    }
    for (std::size_t p = 0; p < kPairs.size(); ++p) {
        const auto& a = results[kPairs[p].first];
        const auto& b = results[kPairs[p].second];
        PairDeviation& dev = out.pairs[p];
        dev.a = kAllStrategies[kPairs[p].first];
        dev.b = kAllStrategies[kPairs[p].second];
        for (std::size_t t = 0; t < a.tokens.size(); ++t) {
            dev.token_mismatches += a.tokens[t] != b.tokens[t];
            dev.max_hidden_deviation = std::max(
                dev.max_hidden_deviation,
                max_abs_diff(a.hidden[t][0].template cast<double>(), b.hidden[t][0].template cast<double>()));
        }
    }
    return out;
}

template <Real T>
std::vector<PromptOutcome> run_all(const RunConfig& config, const Workload& workload,
                                   const std::optional<std::string>& checkpoint) {
    const DecoderModel<T> base = detail::make_model<T>(config.model, checkpoint);
    for (const Prompt& p : workload.prompts) {
        for (std::size_t t : p) {
            if (t >= base.config().vocab) {
                throw InputError(fmt::format("workload token {} outside vocabulary of {}", t,
                                             base.config().vocab));
            }
        }
    }
    std::vector<PromptOutcome> outcomes(workload.prompts.size());
    const std::size_t workers = std::min(config.workers, workload.prompts.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    const auto work = [&] {
        try {
            std::vector<DecoderModel<T>> models(kNumStrategies, base);
            for (std::size_t i = 0; i < kNumStrategies; ++i) {
                models[i].set_strategy(kAllStrategies[i]);
            }
            for (std::size_t i = next++; i < workload.prompts.size(); i = next++) {
                outcomes[i] = run_prompt(models, workload.prompts[i], workload.n_new, config.cost);
            }
        } catch (...) {
            const std::lock_guard lock(failure_mutex);
            failure = std::current_exception();
            next = workload.prompts.size();
        }
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
        for (std::thread& t : pool) {
            t.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return outcomes;
}

std::string num(double v) { return fmt::format("{}", v); }

}  // namespace

const StrategyReport& BenchReport::at(Strategy s) const {
    for (const StrategyReport& r : strategies) {
        if (r.strategy == s) {
            return r;
        }
    }
    throw StateError("strategy missing from report");
}

std::string report_timestamp() {
    const char* epoch = std::getenv("SOURCE_DATE_EPOCH");
    std::time_t t = 0;
    if (epoch != nullptr && *epoch != '\0') {
        char* end = nullptr;
        const long long v = std::strtoll(epoch, &end, 10);
        if (*end != '\0' || v < 0) {
            throw InputError("SOURCE_DATE_EPOCH must be a non-negative integer");
        }
        t = static_cast<std::time_t>(v);
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

BenchReport run_bench(const RunConfig& config, const Workload& workload, std::string workload_source,
                      const std::optional<std::string>& checkpoint) {
    if (workload.prompts.empty() || workload.n_new < 1) {
        throw InputError("bench needs at least one prompt and n_new >= 1");
    }
    const Precision precision = checkpoint ? detail::checkpoint_precision(*checkpoint) : config.model.precision;
    const std::vector<PromptOutcome> outcomes = precision == Precision::Double
                                                    ? run_all<double>(config, workload, checkpoint)
                                                    : run_all<float>(config, workload, checkpoint);

    BenchReport report;
    report.config = config;
    report.workload_source = std::move(workload_source);
    report.n_prompts = workload.prompts.size();
    report.n_new = workload.n_new;
    report.equivalence_tolerance = precision == Precision::Double ? 1e-9 : 1e-3;
    report.timestamp = report_timestamp();

    const double prompts = static_cast<double>(outcomes.size());
    const double tokens = prompts * static_cast<double>(workload.n_new);
    for (std::size_t i = 0; i < kNumStrategies; ++i) {
        StrategyReport r;
        r.strategy = kAllStrategies[i];
        DispatchSummary decode;
        std::size_t prefill_events = 0;
        for (std::string_view label : labels::kAll) {
            r.per_component_ms[std::string(label)] = 0.0;
        }
        for (const PromptOutcome& o : outcomes) {
            r.prompts.push_back(o.records[i]);
            decode.gemm += o.decode[i].gemm;
            decode.sgmm += o.decode[i].sgmm;
            decode.elementwise += o.decode[i].elementwise;
            decode.reduce += o.decode[i].reduce;
            prefill_events += o.prefill_events[i];
            for (const auto& [label, ms] : o.component_ms[i]) {
                r.per_component_ms[label] += ms;
            }
            r.max_backbone_deviation = std::max(r.max_backbone_deviation, o.records[i].backbone_deviation);
        }
        for (DispatchKind kind : kAllDispatchKinds) {
            r.dispatches_per_token[std::string(to_string(kind))] = static_cast<double>(decode.count(kind)) / tokens;
        }
        r.gemm_class_per_token = static_cast<double>(decode.gemm_class()) / tokens;
        r.prefill_dispatches_per_prompt = static_cast<double>(prefill_events) / prompts;
        for (auto& [label, ms] : r.per_component_ms) {
            ms /= prompts;
            r.decode_ms_per_token += ms;
        }
        report.strategies.push_back(std::move(r));
    }
    const double base_ms = report.strategies.front().decode_ms_per_token;
    for (StrategyReport& r : report.strategies) {
        r.overhead_vs_base_pct = 100.0 * (r.decode_ms_per_token - base_ms) / base_ms;
    }
    for (std::size_t p = 0; p < kPairs.size(); ++p) {
        PairDeviation total = outcomes.front().pairs[p];
        total.max_hidden_deviation = 0.0;
        total.token_mismatches = 0;
        for (const PromptOutcome& o : outcomes) {
            total.max_hidden_deviation = std::max(total.max_hidden_deviation, o.pairs[p].max_hidden_deviation);
            total.token_mismatches += o.pairs[p].token_mismatches;
        }
        report.equivalence.push_back(total);
    }
    return report;
}

nlohmann::ordered_json bench_to_json(const BenchReport& report) {
    using ojson = nlohmann::ordered_json;
    ojson j;
    j["schema_version"] = kReportSchemaVersion;
    j["command"] = "bench";
    j["timestamp"] = report.timestamp;
    j["seed"] = report.config.model.seed;
    j["config"] = config_to_json(report.config);
    j["config"].erase("workers");
    j["workload"] = {{"source", report.workload_source}, {"prompts", report.n_prompts}, {"n_new", report.n_new}};

    ojson strategies = ojson::array();
    for (const StrategyReport& r : report.strategies) {
        ojson s;
        s["name"] = std::string(to_string(r.strategy));
        s["decode_ms_per_token"] = r.decode_ms_per_token;
        s["overhead_vs_base_pct"] = r.overhead_vs_base_pct;
        s["dispatches_per_token"] = r.dispatches_per_token;
        s["dispatches_per_token"]["gemm_class"] = r.gemm_class_per_token;
        s["prefill_dispatches_per_prompt"] = r.prefill_dispatches_per_prompt;
        s["per_component_ms"] = r.per_component_ms;
        s["max_backbone_deviation"] = r.max_backbone_deviation;
        ojson per_prompt = ojson::array();
        for (std::size_t i = 0; i < r.prompts.size(); ++i) {
            const PromptRecord& p = r.prompts[i];
            per_prompt.push_back({{"index", i},
                                  {"prompt_tokens", p.prompt_tokens},
                                  {"decode_ms_per_token", p.decode_ms_per_token},
                                  {"sgmm_events", p.sgmm_events},
                                  {"gemm_class_events", p.gemm_class_events},
                                  {"backbone_deviation", p.backbone_deviation}});
        }
        s["per_prompt"] = std::move(per_prompt);
        strategies.push_back(std::move(s));
    }
    j["strategies"] = std::move(strategies);

    ojson pairs = ojson::array();
    bool pass = true;
    for (const PairDeviation& p : report.equivalence) {
        pairs.push_back({{"a", std::string(to_string(p.a))},
                         {"b", std::string(to_string(p.b))},
                         {"max_hidden_deviation", p.max_hidden_deviation},
                         {"token_mismatches", p.token_mismatches}});
        pass = pass && p.token_mismatches == 0 && p.max_hidden_deviation < report.equivalence_tolerance;
    }
    j["equivalence"] = {{"tolerance", report.equivalence_tolerance}, {"pass", pass}, {"pairs", std::move(pairs)}};

    const double fused = report.at(Strategy::PreGatedFused).decode_ms_per_token;
    j["summary"] = {
        {"layerwise_over_fused_ratio", report.at(Strategy::LayerWiseRouted).decode_ms_per_token / fused},
        {"fused_overhead_pct", report.at(Strategy::PreGatedFused).overhead_vs_base_pct},
        {"simple_merge_overhead_pct", report.at(Strategy::PreGatedSimpleMerge).overhead_vs_base_pct},
        {"layerwise_overhead_pct", report.at(Strategy::LayerWiseRouted).overhead_vs_base_pct}};
    return j;
}

std::string bench_to_csv(const BenchReport& report) {
    std::string out =
        "schema_version,strategy,prompts,n_new,gemm_per_token,sgmm_per_token,elementwise_per_token,"
        "reduce_per_token,gemm_class_per_token,decode_ms_per_token,overhead_vs_base_pct,adapter_ms,"
        "backbone_ms,other_ms,router_ms,switch_ms,max_backbone_deviation\n";
    for (const StrategyReport& r : report.strategies) {
        out += fmt::format("{},{},{},{}", kReportSchemaVersion, to_string(r.strategy), report.n_prompts,
                           report.n_new);
        for (DispatchKind kind : kAllDispatchKinds) {
            out += "," + num(r.dispatches_per_token.at(std::string(to_string(kind))));
        }
        out += "," + num(r.gemm_class_per_token);
        out += "," + num(r.decode_ms_per_token);
        out += "," + num(r.overhead_vs_base_pct);
        for (std::string_view label : labels::kAll) {
            out += "," + num(r.per_component_ms.at(std::string(label)));
        }
        out += "," + num(r.max_backbone_deviation) + "\n";
    }
    return out;
}

}  // namespace fuselora::harness
