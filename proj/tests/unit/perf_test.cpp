// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "fuselora/model.hpp"
#include "fuselora/perf.hpp"

namespace fuselora {
namespace {

DispatchEvent event(DispatchKind kind, std::uint64_t flops, const char* label) {
    return DispatchEvent{kind, flops, 0, label};
}

ModelConfig decode_config(std::size_t L, std::size_t r = 4) {
    ModelConfig c;
    c.layers = L;
    c.rank = r;
    return c;
}

DispatchTrace decode_trace(Strategy s, const ModelConfig& config) {
    auto m = build_model<double>(config);
    m.set_strategy(s);
    DispatchRecorder rec;
    DecodeState<double> state;
    decode_step(m, state, 1, rec);
    const DecodeResult step = decode_step(m, state, 2, rec);
    DispatchTrace out = rec.events_since(step.first_event);
    release_fusion(m, rec);
    return out;
}

double cost_of(const DispatchTrace& t, const CostModel& cm = {}) {
    return estimate(t, cm, 1).total_ms_per_token;
}

TEST(Estimate, EmptyTraceIsZero) {
    const LatencyEstimate e = estimate({}, CostModel{}, 1);
    EXPECT_EQ(e.total_ms_per_token, 0.0);
    EXPECT_TRUE(e.per_component_ms.empty());
    EXPECT_EQ(e.dispatch_counts.at("gemm"), 0u);
}

TEST(Estimate, IdenticalEventsAreLinear) {
    const CostModel cm;
    const DispatchEvent e = event(DispatchKind::Gemm, 4096, "backbone");
    for (std::size_t n : {1u, 7u, 100u}) {
        const DispatchTrace t(n, e);
        EXPECT_DOUBLE_EQ(estimate(t, cm, 1).total_ms_per_token, n * cm.event_s(e) * 1e3);
    }
    EXPECT_DOUBLE_EQ(estimate(DispatchTrace(10, e), cm, 5).total_ms_per_token,
                     2 * cm.event_s(e) * 1e3);
}

TEST(Estimate, ComponentsSumToTotal) {
    const DispatchTrace t = decode_trace(Strategy::LayerWiseRouted, decode_config(8));
    const LatencyEstimate e = estimate(t, CostModel{}, 3);
    double sum = 0.0;
    for (const auto& [label, ms] : e.per_component_ms) {
        sum += ms;
    }
    EXPECT_NEAR(sum, e.total_ms_per_token, 1e-9);
}

TEST(Estimate, AdaptersOutweighBackboneInOneLayer) {
    CostModel cm;
    cm.launch_s = 0.01e-3;
    const DispatchTrace t{event(DispatchKind::Gemm, 2 * 64 * 64, "backbone"),
                          event(DispatchKind::Gemm, 2 * 8 * 64, "adapter"),
                          event(DispatchKind::Gemm, 2 * 4 * 64, "adapter"),
                          event(DispatchKind::Gemm, 2 * 4 * 64, "adapter"),
                          event(DispatchKind::Gemm, 2 * 4 * 64, "adapter"),
                          event(DispatchKind::Gemm, 2 * 4 * 64, "adapter")};
    const LatencyEstimate e = estimate(t, cm, 1);
    EXPECT_GT(e.per_component_ms.at("adapter"), e.per_component_ms.at("backbone"));
}

TEST(Estimate, InvalidArgumentsThrow) {
    EXPECT_THROW(estimate({}, CostModel{}, 0), ParameterError);
    CostModel bad;
    bad.launch_s = 0.0;
    EXPECT_THROW(estimate({}, bad, 1), ParameterError);
}

TEST(EstimateProperty, StrictlyMonotoneInLaunchCost) {
    const DispatchTrace t = decode_trace(Strategy::PreGatedFused, decode_config(4));
    double prev = 0.0;
    for (double launch : {1e-6, 2e-6, 5e-6, 10e-6, 50e-6}) {
        CostModel cm;
        cm.launch_s = launch;
        const double ms = cost_of(t, cm);
        EXPECT_GT(ms, prev);
        prev = ms;
    }
}

TEST(EstimateProperty, OrderingFollowsDispatchCounts) {
    std::map<Strategy, double> ms;
    for (Strategy s : kAllStrategies) {
        ms[s] = cost_of(decode_trace(s, decode_config(8)));
    }
    EXPECT_LT(ms[Strategy::Base], ms[Strategy::PreGatedFused]);
    EXPECT_LT(ms[Strategy::PreGatedFused], ms[Strategy::PreGatedSimpleMerge]);
    EXPECT_LT(ms[Strategy::PreGatedSimpleMerge], ms[Strategy::LayerWiseRouted]);
    EXPECT_GE(ms[Strategy::LayerWiseRouted] / ms[Strategy::PreGatedFused], 2.4);
}

TEST(EstimateProperty, LaunchDominatesDeskScaleEvents) {
    for (double launch : {5e-6, 10e-6, 20e-6}) {
        CostModel cm;
        cm.launch_s = launch;
        for (Strategy s : kAllStrategies) {
            for (const DispatchEvent& e : decode_trace(s, decode_config(8))) {
                EXPECT_LT(cm.compute_s(e) / cm.event_s(e), 0.10) << e.label;
            }
        }
    }
}

std::vector<CalibrationSample> samples_from(const CostModel& truth) {
    std::vector<CalibrationSample> out;
    for (Strategy s : {Strategy::Base, Strategy::LayerWiseRouted}) {
        DispatchTrace t = decode_trace(s, decode_config(8, 16));
        const double seconds = estimate(t, truth, 1).total_ms_per_token * 1e-3;
        out.push_back({std::move(t), seconds});
    }
    return out;
}

TEST(Calibrate, RecoversKnownModel) {
    CostModel truth;
    truth.launch_s = 7e-6;
    truth.flops_per_s = 3e9;
    const Calibration fit = calibrate(samples_from(truth));
    EXPECT_NEAR(fit.model.launch_s / truth.launch_s, 1.0, 1e-6);
    EXPECT_NEAR(fit.model.flops_per_s / truth.flops_per_s, 1.0, 1e-6);
    for (double r : fit.residuals_s) {
        EXPECT_LT(std::abs(r), 1e-12);
    }
}

TEST(Calibrate, SingleSampleIsCalibrationError) {
    auto samples = samples_from(CostModel{});
    samples.pop_back();
    EXPECT_THROW(calibrate(samples), CalibrationError);
}

TEST(Calibrate, ZeroFlopsNamesThroughput) {
    const std::vector<CalibrationSample> samples{
        {DispatchTrace(3, event(DispatchKind::Gemm, 0, "other")), 3e-5},
        {DispatchTrace(5, event(DispatchKind::Gemm, 0, "other")), 5e-5}};
    try {
        calibrate(samples);
        FAIL() << "expected CalibrationError";
    } catch (const CalibrationError& e) {
        EXPECT_NE(std::string(e.what()).find("flops_per_s"), std::string::npos);
    }
}

TEST(Calibrate, ProportionalMixesAreDegenerate) {
    const DispatchEvent e = event(DispatchKind::Gemm, 1000, "other");
    const std::vector<CalibrationSample> samples{{DispatchTrace(2, e), 2e-5}, {DispatchTrace(4, e), 4e-5}};
    EXPECT_THROW(calibrate(samples), CalibrationError);
}

std::map<std::pair<std::string, DispatchKind>, std::uint64_t> counts(const DispatchTrace& t) {
    std::map<std::pair<std::string, DispatchKind>, std::uint64_t> out;
    for (const BreakdownRow& row : breakdown(t)) {
        out[{row.label, row.kind}] = row.count;
    }
    return out;
}

TEST(Breakdown, FusedDecodeStep) {
    auto c = counts(decode_trace(Strategy::PreGatedFused, decode_config(8)));
    EXPECT_EQ((c[{"router", DispatchKind::Gemm}]), 1u);
    EXPECT_EQ((c[{"switch", DispatchKind::Sgmm}]), 1u);
    EXPECT_EQ((c[{"backbone", DispatchKind::Gemm}]), 8u);
    EXPECT_EQ((c[{"other", DispatchKind::Gemm}]), 1u);
    EXPECT_EQ((c[{"adapter", DispatchKind::Gemm}]), 0u);
}

TEST(Breakdown, LayerWiseAdapterGemmsPerLayer) {
    auto c = counts(decode_trace(Strategy::LayerWiseRouted, decode_config(8)));
    EXPECT_EQ((c[{"adapter", DispatchKind::Gemm}]), 4u * 8u);
}

TEST(Breakdown, SortedAndEmpty) {
    EXPECT_TRUE(breakdown({}).empty());
    const auto rows = breakdown(decode_trace(Strategy::PreGatedNaive, decode_config(4)));
    EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.label, a.kind) < std::tie(b.label, b.kind);
    }));
}

TEST(RankSweep, AdapterLatencyTracksLaunchesNotRank) {
    std::vector<double> ms;
    std::vector<std::uint64_t> flops;
    for (std::size_t r : {2u, 4u, 8u, 16u}) {
        const DispatchTrace t = decode_trace(Strategy::LayerWiseRouted, decode_config(8, r));
        const LatencyEstimate e = estimate(t, CostModel{}, 1);
        ms.push_back(e.per_component_ms.at("adapter"));
        EXPECT_GT(e.per_component_ms.at("adapter"), e.per_component_ms.at("backbone"));
        std::uint64_t f = 0;
        for (const auto& ev : t) {
            f += ev.label == "adapter" ? ev.flops : 0;
        }
        flops.push_back(f);
    }
    const auto [lo, hi] = std::minmax_element(ms.begin(), ms.end());
    EXPECT_LT((*hi - *lo) / *lo, 0.15);
    EXPECT_EQ(flops[1], 2 * flops[0]);
    EXPECT_EQ(flops[3], 8 * flops[0]);
}

}  // namespace
}  // namespace fuselora
