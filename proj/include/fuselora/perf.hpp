// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fuselora/dispatch.hpp"
#include "fuselora/error.hpp"

namespace fuselora {

using DispatchTrace = std::vector<DispatchEvent>;

// Latency of one dispatch = fixed launch cost + the slower of its compute and
// memory time. The defaults are modeling constants, not measurements.
struct CostModel {
    double launch_s = 10e-6;
    double flops_per_s = 10e12;
    double bytes_per_s = 1e30;

    void validate() const {
        if (!(launch_s > 0.0) || !(flops_per_s > 0.0) || !(bytes_per_s > 0.0)) {
            throw ParameterError("cost model parameters must be strictly positive");
        }
    }

    double compute_s(const DispatchEvent& e) const noexcept {
        return std::max(static_cast<double>(e.flops) / flops_per_s,
                        static_cast<double>(e.bytes_touched) / bytes_per_s);
    }

    double event_s(const DispatchEvent& e) const noexcept { return launch_s + compute_s(e); }

    friend bool operator==(const CostModel&, const CostModel&) = default;
};

struct LatencyEstimate {
    double total_ms_per_token = 0.0;
    std::map<std::string, double> per_component_ms;
    /// Total dispatches per kind over the whole trace (not per token).
    std::map<std::string, std::uint64_t> dispatch_counts;
};

/// Prices every event and averages over n_tokens. The total is the sum of the
/// per-component figures.
inline LatencyEstimate estimate(const DispatchTrace& trace, const CostModel& cm,
                                std::size_t n_tokens) {
    if (n_tokens < 1) {
        throw ParameterError("n_tokens must be >= 1");
    }
    cm.validate();
    LatencyEstimate out;
    for (DispatchKind kind : kAllDispatchKinds) {
        out.dispatch_counts[std::string(to_string(kind))] = 0;
    }
    std::map<std::string, double> seconds;
    for (const DispatchEvent& e : trace) {
        seconds[e.label] += cm.event_s(e);
        ++out.dispatch_counts[std::string(to_string(e.kind))];
    }
    const double scale = 1e3 / static_cast<double>(n_tokens);
    for (const auto& [label, s] : seconds) {
        const double ms = s * scale;
        out.per_component_ms[label] = ms;
        out.total_ms_per_token += ms;
    }
    return out;
}

struct CalibrationSample {
    DispatchTrace trace;
    double measured_s = 0.0;
};

struct Calibration {
    CostModel model;
    std::vector<double> residuals_s;  // measured - estimated, per sample
};

// Least-squares fit of launch cost and flop throughput to measured trace
// latencies: measured ~ launch_s * events + flops / flops_per_s. Bandwidth is
// not fitted and stays at its (effectively infinite) default.
inline Calibration calibrate(const std::vector<CalibrationSample>& samples) {
    if (samples.size() < 2) {
        throw CalibrationError("calibration needs at least 2 samples, got " +
                               std::to_string(samples.size()));
    }
    const std::size_t n = samples.size();
    std::vector<double> events(n);
    std::vector<double> flops(n);
    for (std::size_t i = 0; i < n; ++i) {
        events[i] = static_cast<double>(samples[i].trace.size());
        double f = 0.0;
        for (const DispatchEvent& e : samples[i].trace) {
            f += static_cast<double>(e.flops);
        }
        flops[i] = f;
    }
    auto norm = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) {
            s += x * x;
        }
        return std::sqrt(s);
    };
    const double ne = norm(events);
    const double nf = norm(flops);
    if (nf == 0.0) {
        throw CalibrationError("flops_per_s is unidentifiable: every sample has zero flops");
    }
    if (ne == 0.0) {
        throw CalibrationError("launch_s is unidentifiable: every sample is an empty trace");
    }

    // Normal equations on unit-norm columns.
    double g11 = 1.0;
    double g22 = 1.0;
    double g12 = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = events[i] / ne;
        const double b = flops[i] / nf;
        g12 += a * b;
        r1 += a * samples[i].measured_s;
        r2 += b * samples[i].measured_s;
    }
    const double det = g11 * g22 - g12 * g12;
    if (det <= 1e-12) {
        throw CalibrationError(
            "degenerate calibration set: samples have proportional dispatch/flop mixes");
    }
    const double launch = (r1 * g22 - r2 * g12) / det / ne;
    const double inv_throughput = (r2 * g11 - r1 * g12) / det / nf;
    if (!(launch > 0.0) || !(inv_throughput > 0.0)) {
        throw CalibrationError("fit produced non-positive parameters (launch_s=" +
                               std::to_string(launch) +
                               ", s_per_flop=" + std::to_string(inv_throughput) + ")");
    }

    Calibration out;
    out.model.launch_s = launch;
    out.model.flops_per_s = 1.0 / inv_throughput;
    out.residuals_s.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.residuals_s.push_back(samples[i].measured_s - (launch * events[i] + flops[i] * inv_throughput));
    }
    return out;
}

struct BreakdownRow {
    std::string label;
    DispatchKind kind = DispatchKind::Gemm;
    std::uint64_t count = 0;
    std::uint64_t flops = 0;

    friend bool operator==(const BreakdownRow&, const BreakdownRow&) = default;
};

/// Event counts and flops per (label, kind), sorted by label then kind.
inline std::vector<BreakdownRow> breakdown(const DispatchTrace& trace) {
    std::map<std::pair<std::string, DispatchKind>, BreakdownRow> rows;
    for (const DispatchEvent& e : trace) {
        BreakdownRow& row = rows[{e.label, e.kind}];
        row.label = e.label;
        row.kind = e.kind;
        ++row.count;
        row.flops += e.flops;
    }
    std::vector<BreakdownRow> out;
    out.reserve(rows.size());
    for (auto& [key, row] : rows) {
        out.push_back(std::move(row));
    }
    return out;
}

}  // namespace fuselora
