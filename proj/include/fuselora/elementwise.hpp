// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

#include "fuselora/dispatch.hpp"
#include "fuselora/error.hpp"
#include "fuselora/matrix.hpp"

namespace fuselora {

/// out[i] = fn(i) for every i, as one dispatch.
template <Real T, typename Fn>
void elementwise(std::span<T> out, Fn&& fn, std::uint64_t flops_per_elem, std::uint64_t bytes,
                 DispatchRecorder& recorder) {
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = fn(i);
    }
    recorder.record(DispatchKind::Elementwise, flops_per_elem * out.size(), bytes);
}

/// Exact GELU, x * Phi(x).
template <Real T>
T gelu(T x) noexcept {
    return T{0.5} * x * (T{1} + std::erf(x * static_cast<T>(1.0 / std::numbers::sqrt2)));
}

/// Index of the largest entry, lowest index on ties. One reduce dispatch.
template <Real T>
std::size_t argmax(std::span<const T> values, DispatchRecorder& recorder) {
    if (values.empty()) {
        throw DimensionError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    recorder.record(DispatchKind::Reduce, values.size(), sizeof(T) * values.size());
    return best;
}

}  // namespace fuselora
