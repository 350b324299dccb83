// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fuselora/dispatch.hpp"
#include "fuselora/elementwise.hpp"
#include "fuselora/error.hpp"
#include "fuselora/gemm.hpp"
#include "fuselora/matrix.hpp"

namespace fuselora {

/// Router weight, one row per expert (N x d).
template <Real T>
struct RouterParams {
    Matrix<T> w_g;

    std::size_t num_experts() const noexcept { return w_g.rows(); }
    std::size_t width() const noexcept { return w_g.cols(); }

    friend bool operator==(const RouterParams&, const RouterParams&) = default;
};

/// Selected experts ordered by descending logit (ties: lower index first) and
/// their renormalized softmax weights.
struct GateDecision {
    std::vector<std::size_t> expert_ids;
    std::vector<double> weights;

    std::size_t k() const noexcept { return expert_ids.size(); }
    bool empty() const noexcept { return expert_ids.empty(); }

    friend bool operator==(const GateDecision&, const GateDecision&) = default;
};

/// Softmax(TopK(w_g * x)): one gemm for the logits, one elementwise dispatch for
/// the masked softmax. Non-selected logits are masked to -inf, so the selected
/// weights are the softmax renormalized over the top k.
template <Real T>
GateDecision route(const RouterParams<T>& router, const Matrix<T>& x, std::size_t k,
                   DispatchRecorder& recorder) {
    const std::size_t n = router.num_experts();
    if (n == 0) {
        throw ParameterError("router has no experts");
    }
    if (k < 1 || k > n) {
        throw ParameterError("top-k " + std::to_string(k) + " outside [1, " + std::to_string(n) +
                             "]");
    }
    if (x.rows() != router.width() || x.cols() != 1) {
        throw DimensionError("router input " + shape_string(x) + ", expected " +
                             shape_string(router.width(), 1));
    }

    const Matrix<T> logits = gemm(router.w_g, x, recorder);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return logits(a, 0) > logits(b, 0);
    });
    order.resize(k);

    std::vector<bool> selected(n, false);
    for (std::size_t id : order) {
        selected[id] = true;
    }
    const double top = static_cast<double>(logits(order.front(), 0));
    double denom = 0.0;
    for (std::size_t id : order) {
        denom += std::exp(static_cast<double>(logits(id, 0)) - top);
    }

    std::vector<double> probs(n, 0.0);
    elementwise<double>(
        probs,
        [&](std::size_t i) {
            return selected[i] ? std::exp(static_cast<double>(logits(i, 0)) - top) / denom : 0.0;
        },
        4, sizeof(T) * n + sizeof(double) * n, recorder);

    GateDecision gate;
    gate.expert_ids = order;
    gate.weights.reserve(k);
    for (std::size_t id : order) {
        // Keep weights strictly positive when a huge logit gap underflows exp().
        gate.weights.push_back(std::max(probs[id], std::numeric_limits<double>::min()));
    }
    return gate;
}

/// Routes once on the token's input to the first expanded layer. Callers on
/// pre-gated paths reuse the returned decision for every layer.
template <Real T>
GateDecision pre_gate(const RouterParams<T>& router, const Matrix<T>& x_first, std::size_t k,
                      DispatchRecorder& recorder) {
    return route(router, x_first, k, recorder);
}

}  // namespace fuselora
