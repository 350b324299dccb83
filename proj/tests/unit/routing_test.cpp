// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fuselora/routing.hpp"
#include "oracles.hpp"

namespace fuselora {
namespace {

using testing::random_matrix;

double weight_sum(const GateDecision& g) {
    return std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
}

TEST(Route, WorkedExample) {
    const RouterParams<double> router{Matrix<double>{{1, 0}, {0, 1}, {0, 0}}};
    DispatchRecorder rec;
    const GateDecision g = route(router, Matrix<double>::column({2, 1}), 2, rec);
    ASSERT_EQ(g.expert_ids, (std::vector<std::size_t>{0, 1}));
    // softmax over the selected logits {2, 1}
    const double w0 = 1.0 / (1.0 + std::exp(-1.0));
    EXPECT_NEAR(g.weights[0], w0, 1e-15);
    EXPECT_NEAR(g.weights[1], 1.0 - w0, 1e-15);
    EXPECT_NEAR(g.weights[0], 0.73106, 1e-5);
    EXPECT_NEAR(g.weights[1], 0.26894, 1e-5);

    const DispatchSummary s = rec.summary();
    EXPECT_EQ(s.gemm, 1u);
    EXPECT_EQ(s.elementwise, 1u);
}

TEST(Route, ZeroInputTiesBreakByIndex) {
    std::mt19937_64 gen(1);
    const RouterParams<double> router{random_matrix<double>(gen, 5, 3)};
    DispatchRecorder rec;
    const GateDecision g = route(router, Matrix<double>(3, 1), 2, rec);
    EXPECT_EQ(g.expert_ids, (std::vector<std::size_t>{0, 1}));
    EXPECT_DOUBLE_EQ(g.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(g.weights[1], 0.5);
}

TEST(Route, KEqualsNIsFullSoftmax) {
    std::mt19937_64 gen(2);
    const RouterParams<double> router{random_matrix<double>(gen, 4, 6)};
    const auto x = random_matrix<double>(gen, 6, 1);
    DispatchRecorder rec;
    const GateDecision g = route(router, x, 4, rec);

    std::vector<double> logits(4, 0.0);
    for (std::size_t e = 0; e < 4; ++e) {
        for (std::size_t j = 0; j < 6; ++j) {
            logits[e] += router.w_g(e, j) * x(j, 0);
        }
    }
    double z = 0.0;
    for (double l : logits) {
        z += std::exp(l);
    }
    for (std::size_t b = 0; b < 4; ++b) {
        EXPECT_NEAR(g.weights[b], std::exp(logits[g.expert_ids[b]]) / z, 1e-14);
    }
    EXPECT_TRUE(std::is_sorted(g.expert_ids.begin(), g.expert_ids.end(), [&](auto a, auto b) {
        return logits[a] > logits[b];
    }));
}

TEST(Route, KOutOfRangeIsParameterError) {
    const RouterParams<double> router{Matrix<double>(3, 2)};
    DispatchRecorder rec;
    EXPECT_THROW(route(router, Matrix<double>(2, 1), 0, rec), ParameterError);
    EXPECT_THROW(route(router, Matrix<double>(2, 1), 4, rec), ParameterError);
}

TEST(Route, WrongInputLengthIsDimensionError) {
    const RouterParams<double> router{Matrix<double>(3, 2)};
    DispatchRecorder rec;
    EXPECT_THROW(route(router, Matrix<double>(3, 1), 1, rec), DimensionError);
}

TEST(Route, HugeLogitGapKeepsWeightsPositive) {
    const RouterParams<double> router{Matrix<double>{{1000}, {-1000}}};
    DispatchRecorder rec;
    const GateDecision g = route(router, Matrix<double>::column({1}), 2, rec);
    EXPECT_GT(g.weights[1], 0.0);
    EXPECT_NEAR(weight_sum(g), 1.0, 1e-12);
}

TEST(PreGate, SingleExpertIsAlwaysWeightOne) {
    std::mt19937_64 gen(3);
    const RouterParams<double> router{random_matrix<double>(gen, 1, 4)};
    DispatchRecorder rec;
    for (int t = 0; t < 10; ++t) {
        const GateDecision g = pre_gate(router, random_matrix<double>(gen, 4, 1), 1, rec);
        EXPECT_EQ(g.expert_ids, std::vector<std::size_t>{0});
        EXPECT_EQ(g.weights, std::vector<double>{1.0});
    }
}

TEST(PreGate, Deterministic) {
    std::mt19937_64 gen(4);
    const RouterParams<double> router{random_matrix<double>(gen, 8, 16)};
    const auto x = random_matrix<double>(gen, 16, 1);
    DispatchRecorder rec;
    EXPECT_EQ(pre_gate(router, x, 2, rec), pre_gate(router, x, 2, rec));
}

// Property: weights are a distribution over the selected experts.
TEST(RouteProperty, WeightsSumToOneAndLieInUnitInterval) {
    std::mt19937_64 gen(5);
    std::uniform_int_distribution<std::size_t> nd(1, 16);
    std::uniform_real_distribution<double> scale(0.01, 50.0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = nd(gen);
        const std::size_t d = nd(gen);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(gen);
        const RouterParams<double> router{random_matrix<double>(gen, n, d)};
        const auto x = testing::naive_scale(random_matrix<double>(gen, d, 1), scale(gen));
        DispatchRecorder rec;
        const GateDecision g = route(router, x, k, rec);
        ASSERT_EQ(g.k(), k);
        EXPECT_NEAR(weight_sum(g), 1.0, 1e-12);
        for (double w : g.weights) {
            EXPECT_GT(w, 0.0);
            EXPECT_LE(w, 1.0);
        }
        std::vector<std::size_t> ids = g.expert_ids;
        std::sort(ids.begin(), ids.end());
        EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
    }
}

TEST(RouteProperty, SelectionInvariantUnderPositiveScaling) {
    std::mt19937_64 gen(6);
    std::uniform_real_distribution<double> scale(0.05, 20.0);
    for (int trial = 0; trial < 200; ++trial) {
        const RouterParams<double> router{random_matrix<double>(gen, 8, 12)};
        const auto x = random_matrix<double>(gen, 12, 1);
        DispatchRecorder rec;
        const GateDecision a = route(router, x, 2, rec);
        const GateDecision b = route(router, testing::naive_scale(x, scale(gen)), 2, rec);
        EXPECT_EQ(a.expert_ids, b.expert_ids);
    }
}

TEST(RouteProperty, RowPermutationPermutesIds) {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 6, d = 5;
        const auto w = random_matrix<double>(gen, n, d);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), gen);
        // permuted row i holds original row perm[i]
        Matrix<double> pw(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                pw(i, j) = w(perm[i], j);
            }
        }
        const auto x = random_matrix<double>(gen, d, 1);
        DispatchRecorder rec;
        const GateDecision a = route(RouterParams<double>{w}, x, 3, rec);
        const GateDecision b = route(RouterParams<double>{pw}, x, 3, rec);
        ASSERT_EQ(a.k(), b.k());
        for (std::size_t s = 0; s < a.k(); ++s) {
            EXPECT_EQ(perm[b.expert_ids[s]], a.expert_ids[s]);
            EXPECT_EQ(a.weights[s], b.weights[s]);
        }
    }
}

}  // namespace
}  // namespace fuselora
