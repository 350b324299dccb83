// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <random>
#include <vector>

#include "fuselora/adapters.hpp"
#include "oracles.hpp"

namespace fuselora {
namespace {

using testing::naive_add;
using testing::naive_product;
using testing::naive_scale;
using testing::random_matrix;

LoraExpert<double> random_expert(std::mt19937_64& gen, std::size_t r, std::size_t d_in,
                                 std::size_t d_out) {
    return {random_matrix<double>(gen, r, d_in), random_matrix<double>(gen, d_out, r)};
}

/// sum_i g_i * up_i * down_i over a gate decision.
Matrix<double> gated_delta(const std::vector<LoraExpert<double>>& layer, const GateDecision& g,
                           std::size_t d_out, std::size_t d_in) {
    Matrix<double> delta(d_out, d_in);
    for (std::size_t b = 0; b < g.k(); ++b) {
        const auto& e = layer[g.expert_ids[b]];
        delta = naive_add(delta, naive_product(e.up, e.down), g.weights[b]);
    }
    return delta;
}

TEST(ExpertApply, ZeroGateGivesZeroVector) {
    std::mt19937_64 gen(1);
    const auto e = random_expert(gen, 3, 5, 4);
    DispatchRecorder rec;
    const auto y = expert_apply(e, random_matrix<double>(gen, 5, 1), 0.0, rec);
    EXPECT_EQ(max_abs(y), 0.0);
    EXPECT_EQ(rec.summary().gemm, 2u);
}

TEST(ExpertApply, HandComputed) {
    const LoraExpert<double> e{Matrix<double>{{1, 0}}, Matrix<double>{{2}, {0}}};
    DispatchRecorder rec;
    const auto y = expert_apply(e, Matrix<double>::column({3, 9}), 1.0, rec);
    EXPECT_EQ(y, Matrix<double>::column({6, 0}));
    EXPECT_EQ(rec.size(), 2u);
}

TEST(ExpertApply, MatchesNaiveMatvec) {
    std::mt19937_64 gen(2);
    const auto e = random_expert(gen, 4, 16, 16);
    const auto x = random_matrix<double>(gen, 16, 1);
    DispatchRecorder rec;
    const auto y = expert_apply(e, x, 0.5, rec);
    const auto oracle = naive_scale(naive_product(e.up, naive_product(e.down, x)), 0.5);
    EXPECT_LE(max_abs_diff(y, oracle), 1e-12);
}

TEST(ExpertApply, LengthMismatchThrows) {
    std::mt19937_64 gen(3);
    const auto e = random_expert(gen, 2, 4, 4);
    DispatchRecorder rec;
    EXPECT_THROW(expert_apply(e, Matrix<double>(5, 1), 1.0, rec), DimensionError);
}

TEST(ConcatGated, SingleUnscaledExpertIsIdentity) {
    std::mt19937_64 gen(4);
    const std::vector<LoraExpert<double>> layer{random_expert(gen, 3, 6, 5)};
    const auto c = concat_gated<double>(layer, GateDecision{{0}, {1.0}});
    EXPECT_EQ(c.down_cat, layer[0].down);
    EXPECT_EQ(c.up_cat, layer[0].up);
    ASSERT_EQ(c.provenance.size(), 1u);
    EXPECT_EQ(c.provenance[0].sign, Sign::Plus);
}

TEST(ConcatGated, ShapesAndBlockOrder) {
    std::mt19937_64 gen(5);
    std::vector<LoraExpert<double>> layer;
    for (int i = 0; i < 4; ++i) {
        layer.push_back(random_expert(gen, 2, 3, 7));
    }
    const GateDecision g{{3, 1}, {0.6, 0.4}};
    const auto c = concat_gated<double>(layer, g);
    EXPECT_EQ(c.down_cat.rows(), 4u);
    EXPECT_EQ(c.down_cat.cols(), 3u);
    EXPECT_EQ(c.up_cat.rows(), 7u);
    EXPECT_EQ(c.up_cat.cols(), 4u);
    EXPECT_EQ(c.rank(), 4u);
    // block 0 is expert 3, block 1 is expert 1
    EXPECT_EQ(c.up_cat(5, 0), layer[3].up(5, 0));
    EXPECT_EQ(c.up_cat(5, 3), layer[1].up(5, 1));
    EXPECT_DOUBLE_EQ(c.down_cat(1, 2), 0.6 * layer[3].down(1, 2));
    EXPECT_DOUBLE_EQ(c.down_cat(2, 0), 0.4 * layer[1].down(0, 0));
    ASSERT_EQ(c.provenance.size(), 2u);
    EXPECT_EQ(c.provenance[0].expert_id, 3u);
    EXPECT_EQ(c.provenance[1].expert_id, 1u);
}

TEST(ConcatGated, ProductEqualsWeightedExpertSum) {
    std::mt19937_64 gen(6);
    std::vector<LoraExpert<double>> layer;
    for (int i = 0; i < 3; ++i) {
        layer.push_back(random_expert(gen, 4, 9, 11));
    }
    const GateDecision g{{0, 2}, {0.7, 0.3}};
    const auto c = concat_gated<double>(layer, g);
    EXPECT_LE(max_abs_diff(naive_product(c.up_cat, c.down_cat), gated_delta(layer, g, 11, 9)), 1e-12);
}

TEST(ConcatGated, OutOfRangeExpertIsIndexError) {
    std::mt19937_64 gen(7);
    const std::vector<LoraExpert<double>> layer{random_expert(gen, 2, 3, 3)};
    EXPECT_THROW(concat_gated<double>(layer, GateDecision{{1}, {1.0}}), IndexError);
}

// Folding the gate into UP instead of DOWN gives the same delta.
TEST(ConcatGated, GatePlacementDoesNotChangeProduct) {
    std::mt19937_64 gen(8);
    std::vector<LoraExpert<double>> layer;
    for (int i = 0; i < 4; ++i) {
        layer.push_back(random_expert(gen, 3, 8, 8));
    }
    const GateDecision g{{2, 0}, {0.55, 0.45}};
    const auto down_folded = concat_gated<double>(layer, g);
    Matrix<double> up_folded_down = down_folded.down_cat;
    Matrix<double> up_folded_up = down_folded.up_cat;
    std::size_t offset = 0;
    for (std::size_t b = 0; b < g.k(); ++b) {
        const auto& e = layer[g.expert_ids[b]];
        for (std::size_t p = 0; p < e.rank(); ++p) {
            for (std::size_t j = 0; j < 8; ++j) {
                up_folded_down(offset + p, j) = e.down(p, j);
            }
            for (std::size_t i = 0; i < 8; ++i) {
                up_folded_up(i, offset + p) = g.weights[b] * e.up(i, p);
            }
        }
        offset += e.rank();
    }
    EXPECT_LE(max_abs_diff(naive_product(down_folded.up_cat, down_folded.down_cat),
                           naive_product(up_folded_up, up_folded_down)),
              1e-12);
}

TEST(BuildSwitch, IdenticalPrevAndCurCancel) {
    std::mt19937_64 gen(9);
    std::vector<LoraExpert<double>> layer;
    for (int i = 0; i < 4; ++i) {
        layer.push_back(random_expert(gen, 2, 6, 6));
    }
    const GateDecision g{{1, 3}, {0.8, 0.2}};
    const auto c = concat_gated<double>(layer, g);
    const auto s = build_switch(c, c);
    EXPECT_EQ(s.rank(), 2 * c.rank());
    EXPECT_LE(max_abs(naive_product(s.up_cat, s.down_cat)), 1e-12);
    DispatchRecorder rec;
    EXPECT_LE(max_abs(gemm(s.up_cat, s.down_cat, rec)), 1e-12);
}

TEST(BuildSwitch, EmptyPrevReturnsCur) {
    std::mt19937_64 gen(10);
    const std::vector<LoraExpert<double>> layer{random_expert(gen, 2, 4, 5)};
    const auto cur = concat_gated<double>(layer, GateDecision{{0}, {1.0}});
    const auto s = build_switch(ConcatAdapter<double>::empty_for(5, 4), cur);
    EXPECT_EQ(s.down_cat, cur.down_cat);
    EXPECT_EQ(s.up_cat, cur.up_cat);
    EXPECT_EQ(s.provenance, cur.provenance);
}

TEST(BuildSwitch, DisjointExpertsGiveDeltaDifference) {
    std::mt19937_64 gen(11);
    std::vector<LoraExpert<double>> layer;
    for (int i = 0; i < 6; ++i) {
        layer.push_back(random_expert(gen, 3, 10, 12));
    }
    const GateDecision gp{{0, 1}, {0.65, 0.35}};
    const GateDecision gc{{4, 5}, {0.9, 0.1}};
    const auto s = build_switch(concat_gated<double>(layer, gp), concat_gated<double>(layer, gc));
    const auto expected = naive_add(gated_delta(layer, gc, 12, 10), gated_delta(layer, gp, 12, 10), -1.0);
    EXPECT_LE(max_abs_diff(naive_product(s.up_cat, s.down_cat), expected), 1e-12);
    ASSERT_EQ(s.provenance.size(), 4u);
    EXPECT_EQ(s.provenance[0].sign, Sign::Minus);
    EXPECT_EQ(s.provenance[1].sign, Sign::Minus);
    EXPECT_EQ(s.provenance[2].sign, Sign::Plus);
    // up blocks are copied, not negated
    EXPECT_EQ(s.up_cat(0, 0), layer[0].up(0, 0));
}

TEST(BuildSwitch, ShapeMismatchThrows) {
    std::mt19937_64 gen(12);
    const std::vector<LoraExpert<double>> a{random_expert(gen, 2, 4, 4)};
    const std::vector<LoraExpert<double>> b{random_expert(gen, 2, 5, 4)};
    EXPECT_THROW(build_switch(concat_gated<double>(a, {{0}, {1.0}}), concat_gated<double>(b, {{0}, {1.0}})),
                 DimensionError);
}

struct Layers {
    std::vector<Matrix<double>> backbone;
    ExpertBank<double> bank;
};

Layers random_layers(std::mt19937_64& gen, std::size_t L, std::size_t d, std::size_t n,
                     std::size_t r) {
    Layers out;
    out.bank.layers.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        out.backbone.push_back(random_matrix<double>(gen, d, d));
        for (std::size_t e = 0; e < n; ++e) {
            out.bank.layers[l].push_back(random_expert(gen, r, d, d));
        }
    }
    return out;
}

TEST(MergeAll, ZeroAdaptersStillOneEvent) {
    std::vector<Matrix<double>> backbone{Matrix<double>::identity(3), Matrix<double>::identity(3)};
    const auto saved = backbone;
    std::vector<ConcatAdapter<double>> concats{
        {Matrix<double>(2, 3), Matrix<double>(3, 2), {}},
        {Matrix<double>(2, 3), Matrix<double>(3, 2), {}}};
    DispatchRecorder rec;
    merge_all<double>(backbone, concats, Sign::Plus, rec);
    EXPECT_EQ(backbone, saved);
    EXPECT_EQ(rec.summary().sgmm, 1u);
    EXPECT_EQ(rec.size(), 1u);
}

TEST(MergeAll, TwoLayerExample) {
    std::vector<Matrix<double>> backbone{Matrix<double>::identity(2), Matrix<double>::identity(2)};
    std::vector<ConcatAdapter<double>> concats{
        {Matrix<double>{{1, 0}}, Matrix<double>{{1}, {0}}, {}},
        {Matrix<double>{{0, 1}}, Matrix<double>{{0}, {1}}, {}}};
    DispatchRecorder rec;
    merge_all<double>(backbone, concats, Sign::Plus, rec);
    EXPECT_EQ(backbone[0], (Matrix<double>{{2, 0}, {0, 1}}));
    EXPECT_EQ(backbone[1], (Matrix<double>{{1, 0}, {0, 2}}));
    EXPECT_EQ(rec.size(), 1u);
}

TEST(MergeAll, MergeThenUnmergeRestores) {
    std::mt19937_64 gen(13);
    auto layers = random_layers(gen, 6, 24, 4, 3);
    const auto saved = layers.backbone;
    const GateDecision g{{2, 0}, {0.6, 0.4}};
    std::vector<ConcatAdapter<double>> concats;
    for (const auto& layer : layers.bank.layers) {
        concats.push_back(concat_gated<double>(layer, g));
    }
    DispatchRecorder rec;
    merge_all<double>(layers.backbone, concats, Sign::Plus, rec);
    merge_all<double>(layers.backbone, concats, Sign::Minus, rec);
    for (std::size_t l = 0; l < saved.size(); ++l) {
        EXPECT_LE(max_abs_diff(layers.backbone[l], saved[l]), 1e-10);
    }
    EXPECT_EQ(rec.summary().sgmm, 2u);
}

TEST(MergeAll, CountMismatchThrows) {
    std::vector<Matrix<double>> backbone{Matrix<double>::identity(2)};
    std::vector<ConcatAdapter<double>> concats;
    DispatchRecorder rec;
    EXPECT_THROW(merge_all<double>(backbone, concats, Sign::Plus, rec), DimensionError);
}

// Fused backbone applied to x equals the backbone plus each gated expert
// evaluated separately.
TEST(MergeProperty, FusedBackboneMatchesNaivePath) {
    std::mt19937_64 gen(14);
    for (int trial = 0; trial < 25; ++trial) {
        auto layers = random_layers(gen, 3, 16, 5, 2);
        const auto pristine = layers.backbone;
        const std::size_t a = gen() % 5;
        const std::size_t b = (a + 1 + gen() % 4) % 5;
        const double w = std::uniform_real_distribution<double>(0.05, 0.95)(gen);
        const GateDecision g{{a, b}, {w, 1.0 - w}};
        std::vector<ConcatAdapter<double>> concats;
        for (const auto& layer : layers.bank.layers) {
            concats.push_back(concat_gated<double>(layer, g));
        }
        DispatchRecorder rec;
        merge_all<double>(layers.backbone, concats, Sign::Plus, rec);
        for (std::size_t l = 0; l < 3; ++l) {
            const auto x = random_matrix<double>(gen, 16, 1);
            auto naive = naive_product(pristine[l], x);
            for (std::size_t s = 0; s < g.k(); ++s) {
                const auto& e = layers.bank.layers[l][g.expert_ids[s]];
                naive = naive_add(naive, naive_product(e.up, naive_product(e.down, x)), g.weights[s]);
            }
            EXPECT_LE(max_abs_diff(naive_product(layers.backbone[l], x), naive), 1e-10);
        }
    }
}

// Switching from prev to cur on a prev-fused backbone equals merging cur into
// the pristine backbone.
TEST(MergeProperty, SwitchEqualsMergeFromPristine) {
    std::mt19937_64 gen(15);
    for (int trial = 0; trial < 25; ++trial) {
        auto layers = random_layers(gen, 4, 12, 6, 3);
        const auto pristine = layers.backbone;
        auto gate = [&] {
            const std::size_t a = gen() % 6;
            const std::size_t b = (a + 1 + gen() % 5) % 6;
            const double w = std::uniform_real_distribution<double>(0.05, 0.95)(gen);
            return GateDecision{{a, b}, {w, 1.0 - w}};
        };
        const GateDecision gp = gate(), gc = gate();
        std::vector<ConcatAdapter<double>> prev, cur, switches;
        for (const auto& layer : layers.bank.layers) {
            prev.push_back(concat_gated<double>(layer, gp));
            cur.push_back(concat_gated<double>(layer, gc));
            switches.push_back(build_switch(prev.back(), cur.back()));
        }
        DispatchRecorder rec;
        merge_all<double>(layers.backbone, prev, Sign::Plus, rec);
        merge_all<double>(layers.backbone, switches, Sign::Plus, rec);

        auto direct = pristine;
        merge_all<double>(direct, cur, Sign::Plus, rec);
        for (std::size_t l = 0; l < direct.size(); ++l) {
            EXPECT_LE(max_abs_diff(layers.backbone[l], direct[l]), 1e-10);
        }
    }
}

}  // namespace
}  // namespace fuselora

namespace fuselora {
namespace {

// 1000 switch cycles with random gates; the backbone must stay within 1e-8 of
// pristine + current delta. The growth curve is printed for inspection.
TEST(MergeProperty, DriftStaysBoundedOverThousandSwitches) {
    std::mt19937_64 gen(16);
    auto layers = random_layers(gen, 4, 32, 8, 4);
    const auto pristine = layers.backbone;
    std::vector<ConcatAdapter<double>> prev;
    DispatchRecorder rec;
    double worst = 0.0;
    for (int t = 1; t <= 1000; ++t) {
        const std::size_t a = gen() % 8;
        const std::size_t b = (a + 1 + gen() % 7) % 8;
        const double w = std::uniform_real_distribution<double>(0.05, 0.95)(gen);
        const GateDecision g{{a, b}, {w, 1.0 - w}};
        std::vector<ConcatAdapter<double>> cur, switches;
        for (std::size_t l = 0; l < layers.bank.layers.size(); ++l) {
            cur.push_back(concat_gated<double>(layers.bank.layers[l], g));
            switches.push_back(prev.empty() ? cur.back() : build_switch(prev[l], cur.back()));
        }
        merge_all<double>(layers.backbone, switches, Sign::Plus, rec);
        prev = cur;
        if (t % 100 == 0) {
            double dev = 0.0;
            for (std::size_t l = 0; l < pristine.size(); ++l) {
                const auto expected =
                    naive_add(pristine[l], naive_product(cur[l].up_cat, cur[l].down_cat));
                dev = std::max(dev, max_abs_diff(layers.backbone[l], expected));
            }
            worst = std::max(worst, dev);
            std::printf("drift after %4d switches: %.3e\n", t, dev);
        }
    }
    EXPECT_LT(worst, 1e-8);
}

}  // namespace
}  // namespace fuselora
