// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fuselora/dispatch.hpp"
#include "fuselora/error.hpp"
#include "fuselora/gemm.hpp"
#include "fuselora/matrix.hpp"
#include "fuselora/routing.hpp"
#include "fuselora/sgmm.hpp"

namespace fuselora {

/// One LoRA expert: delta = up * down with down r x d_in and up d_out x r.
template <Real T>
struct LoraExpert {
    Matrix<T> down;
    Matrix<T> up;

    std::size_t rank() const noexcept { return down.rows(); }
    std::size_t in_dim() const noexcept { return down.cols(); }
    std::size_t out_dim() const noexcept { return up.rows(); }

    void validate() const {
        if (down.rows() == 0 || up.cols() != down.rows()) {
            throw DimensionError("expert factors: up " + shape_string(up) + ", down " +
                                 shape_string(down));
        }
    }

    friend bool operator==(const LoraExpert&, const LoraExpert&) = default;
};

/// N experts for each of L expanded layers, all of one rank.
template <Real T>
struct ExpertBank {
    std::vector<std::vector<LoraExpert<T>>> layers;

    std::size_t num_layers() const noexcept { return layers.size(); }
    std::size_t num_experts() const noexcept { return layers.empty() ? 0 : layers.front().size(); }
    std::size_t rank() const noexcept {
        return num_experts() == 0 ? 0 : layers.front().front().rank();
    }

    /// Checks the bank against the backbone it adapts.
    void validate(std::span<const Matrix<T>> backbone) const {
        if (layers.size() != backbone.size()) {
            throw DimensionError("bank has " + std::to_string(layers.size()) +
                                 " layers, backbone has " + std::to_string(backbone.size()));
        }
        const std::size_t n = num_experts();
        const std::size_t r = rank();
        if (n == 0) {
            throw DimensionError("bank has no experts");
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].size() != n) {
                throw DimensionError("layer " + std::to_string(l) + " has " +
                                     std::to_string(layers[l].size()) + " experts, expected " +
                                     std::to_string(n));
            }
            for (const LoraExpert<T>& e : layers[l]) {
                e.validate();
                if (e.rank() != r) {
                    throw DimensionError("mixed adapter ranks in layer " + std::to_string(l));
                }
                if (e.in_dim() != backbone[l].cols() || e.out_dim() != backbone[l].rows()) {
                    throw DimensionError("expert shape does not match backbone layer " +
                                         std::to_string(l));
                }
            }
        }
    }

    friend bool operator==(const ExpertBank&, const ExpertBank&) = default;
};

/// Describes one rank block of a concatenated adapter.
struct BlockProvenance {
    std::size_t expert_id = 0;
    double gate_weight = 0.0;
    Sign sign = Sign::Plus;
    std::size_t rank = 0;

    friend bool operator==(const BlockProvenance&, const BlockProvenance&) = default;
};

// Gate-scaled adapter blocks stacked along the rank axis. down_cat rows and
// up_cat columns follow provenance order; the represented delta is
// up_cat * down_cat. Signs and gate weights live in down_cat only.
template <Real T>
struct ConcatAdapter {
    Matrix<T> down_cat;
    Matrix<T> up_cat;
    std::vector<BlockProvenance> provenance;

    /// Zero-rank adapter for a d_out x d_in target.
    static ConcatAdapter empty_for(std::size_t d_out, std::size_t d_in) {
        return ConcatAdapter{Matrix<T>(0, d_in), Matrix<T>(d_out, 0), {}};
    }

    std::size_t rank() const noexcept { return down_cat.rows(); }
    bool empty() const noexcept { return provenance.empty(); }
    std::size_t in_dim() const noexcept { return down_cat.cols(); }
    std::size_t out_dim() const noexcept { return up_cat.rows(); }
};

/// gate * up * (down * x). Two gemm dispatches; the gate is the up-projection's
/// output scale.
template <Real T>
Matrix<T> expert_apply(const LoraExpert<T>& expert, const Matrix<T>& x, double gate,
                       DispatchRecorder& recorder) {
    if (x.rows() != expert.in_dim() || x.cols() != 1) {
        throw DimensionError("expert input " + shape_string(x) + ", expected " +
                             shape_string(expert.in_dim(), 1));
    }
    const Matrix<T> hidden = gemm(expert.down, x, recorder);
    Matrix<T> out = gemm(expert.up, hidden, recorder);
    const T g = static_cast<T>(gate);
    for (T& v : out.values()) {
        v *= g;
    }
    return out;
}

/// Stacks the selected experts' factors in gate order: down blocks scaled by
/// their gate weight, up blocks unscaled. Host-side copy, no dispatch.
template <Real T>
ConcatAdapter<T> concat_gated(std::span<const LoraExpert<T>> bank_layer, const GateDecision& gate) {
    if (gate.expert_ids.size() != gate.weights.size()) {
        throw ParameterError("gate ids and weights differ in length");
    }
    for (std::size_t id : gate.expert_ids) {
        if (id >= bank_layer.size()) {
            throw IndexError("expert index " + std::to_string(id) + " out of range for " +
                             std::to_string(bank_layer.size()) + " experts");
        }
    }
    if (gate.empty()) {
        throw ParameterError("gate decision selects no experts");
    }
    const LoraExpert<T>& first = bank_layer[gate.expert_ids.front()];
    const std::size_t d_in = first.in_dim();
    const std::size_t d_out = first.out_dim();

    std::size_t total_rank = 0;
    for (std::size_t id : gate.expert_ids) {
        const LoraExpert<T>& e = bank_layer[id];
        if (e.in_dim() != d_in || e.out_dim() != d_out) {
            throw DimensionError("experts of one layer disagree on shape");
        }
        total_rank += e.rank();
    }

    ConcatAdapter<T> out{Matrix<T>(total_rank, d_in), Matrix<T>(d_out, total_rank), {}};
    std::size_t offset = 0;
    for (std::size_t b = 0; b < gate.k(); ++b) {
        const LoraExpert<T>& e = bank_layer[gate.expert_ids[b]];
        const T w = static_cast<T>(gate.weights[b]);
        for (std::size_t p = 0; p < e.rank(); ++p) {
            for (std::size_t j = 0; j < d_in; ++j) {
                out.down_cat(offset + p, j) = w * e.down(p, j);
            }
            for (std::size_t i = 0; i < d_out; ++i) {
                out.up_cat(i, offset + p) = e.up(i, p);
            }
        }
        out.provenance.push_back({gate.expert_ids[b], gate.weights[b], Sign::Plus, e.rank()});
        offset += e.rank();
    }
    return out;
}

/// [-prev ; cur]: the adapter that unmerges prev and merges cur in one update.
/// Only prev's down blocks are negated; up blocks are copied unchanged.
template <Real T>
ConcatAdapter<T> build_switch(const ConcatAdapter<T>& prev, const ConcatAdapter<T>& cur) {
    if (prev.empty()) {
        return cur;
    }
    if (!cur.empty() && (prev.in_dim() != cur.in_dim() || prev.out_dim() != cur.out_dim())) {
        throw DimensionError("switch between adapters of different shapes: " +
                             shape_string(prev.out_dim(), prev.in_dim()) + " vs " +
                             shape_string(cur.out_dim(), cur.in_dim()));
    }
    const std::size_t d_in = prev.in_dim();
    const std::size_t d_out = prev.out_dim();
    const std::size_t sp = prev.rank();
    const std::size_t sc = cur.empty() ? 0 : cur.rank();

    ConcatAdapter<T> out{Matrix<T>(sp + sc, d_in), Matrix<T>(d_out, sp + sc), {}};
    for (std::size_t p = 0; p < sp; ++p) {
        for (std::size_t j = 0; j < d_in; ++j) {
            out.down_cat(p, j) = -prev.down_cat(p, j);
        }
    }
    for (std::size_t p = 0; p < sc; ++p) {
        for (std::size_t j = 0; j < d_in; ++j) {
            out.down_cat(sp + p, j) = cur.down_cat(p, j);
        }
    }
    for (std::size_t i = 0; i < d_out; ++i) {
        for (std::size_t p = 0; p < sp; ++p) {
            out.up_cat(i, p) = prev.up_cat(i, p);
        }
        for (std::size_t p = 0; p < sc; ++p) {
            out.up_cat(i, sp + p) = cur.up_cat(i, p);
        }
    }
    for (BlockProvenance b : prev.provenance) {
        b.sign = -b.sign;
        out.provenance.push_back(b);
    }
    out.provenance.insert(out.provenance.end(), cur.provenance.begin(), cur.provenance.end());
    return out;
}

/// Builds the segment table that updates backbone[l] with concats[l].
template <Real T>
SegmentTable<T> make_segment_table(std::span<Matrix<T>> backbone,
                                   std::span<const ConcatAdapter<T>> concats) {
    if (backbone.size() != concats.size()) {
        throw DimensionError("merge: " + std::to_string(concats.size()) + " adapters for " +
                             std::to_string(backbone.size()) + " backbone layers");
    }
    SegmentTable<T> table;
    for (std::size_t l = 0; l < backbone.size(); ++l) {
        table.add(concats[l].down_cat, concats[l].up_cat, backbone[l]);
    }
    return table;
}

/// backbone[l] += sign * up_cat[l] * down_cat[l] for all layers in one SGMM dispatch.
template <Real T>
void merge_all(std::span<Matrix<T>> backbone, std::span<const ConcatAdapter<T>> concats, Sign sign,
               DispatchRecorder& recorder, const TileConfig& tile = {}) {
    sgmm(make_segment_table(backbone, concats), sign, tile, recorder);
}

/// Same update as merge_all, issued as one gemm dispatch per layer.
template <Real T>
void merge_layerwise(std::span<Matrix<T>> backbone, std::span<const ConcatAdapter<T>> concats,
                     Sign sign, DispatchRecorder& recorder, const TileConfig& tile = {}) {
    make_segment_table(backbone, concats).validate();
    for (std::size_t l = 0; l < backbone.size(); ++l) {
        gemm_accumulate_inplace(backbone[l], concats[l].up_cat, concats[l].down_cat, sign, recorder,
                                tile);
    }
}

}  // namespace fuselora
