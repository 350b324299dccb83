// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "fuselora/dispatch.hpp"
#include "fuselora/error.hpp"
#include "fuselora/gemm.hpp"
#include "fuselora/matrix.hpp"

namespace fuselora {

/// One entry of the SGMM pointer/shape arrays: target += sign * up * down.
/// down is s x d_in, up is d_out x s, target is d_out x d_in.
template <Real T>
struct Segment {
    const Matrix<T>* down = nullptr;
    const Matrix<T>* up = nullptr;
    Matrix<T>* target = nullptr;

    std::size_t rank() const noexcept { return down ? down->rows() : 0; }
};

template <Real T>
class SegmentTable {
public:
    SegmentTable() = default;
    explicit SegmentTable(std::vector<Segment<T>> segments) : segments_(std::move(segments)) {}

    void add(const Matrix<T>& down, const Matrix<T>& up, Matrix<T>& target) {
        segments_.push_back(Segment<T>{&down, &up, &target});
    }

    const std::vector<Segment<T>>& segments() const noexcept { return segments_; }
    std::size_t size() const noexcept { return segments_.size(); }
    bool empty() const noexcept { return segments_.empty(); }

    /// Throws DimensionError / AliasingError when the table cannot be executed.
    void validate() const {
        if (segments_.empty()) {
            throw DimensionError("segment table is empty");
        }
        std::unordered_set<const Matrix<T>*> targets;
        for (std::size_t i = 0; i < segments_.size(); ++i) {
            const Segment<T>& seg = segments_[i];
            if (seg.down == nullptr || seg.up == nullptr || seg.target == nullptr) {
                throw DimensionError("segment " + std::to_string(i) + " has a null reference");
            }
            const Matrix<T>& down = *seg.down;
            const Matrix<T>& up = *seg.up;
            const Matrix<T>& target = *seg.target;
            if (up.cols() != down.rows() || target.rows() != up.rows() ||
                target.cols() != down.cols()) {
                throw DimensionError("segment " + std::to_string(i) + ": target " +
                                     shape_string(target) + " += up " + shape_string(up) +
                                     " * down " + shape_string(down));
            }
            if (!targets.insert(seg.target).second) {
                throw AliasingError("segment " + std::to_string(i) +
                                    " updates a target already present in the table");
            }
        }
    }

private:
    std::vector<Segment<T>> segments_;
};

namespace detail {

struct TileTask {
    std::size_t segment;
    std::size_t i0;
    std::size_t j0;
};

}  // namespace detail

/// Segmented gather matrix multiply: for every segment, target += sign * up * down,
/// in place, as ONE dispatch.
///
/// The work is flattened into a single list of equally shaped output tiles
/// spanning all segments, the way the device kernel hands tiles to thread
/// blocks. Each tile runs the full rank reduction in ascending rank order
/// before touching its target, so a segment's result does not depend on the
/// TileConfig or on how many other segments share the call. Prefetch
/// double-buffering has no observable effect on the result and is not modeled.
template <Real T>
void sgmm(const SegmentTable<T>& table, Sign sign, const TileConfig& tile,
          DispatchRecorder& recorder) {
    tile.validate();
    table.validate();

    std::vector<detail::TileTask> tasks;
    std::uint64_t flops = 0;
    std::uint64_t bytes = 0;
    for (std::size_t s = 0; s < table.size(); ++s) {
        const Segment<T>& seg = table.segments()[s];
        const std::size_t rows = seg.target->rows();
        const std::size_t cols = seg.target->cols();
        for (std::size_t i0 = 0; i0 < rows; i0 += tile.m) {
            for (std::size_t j0 = 0; j0 < cols; j0 += tile.n) {
                tasks.push_back({s, i0, j0});
            }
        }
        flops += detail::gemm_flops(rows, seg.rank(), cols);
        bytes += detail::gemm_bytes<T>(rows, seg.rank(), cols) + sizeof(T) * seg.target->size();
    }

    const T scale = sign_value<T>(sign);
    std::vector<T> acc;
    acc.reserve(tile.m * tile.n);
    for (const detail::TileTask& task : tasks) {
        const Segment<T>& seg = table.segments()[task.segment];
        const detail::GemmProblem<T> problem{seg.target->values().data(), seg.up->values().data(),
                                             seg.down->values().data(), seg.target->rows(),
                                             seg.rank(), seg.target->cols()};
        detail::accumulate_tile(problem, scale, task.i0, task.j0, tile, acc);
    }

    recorder.record(DispatchKind::Sgmm, flops, bytes);
}

template <Real T>
void sgmm(const SegmentTable<T>& table, Sign sign, DispatchRecorder& recorder) {
    sgmm(table, sign, TileConfig{}, recorder);
}

}  // namespace fuselora
