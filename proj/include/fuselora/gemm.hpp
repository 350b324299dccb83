// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fuselora/dispatch.hpp"
#include "fuselora/error.hpp"
#include "fuselora/matrix.hpp"

namespace fuselora {

/// Tile edge lengths for the blocked kernels: m rows of C, n columns of C,
/// k steps of the reduction dimension per pass.
struct TileConfig {
    std::size_t m = 32;
    std::size_t n = 32;
    std::size_t k = 8;

    void validate() const {
        if (m == 0 || n == 0 || k == 0) {
            throw ParameterError("tile dimensions must be positive");
        }
    }

    friend bool operator==(const TileConfig&, const TileConfig&) = default;
};

/// Direction of an in-place accumulation: merge adds, unmerge subtracts.
enum class Sign : int { Plus = 1, Minus = -1 };

template <Real T>
constexpr T sign_value(Sign s) noexcept {
    return s == Sign::Plus ? T{1} : T{-1};
}

constexpr Sign operator-(Sign s) noexcept { return s == Sign::Plus ? Sign::Minus : Sign::Plus; }

namespace detail {

// Row-major operand views for one C += sign * A * B problem.
template <Real T>
struct GemmProblem {
    T* c;
    const T* a;
    const T* b;
    std::size_t rows;
    std::size_t depth;
    std::size_t cols;
};

// Computes the C tile whose top-left corner is (i0, j0).
//
// Reduction order: every C(i, j) owns one accumulator that starts at zero and
// receives A(i, p) * B(p, j) for p = 0, 1, ..., depth-1 in ascending order,
// carried across k-steps. Only after the whole reduction is the accumulator
// scaled by sign and added to C(i, j). The floating-point operation sequence
// of an entry is independent of the tile shape, so results are bit-identical
// across TileConfigs as long as FP contraction is off.
template <Real T>
void accumulate_tile(const GemmProblem<T>& pr, T sign, std::size_t i0, std::size_t j0,
                     const TileConfig& tile, std::vector<T>& acc) {
    const std::size_t i1 = std::min(pr.rows, i0 + tile.m);
    const std::size_t j1 = std::min(pr.cols, j0 + tile.n);
    const std::size_t width = j1 - j0;
    acc.assign((i1 - i0) * width, T{0});
    for (std::size_t p0 = 0; p0 < pr.depth; p0 += tile.k) {
        const std::size_t p1 = std::min(pr.depth, p0 + tile.k);
        for (std::size_t i = i0; i < i1; ++i) {
            T* acc_row = acc.data() + (i - i0) * width;
            const T* a_row = pr.a + i * pr.depth;
            for (std::size_t p = p0; p < p1; ++p) {
                const T av = a_row[p];
                const T* b_row = pr.b + p * pr.cols + j0;
                for (std::size_t j = 0; j < width; ++j) {
                    acc_row[j] += av * b_row[j];
                }
            }
        }
    }
    for (std::size_t i = i0; i < i1; ++i) {
        const T* acc_row = acc.data() + (i - i0) * width;
        T* c_row = pr.c + i * pr.cols + j0;
        for (std::size_t j = 0; j < width; ++j) {
            c_row[j] += sign * acc_row[j];
        }
    }
}

template <Real T>
void tiled_accumulate(const GemmProblem<T>& pr, T sign, const TileConfig& tile) {
    std::vector<T> acc;
    acc.reserve(tile.m * tile.n);
    for (std::size_t i0 = 0; i0 < pr.rows; i0 += tile.m) {
        for (std::size_t j0 = 0; j0 < pr.cols; j0 += tile.n) {
            accumulate_tile(pr, sign, i0, j0, tile, acc);
        }
    }
}

inline std::uint64_t gemm_flops(std::size_t rows, std::size_t depth, std::size_t cols) {
    return 2ULL * rows * depth * cols;
}

template <Real T>
std::uint64_t gemm_bytes(std::size_t rows, std::size_t depth, std::size_t cols) {
    return sizeof(T) * (rows * depth + depth * cols + rows * cols);
}

}  // namespace detail

/// C = A * B. Records one gemm dispatch.
template <Real T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b, DispatchRecorder& recorder,
               const TileConfig& tile = {}) {
    if (a.cols() != b.rows()) {
        throw DimensionError("gemm: " + shape_string(a) + " * " + shape_string(b));
    }
    tile.validate();
    Matrix<T> c(a.rows(), b.cols());
    detail::tiled_accumulate<T>({c.values().data(), a.values().data(), b.values().data(), a.rows(),
                                 a.cols(), b.cols()},
                                T{1}, tile);
    recorder.record(DispatchKind::Gemm, detail::gemm_flops(a.rows(), a.cols(), b.cols()),
                    detail::gemm_bytes<T>(a.rows(), a.cols(), b.cols()));
    return c;
}

/// C += sign * A * B in place. Records one gemm dispatch.
template <Real T>
void gemm_accumulate_inplace(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b, Sign sign,
                             DispatchRecorder& recorder, const TileConfig& tile = {}) {
    if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols()) {
        throw DimensionError("gemm_accumulate_inplace: " + shape_string(c) + " += " +
                             shape_string(a) + " * " + shape_string(b));
    }
    tile.validate();
    detail::tiled_accumulate<T>({c.values().data(), a.values().data(), b.values().data(), a.rows(),
                                 a.cols(), b.cols()},
                                sign_value<T>(sign), tile);
    recorder.record(DispatchKind::Gemm, detail::gemm_flops(a.rows(), a.cols(), b.cols()),
                    detail::gemm_bytes<T>(a.rows(), a.cols(), b.cols()) + sizeof(T) * c.size());
}

}  // namespace fuselora
