// Copyright 2026 The fuselora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fuselora/error.hpp"

namespace fuselora {

enum class Precision { Single, Double };

inline std::string_view to_string(Precision p) {
    return p == Precision::Single ? "single" : "double";
}

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

template <Real T>
constexpr Precision precision_of() {
    return std::same_as<T, float> ? Precision::Single : Precision::Double;
}

// Dense row-major matrix. The element type doubles as the precision tag, so
// mixing single and double operands is rejected at compile time.
template <Real T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, T{0}) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                                 " does not match shape " + std::to_string(rows_) + "x" +
                                 std::to_string(cols_));
        }
        require_finite();
    }

    Matrix(std::initializer_list<std::initializer_list<T>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& row : rows) {
            if (row.size() != cols_) {
                throw DimensionError("ragged matrix literal");
            }
            data_.insert(data_.end(), row.begin(), row.end());
        }
        require_finite();
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = T{1};
        }
        return m;
    }

    /// n x 1 column from a flat vector.
    static Matrix column(std::vector<T> values) {
        const std::size_t n = values.size();
        return Matrix(n, 1, std::move(values));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    static constexpr Precision precision() noexcept { return precision_of<T>(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    /// Reinterprets the contiguous storage with a new shape of equal size.
    Matrix reshaped(std::size_t rows, std::size_t cols) const {
        if (rows * cols != data_.size()) {
            throw DimensionError("reshape changes element count");
        }
        Matrix out = *this;
        out.rows_ = rows;
        out.cols_ = cols;
        return out;
    }

    template <Real U>
    Matrix<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Matrix<U>(rows_, cols_, std::move(out));
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void require_finite() const {
        if (!all_finite()) {
            throw ParameterError("matrix contains non-finite entries");
        }
    }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

template <Real T>
std::string shape_string(const Matrix<T>& m) {
    return shape_string(m.rows(), m.cols());
}

/// Largest absolute entrywise difference; shapes must agree.
template <Real T>
double max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
    if (!a.same_shape(b)) {
        throw DimensionError("max_abs_diff: " + shape_string(a) + " vs " + shape_string(b));
    }
    double worst = 0.0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        worst = std::max(worst, std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i])));
    }
    return worst;
}

template <Real T>
double max_abs(const Matrix<T>& a) {
    double worst = 0.0;
    for (T v : a.values()) {
        worst = std::max(worst, std::abs(static_cast<double>(v)));
    }
    return worst;
}

}  // namespace fuselora
