// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "sdrl/errors.hpp"

namespace sdrl {

/// Dense row-major 64-bit tensor. Operations in this project only use rank
/// one and two; `grad` is empty when no gradient has been attached.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_, std::vector<double> values_)
        : shape(std::move(shape_)), values(std::move(values_)) {
        if (element_count(shape) != values.size())
            throw DimensionError("tensor: product(shape) != number of values");
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) {
        return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
    }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
    bool has_grad() const { return !grad.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }
};

/// Binary attention mask; entry (i, j) == 1 means query row i may attend key j.
struct BinaryMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(std::size_t r, std::size_t c, std::uint8_t fill = 0) : rows(r), cols(c), bits(r * c, fill) {}

    std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
    std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits[r * cols + c]; }

    static BinaryMask ones(std::size_t n) { return BinaryMask(n, n, 1); }
    static BinaryMask causal(std::size_t n) {
        BinaryMask m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) m(i, j) = 1;
        return m;
    }

    bool operator==(const BinaryMask&) const = default;
};

/// Per-position log-probability table (rows = positions, cols = non-mask tokens).
struct LogProbTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

} // namespace sdrl
