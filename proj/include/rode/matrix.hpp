#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "rode/errors.hpp"
#include "rode/rng.hpp"

namespace rode {

// Dense row-major 2-D array of doubles; the sole numeric carrier.
// Treated as immutable once it enters the autograd graph.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data; // rows * cols, row-major

    Matrix() = default;

    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        data.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw DimensionError("ragged initializer for Matrix");
            data.insert(data.end(), row.begin(), row.end());
        }
    }

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c, 0.0); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Matrix gaussian(std::size_t r, std::size_t c, double mean, double stddev, Rng& rng) {
        Matrix m(r, c);
        for (auto& v : m.data) v = rng.normal(mean, stddev);
        return m;
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return rows * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (auto& x : data) x = v;
    }
};

inline bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw DimensionError("frobenius_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace rode
