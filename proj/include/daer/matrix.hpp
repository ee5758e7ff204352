#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "daer/error.hpp"
#include "daer/kernels.hpp"

namespace daer {

// Dense row-major double matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

inline void require_shape(const Mat& m, std::size_t rows, std::size_t cols,
                          const char* what) {
    if (m.rows != rows || m.cols != cols)
        throw dim_error(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", got " + std::to_string(m.rows) + "x" +
                        std::to_string(m.cols));
}

// c = a * b
inline Mat mat_mul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw dim_error("mat_mul: inner dimensions differ");
    Mat c(a.rows, b.cols);
    kernels::matmul(a.data.data(), a.rows, a.cols, b.data.data(), b.cols, c.data.data());
    return c;
}

// c = a * b^T
inline Mat mat_mul_nt(const Mat& a, const Mat& b) {
    if (a.cols != b.cols) throw dim_error("mat_mul_nt: inner dimensions differ");
    Mat c(a.rows, b.rows);
    kernels::matmul_nt(a.data.data(), a.rows, a.cols, b.data.data(), b.rows, c.data.data());
    return c;
}

// c = a^T * b
inline Mat mat_mul_tn(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) throw dim_error("mat_mul_tn: inner dimensions differ");
    Mat c(a.cols, b.cols);
    kernels::matmul_tn(a.data.data(), a.rows, a.cols, b.data.data(), b.cols, c.data.data());
    return c;
}

inline double l2_norm(const double* v, std::size_t n) {
    return std::sqrt(kernels::sum_squares(v, n));
}

// In-place L2 normalization; throws on zero/non-finite norm.
inline void normalize(double* v, std::size_t n, const char* what = "normalize") {
    const double norm = l2_norm(v, n);
    if (!(norm > 0.0) || !std::isfinite(norm))
        throw std::invalid_argument(std::string(what) + ": degenerate vector norm");
    kernels::scale(v, n, 1.0 / norm);
}

}  // namespace daer
