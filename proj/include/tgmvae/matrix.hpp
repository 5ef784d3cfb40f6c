// Copyright 2026 The tgmvae authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "tgmvae/errors.hpp"

namespace tgmvae::nd {

// Dense row-major matrix of 64-bit floats. All networks in this project are
// tiny, so a flat std::vector with hand-rolled kernels is all we need.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), d_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        Matrix m(r, c);
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != c) throw data_error("Matrix::from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix row_vector(const std::vector<double>& v) {
        Matrix m(1, v.size());
        for (std::size_t j = 0; j < v.size(); ++j) m(0, j) = v[j];
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return d_.size(); }
    bool empty() const { return d_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return d_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * cols_ + j]; }

    double* data() { return d_.data(); }
    const double* data() const { return d_.data(); }
    double* row(std::size_t i) { return d_.data() + i * cols_; }
    const double* row(std::size_t i) const { return d_.data() + i * cols_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (double v : d_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : d_) x = v;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.d_ == b.d_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> d_;
};

// y = a * b
inline void matmul_into(Matrix& y, const Matrix& a, const Matrix& b, bool accumulate = false) {
    if (a.cols() != b.rows())
        throw data_error("matmul: inner dimensions differ (" + a.shape_str() + " * " + b.shape_str() + ")");
    if (y.rows() != a.rows() || y.cols() != b.cols()) y = Matrix(a.rows(), b.cols());
    else if (!accumulate) y.fill(0.0);
    const std::size_t n = b.cols(), m = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* yi = y.row(i);
        for (std::size_t k = 0; k < m; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < n; ++j) yi[j] += aik * bk[j];
        }
    }
}

// y = aᵀ * b
inline void matmul_at_b_into(Matrix& y, const Matrix& a, const Matrix& b, bool accumulate = false) {
    if (a.rows() != b.rows())
        throw data_error("matmul_at_b: leading dimensions differ (" + a.shape_str() + ", " + b.shape_str() + ")");
    if (y.rows() != a.cols() || y.cols() != b.cols()) y = Matrix(a.cols(), b.cols());
    else if (!accumulate) y.fill(0.0);
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        const double* bi = b.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = ai[k];
            double* yk = y.row(k);
            for (std::size_t j = 0; j < n; ++j) yk[j] += aik * bi[j];
        }
    }
}

// y = a * bᵀ
inline void matmul_a_bt_into(Matrix& y, const Matrix& a, const Matrix& b, bool accumulate = false) {
    if (a.cols() != b.cols())
        throw data_error("matmul_a_bt: trailing dimensions differ (" + a.shape_str() + ", " + b.shape_str() + ")");
    if (y.rows() != a.rows() || y.cols() != b.rows()) y = Matrix(a.rows(), b.rows());
    else if (!accumulate) y.fill(0.0);
    const std::size_t m = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.row(i);
        double* yi = y.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += ai[k] * bj[k];
            yi[j] += s;
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix y;
    matmul_into(y, a, b);
    return y;
}

}  // namespace tgmvae::nd
