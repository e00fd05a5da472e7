/*
 *   Copyright 2026 The fewha authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fewha/grid.hpp"

namespace fewha {

/// Row-major dense matrix for desk-scale oracle work.
struct DenseMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    /// Column-by-column assembly by probing an operator with canonical basis
    /// vectors.
    static DenseMatrix from_operator(
        std::size_t in_dim, std::size_t out_dim,
        const std::function<void(std::span<const double>, std::span<double>)>& apply) {
        DenseMatrix m(out_dim, in_dim);
        std::vector<double> e(in_dim, 0.0), col(out_dim, 0.0);
        for (std::size_t j = 0; j < in_dim; ++j) {
            e[j] = 1.0;
            apply(e, col);
            e[j] = 0.0;
            for (std::size_t i = 0; i < out_dim; ++i) m.at(i, j) = col[i];
        }
        return m;
    }

    std::vector<double> multiply(std::span<const double> x) const {
        if (x.size() != cols) throw std::invalid_argument("DenseMatrix::multiply: size mismatch");
        std::vector<double> y(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0, comp = 0.0;
            const double* row = a.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) {
                const double t = row[j] * x[j] - comp;
                const double n = s + t;
                comp = (n - s) - t;
                s = n;
            }
            y[i] = s;
        }
        return y;
    }

    DenseMatrix transposed() const {
        DenseMatrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t.at(j, i) = at(i, j);
        return t;
    }

    DenseMatrix multiply(const DenseMatrix& o) const {
        if (cols != o.rows) throw std::invalid_argument("DenseMatrix::multiply: shape mismatch");
        DenseMatrix r(rows, o.cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < cols; ++k) {
                const double v = at(i, k);
                if (v == 0.0) continue;
                for (std::size_t j = 0; j < o.cols; ++j) r.at(i, j) += v * o.at(k, j);
            }
        return r;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : a) m = std::max(m, std::abs(v));
        return m;
    }

    /// max |this - o| / max(max|this|, max|o|)
    double rel_distance(const DenseMatrix& o) const {
        if (rows != o.rows || cols != o.cols)
            throw std::invalid_argument("DenseMatrix::rel_distance: shape mismatch");
        double diff = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) diff = std::max(diff, std::abs(a[k] - o.a[k]));
        const double ref = std::max(max_abs(), o.max_abs());
        return ref == 0.0 ? 0.0 : diff / ref;
    }
};

/// Solves the SPD system A x = b by Cholesky factorization; throws if a
/// pivot is non-positive.
inline std::vector<double> cholesky_solve(const DenseMatrix& A, std::span<const double> b) {
    if (A.rows != A.cols || b.size() != A.rows)
        throw std::invalid_argument("cholesky_solve: shape mismatch");
    const std::size_t n = A.rows;
    DenseMatrix L(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = A.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
            if (i == j) {
                if (!(s > 0.0)) throw std::runtime_error("cholesky_solve: matrix not positive definite");
                L.at(i, i) = std::sqrt(s);
            } else {
                L.at(i, j) = s / L.at(j, j);
            }
        }
    }
    std::vector<double> y(n, 0.0), x(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= L.at(i, k) * y[k];
        y[i] = s / L.at(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= L.at(k, ii) * x[k];
        x[ii] = s / L.at(ii, ii);
    }
    return x;
}

}  // namespace fewha
