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

// Independent reference implementations used only by the tests.  These stay
// deliberately naive (dense matrices, brute-force sampling, direct geometry)
// so they share no code path with the matrix-free operators they check.

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "fewha/dense.hpp"
#include "fewha/geometry.hpp"
#include "fewha/grid.hpp"
#include "fewha/wavelet.hpp"

namespace oracle {

/// Illuminated fraction by 2D pixel counting over the cell.
inline double fill_fraction_bruteforce(const fewha::SystemGeometry& g, int wfs_index, int i, int j,
                                       int samples_per_side = 400) {
    const auto& w = g.wfs[static_cast<std::size_t>(wfs_index)];
    const double d = g.telescope_diameter / w.n_subap;
    const double x0 = -g.telescope_diameter / 2.0 + j * d;
    const double y0 = -g.telescope_diameter / 2.0 + i * d;
    const double r_out2 = g.pupil_outer_radius() * g.pupil_outer_radius();
    const double r_in2 = g.pupil_inner_radius() * g.pupil_inner_radius();
    long hits = 0;
    for (int a = 0; a < samples_per_side; ++a) {
        const double y = y0 + (a + 0.5) * d / samples_per_side;
        for (int b = 0; b < samples_per_side; ++b) {
            const double x = x0 + (b + 0.5) * d / samples_per_side;
            const double r2 = x * x + y * y;
            if (r2 <= r_out2 && r2 >= r_in2) ++hits;
        }
    }
    return static_cast<double>(hits) / (static_cast<double>(samples_per_side) * samples_per_side);
}

/// Meta-pupil side by ray-tracing pupil-rim points through every guide-star
/// beam and enclosing each footprint in a centered square.
inline double metapupil_bruteforce(const fewha::SystemGeometry& g, int layer_index,
                                   int rim_samples = 200000) {
    const auto& l = g.layers[static_cast<std::size_t>(layer_index)];
    double side = 0.0;
    for (const auto& star : g.guide_stars) {
        const double scale = star.footprint_scale(l.height);
        double r_max = 0.0;
        for (int k = 0; k < rim_samples; ++k) {
            const double ang = 2.0 * std::numbers::pi * k / rim_samples;
            const double px = scale * (g.telescope_diameter / 2.0) * std::cos(ang) +
                              star.theta_x * l.height;
            const double py = scale * (g.telescope_diameter / 2.0) * std::sin(ang) +
                              star.theta_y * l.height;
            r_max = std::max(r_max, std::hypot(px, py));
        }
        side = std::max(side, 2.0 * r_max);
    }
    return side;
}

/// Dense 1D periodic analysis-step matrix built directly from the filters.
inline fewha::DenseMatrix dwt_step_matrix(int m, int order) {
    const auto lo = fewha::daubechies_scaling_filter(order);
    const int flen = static_cast<int>(lo.size());
    fewha::DenseMatrix s(static_cast<std::size_t>(m), static_cast<std::size_t>(m));
    for (int i = 0; i < m / 2; ++i) {
        for (int k = 0; k < flen; ++k) {
            const int col = (2 * i + k) % m;
            s.at(static_cast<std::size_t>(i), static_cast<std::size_t>(col)) += lo[static_cast<std::size_t>(k)];
            const double hi = (k % 2 == 0 ? 1.0 : -1.0) * lo[static_cast<std::size_t>(flen - 1 - k)];
            s.at(static_cast<std::size_t>(m / 2 + i), static_cast<std::size_t>(col)) += hi;
        }
    }
    return s;
}

/// Full 2D multilevel DWT through explicit dense step matrices applied to
/// rows and columns of the shrinking subgrid.
inline fewha::Grid2D dwt2_forward_dense(const fewha::Grid2D& in, int order) {
    fewha::Grid2D g = in;
    const int n = g.rows();
    for (int s = n; s >= 2; s /= 2) {
        const fewha::DenseMatrix step = dwt_step_matrix(s, order);
        std::vector<double> v(static_cast<std::size_t>(s));
        for (int i = 0; i < s; ++i) {
            for (int j = 0; j < s; ++j) v[static_cast<std::size_t>(j)] = g(i, j);
            const auto r = step.multiply(v);
            for (int j = 0; j < s; ++j) g(i, j) = r[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < s; ++j) {
            for (int i = 0; i < s; ++i) v[static_cast<std::size_t>(i)] = g(i, j);
            const auto r = step.multiply(v);
            for (int i = 0; i < s; ++i) g(i, j) = r[static_cast<std::size_t>(i)];
        }
    }
    return g;
}

/// Dense SH matrix written straight from the slope stencil definition
/// (columns indexed by wavefront nodes, rows by sx then sy grids).
inline fewha::DenseMatrix sh_dense_from_stencil(const fewha::WfsConfig& w) {
    const int n = w.n_subap;
    const std::size_t n_nodes = static_cast<std::size_t>(n + 1) * (n + 1);
    fewha::DenseMatrix m(2 * static_cast<std::size_t>(n) * n, n_nodes);
    auto node = [&](int i, int j) { return static_cast<std::size_t>(i) * (n + 1) + j; };
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (!w.active_mask(i, j)) continue;
            const std::size_t rx = static_cast<std::size_t>(i) * n + j;
            const std::size_t ry = static_cast<std::size_t>(n) * n + rx;
            m.at(rx, node(i, j + 1)) += 0.5;
            m.at(rx, node(i, j)) -= 0.5;
            m.at(rx, node(i + 1, j + 1)) += 0.5;
            m.at(rx, node(i + 1, j)) -= 0.5;
            m.at(ry, node(i + 1, j)) += 0.5;
            m.at(ry, node(i, j)) -= 0.5;
            m.at(ry, node(i + 1, j + 1)) += 0.5;
            m.at(ry, node(i, j + 1)) -= 0.5;
        }
    }
    return m;
}

/// Dense bilinear propagation matrix for one star: weights computed here from
/// first principles (cell search + fractional offsets), not via the stencil
/// helper the implementation uses.
inline fewha::DenseMatrix propagation_dense(const fewha::SystemGeometry& g, int star_index) {
    const auto& star = g.guide_stars[static_cast<std::size_t>(star_index)];
    const int n = g.wfs[static_cast<std::size_t>(star_index)].n_subap + 1;
    std::size_t coeff_dim = 0;
    for (const auto& l : g.layers) coeff_dim += static_cast<std::size_t>(l.n_nodes()) * l.n_nodes();
    fewha::DenseMatrix m(static_cast<std::size_t>(n) * n, coeff_dim);

    const double d = g.telescope_diameter / (n - 1);
    std::size_t layer_off = 0;
    for (const auto& l : g.layers) {
        const int nl = l.n_nodes();
        const double spacing = l.extent / (nl - 1);
        const double scale = star.footprint_scale(l.height);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double px = scale * (-g.telescope_diameter / 2.0 + j * d) + star.theta_x * l.height;
                const double py = scale * (-g.telescope_diameter / 2.0 + i * d) + star.theta_y * l.height;
                const double u = (px + l.extent / 2.0) / spacing;
                const double t = (py + l.extent / 2.0) / spacing;
                const int j0 = std::min(std::max(static_cast<int>(std::floor(u)), 0), nl - 2);
                const int i0 = std::min(std::max(static_cast<int>(std::floor(t)), 0), nl - 2);
                const double fx = u - j0;
                const double fy = t - i0;
                const std::size_t row = static_cast<std::size_t>(i) * n + j;
                auto col = [&](int a, int b) {
                    return layer_off + static_cast<std::size_t>(a) * nl + b;
                };
                m.at(row, col(i0, j0)) += (1 - fy) * (1 - fx);
                m.at(row, col(i0, j0 + 1)) += (1 - fy) * fx;
                m.at(row, col(i0 + 1, j0)) += fy * (1 - fx);
                m.at(row, col(i0 + 1, j0 + 1)) += fy * fx;
            }
        }
        layer_off += static_cast<std::size_t>(nl) * nl;
    }
    return m;
}

}  // namespace oracle
