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
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "fewha/geometry.hpp"
#include "fewha/grid.hpp"
#include "fewha/wavelet.hpp"

namespace fewha {

// ---------------------------------------------------------------------------
// Vector layouts
// ---------------------------------------------------------------------------

/// Concatenated measurement vector: per WFS, the x-slope grid (n_s^2,
/// row-major) followed by the y-slope grid.
struct MeasurementLayout {
    std::vector<std::size_t> offset;  // start of WFS g's block
    std::size_t total = 0;

    static MeasurementLayout of(const SystemGeometry& g) {
        MeasurementLayout m;
        for (const auto& w : g.wfs) {
            m.offset.push_back(m.total);
            m.total += 2 * static_cast<std::size_t>(w.n_subap) * w.n_subap;
        }
        return m;
    }
    std::size_t block_size(const SystemGeometry& g, int w) const {
        const auto n = static_cast<std::size_t>(g.wfs[static_cast<std::size_t>(w)].n_subap);
        return n * n;
    }
    std::span<double> sx(std::span<double> v, const SystemGeometry& g, int w) const {
        return v.subspan(offset[static_cast<std::size_t>(w)], block_size(g, w));
    }
    std::span<double> sy(std::span<double> v, const SystemGeometry& g, int w) const {
        return v.subspan(offset[static_cast<std::size_t>(w)] + block_size(g, w), block_size(g, w));
    }
    std::span<const double> sx(std::span<const double> v, const SystemGeometry& g, int w) const {
        return v.subspan(offset[static_cast<std::size_t>(w)], block_size(g, w));
    }
    std::span<const double> sy(std::span<const double> v, const SystemGeometry& g, int w) const {
        return v.subspan(offset[static_cast<std::size_t>(w)] + block_size(g, w), block_size(g, w));
    }
};

/// Concatenated wavelet-coefficient (or nodal-layer) vector, one 2^J x 2^J
/// block per layer.
struct CoeffLayout {
    std::vector<std::size_t> offset;
    std::vector<int> side;  // 2^J per layer
    std::size_t total = 0;

    static CoeffLayout of(const SystemGeometry& g) {
        CoeffLayout c;
        for (const auto& l : g.layers) {
            c.offset.push_back(c.total);
            c.side.push_back(l.n_nodes());
            c.total += static_cast<std::size_t>(l.n_nodes()) * l.n_nodes();
        }
        return c;
    }
    std::span<double> layer(std::span<double> v, int l) const {
        const auto s = static_cast<std::size_t>(side[static_cast<std::size_t>(l)]);
        return v.subspan(offset[static_cast<std::size_t>(l)], s * s);
    }
    std::span<const double> layer(std::span<const double> v, int l) const {
        const auto s = static_cast<std::size_t>(side[static_cast<std::size_t>(l)]);
        return v.subspan(offset[static_cast<std::size_t>(l)], s * s);
    }
};

// ---------------------------------------------------------------------------
// Bilinear interpolation on a centered square nodal grid
// ---------------------------------------------------------------------------

struct BilinearStencil {
    int i0, j0;
    double w00, w01, w10, w11;
};

/// Stencil of the bilinear evaluation at physical point (px, py) on an
/// n-node-per-side grid spanning [-extent/2, extent/2]^2.  Shared by gather
/// and scatter so the pair is an exact adjoint.  Points outside the grid are
/// a hard error: a validated geometry guarantees in-grid evaluation, so an
/// excursion signals a configuration bug and clamping would silently break
/// adjoint consistency.
inline BilinearStencil bilinear_stencil(int n, double extent, double px, double py) {
    const double spacing = extent / (n - 1);
    const double u = (px + extent / 2.0) / spacing;  // column coordinate
    const double t = (py + extent / 2.0) / spacing;  // row coordinate
    constexpr double eps = 1e-9;
    if (u < -eps || u > n - 1 + eps || t < -eps || t > n - 1 + eps)
        throw std::runtime_error("propagation: evaluation point outside layer grid");
    const int j0 = std::min(static_cast<int>(std::floor(u)), n - 2);
    const int i0 = std::min(static_cast<int>(std::floor(t)), n - 2);
    const double fx = u - j0;
    const double fy = t - i0;
    return {std::max(i0, 0), std::max(j0, 0), (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx),
            fy * fx};
}

inline double bilinear_sample(const Grid2D& v, double extent, double px, double py) {
    const auto s = bilinear_stencil(v.rows(), extent, px, py);
    return s.w00 * v(s.i0, s.j0) + s.w01 * v(s.i0, s.j0 + 1) + s.w10 * v(s.i0 + 1, s.j0) +
           s.w11 * v(s.i0 + 1, s.j0 + 1);
}

inline void bilinear_scatter(Grid2D& v, double extent, double px, double py, double w) {
    const auto s = bilinear_stencil(v.rows(), extent, px, py);
    v(s.i0, s.j0) += w * s.w00;
    v(s.i0, s.j0 + 1) += w * s.w01;
    v(s.i0 + 1, s.j0) += w * s.w10;
    v(s.i0 + 1, s.j0 + 1) += w * s.w11;
}

// ---------------------------------------------------------------------------
// Shack-Hartmann operator
// ---------------------------------------------------------------------------

/// Average-slope stencil on the (n_s+1)^2 nodal wavefront: row index i runs
/// along y, column index j along x.  Inactive subapertures produce exact
/// zeros.  The y stencil is the symmetric analogue of the x one (average of
/// the two column differences).
inline void sh_apply(const Grid2D& phi, const WfsConfig& w, std::span<double> sx,
                     std::span<double> sy) {
    const int n = w.n_subap;
    if (phi.rows() != n + 1 || phi.cols() != n + 1)
        throw std::invalid_argument("sh_apply: wavefront grid does not match n_subap+1");
    if (sx.size() != static_cast<std::size_t>(n) * n || sy.size() != sx.size())
        throw std::invalid_argument("sh_apply: slope buffer size mismatch");
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            if (!w.active_mask(i, j)) {
                sx[k] = 0.0;
                sy[k] = 0.0;
                continue;
            }
            sx[k] = 0.5 * ((phi(i, j + 1) - phi(i, j)) + (phi(i + 1, j + 1) - phi(i + 1, j)));
            sy[k] = 0.5 * ((phi(i + 1, j) - phi(i, j)) + (phi(i + 1, j + 1) - phi(i, j + 1)));
        }
    }
}

/// Exact adjoint of sh_apply: scatter-add of the +-1/2 stencil weights over
/// active subapertures only.
inline void sh_transpose_apply(std::span<const double> sx, std::span<const double> sy,
                               const WfsConfig& w, Grid2D& phi) {
    const int n = w.n_subap;
    if (phi.rows() != n + 1 || phi.cols() != n + 1)
        throw std::invalid_argument("sh_transpose_apply: wavefront grid does not match n_subap+1");
    if (sx.size() != static_cast<std::size_t>(n) * n || sy.size() != sx.size())
        throw std::invalid_argument("sh_transpose_apply: slope buffer size mismatch");
    phi.fill(0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (!w.active_mask(i, j)) continue;
            const std::size_t k = static_cast<std::size_t>(i) * n + j;
            const double x = 0.5 * sx[k];
            const double y = 0.5 * sy[k];
            phi(i, j) += -x - y;
            phi(i, j + 1) += x - y;
            phi(i + 1, j) += -x + y;
            phi(i + 1, j + 1) += x + y;
        }
    }
}

// ---------------------------------------------------------------------------
// Geometric propagation
// ---------------------------------------------------------------------------

/// A phase screen at a given altitude: nodal values over a centered square.
/// Both turbulence layers and DM shapes propagate through this one kernel.
struct Screen {
    const Grid2D* values;
    double extent;
    double height;
};

/// Sum of screen evaluations at aperture node (x, y) seen along `star`:
/// evaluation point scale(h)*x + theta*h per screen.
inline double propagate_point(std::span<const Screen> screens, const GuideStar& star, double x,
                              double y) {
    double acc = 0.0;
    for (const auto& s : screens) {
        const double c = star.footprint_scale(s.height);
        acc += bilinear_sample(*s.values, s.extent, c * x + star.theta_x * s.height,
                               c * y + star.theta_y * s.height);
    }
    return acc;
}

/// Wavefront seen by WFS `wfs_index` through all turbulence layers:
/// phi_out is the (n_s+1)^2 nodal grid over the telescope pupil.
inline void propagate(const std::vector<Grid2D>& layers, const SystemGeometry& g, int star_index,
                      Grid2D& phi_out) {
    const auto& star = g.guide_stars[static_cast<std::size_t>(star_index)];
    const int n = g.wfs[static_cast<std::size_t>(star_index)].n_subap + 1;
    if (phi_out.rows() != n || phi_out.cols() != n)
        throw std::invalid_argument("propagate: wavefront grid does not match n_subap+1");
    std::vector<Screen> screens;
    screens.reserve(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l)
        screens.push_back({&layers[l], g.layers[l].extent, g.layers[l].height});
    const double d = g.telescope_diameter / (n - 1);
    for (int i = 0; i < n; ++i) {
        const double y = -g.telescope_diameter / 2.0 + i * d;
        for (int j = 0; j < n; ++j) {
            const double x = -g.telescope_diameter / 2.0 + j * d;
            phi_out(i, j) = propagate_point(screens, star, x, y);
        }
    }
}

/// Adjoint of the star->layer contribution of propagate, restricted to one
/// layer: scatter-adds each aperture nodal value times its bilinear weights
/// into layer_acc.  Restricting to a single layer lets stage 3 of the M
/// decomposition own one layer per task (no concurrent writes).
inline void propagate_transpose_layer(const Grid2D& phi, const SystemGeometry& g, int star_index,
                                      int layer_index, Grid2D& layer_acc) {
    const auto& star = g.guide_stars[static_cast<std::size_t>(star_index)];
    const auto& layer = g.layers[static_cast<std::size_t>(layer_index)];
    const int n = g.wfs[static_cast<std::size_t>(star_index)].n_subap + 1;
    if (phi.rows() != n || phi.cols() != n)
        throw std::invalid_argument("propagate_transpose_layer: wavefront grid mismatch");
    if (layer_acc.rows() != layer.n_nodes() || layer_acc.cols() != layer.n_nodes())
        throw std::invalid_argument("propagate_transpose_layer: layer grid mismatch");
    const double c = star.footprint_scale(layer.height);
    const double d = g.telescope_diameter / (n - 1);
    for (int i = 0; i < n; ++i) {
        const double y = -g.telescope_diameter / 2.0 + i * d;
        for (int j = 0; j < n; ++j) {
            const double x = -g.telescope_diameter / 2.0 + j * d;
            bilinear_scatter(layer_acc, layer.extent, c * x + star.theta_x * layer.height,
                             c * y + star.theta_y * layer.height, phi(i, j));
        }
    }
}

/// Full adjoint over all layers (accumulates; zero the stack first for a
/// plain transpose application).
inline void propagate_transpose(const Grid2D& phi, const SystemGeometry& g, int star_index,
                                std::vector<Grid2D>& layers_acc) {
    for (std::size_t l = 0; l < layers_acc.size(); ++l)
        propagate_transpose_layer(phi, g, star_index, static_cast<int>(l), layers_acc[l]);
}

// ---------------------------------------------------------------------------
// Noise weighting (C_eta^-1)
// ---------------------------------------------------------------------------

/// Per-WFS scalar inverse noise variances (block-diagonal C_eta^-1).
struct NoiseWeights {
    std::vector<double> inv_variance;

    static NoiseWeights of(const SystemGeometry& g) {
        NoiseWeights n;
        for (const auto& w : g.wfs) n.inv_variance.push_back(1.0 / w.noise_variance);
        return n;
    }
};

inline void noise_weight_apply(std::span<double> meas, const NoiseWeights& nw,
                               const MeasurementLayout& lay, const SystemGeometry& g) {
    if (meas.size() != lay.total) throw std::invalid_argument("noise_weight_apply: size mismatch");
    for (std::size_t w = 0; w < g.wfs.size(); ++w) {
        const double s = nw.inv_variance[w];
        const std::size_t n2 = lay.block_size(g, static_cast<int>(w));
        for (std::size_t k = 0; k < 2 * n2; ++k) meas[lay.offset[w] + k] *= s;
    }
}

// ---------------------------------------------------------------------------
// Frequency-domain regularizer (alpha * D)
// ---------------------------------------------------------------------------

/// Diagonal approximation of the inverse layer covariance in the wavelet
/// domain: d_{l,j} = (1/strength_l) * (kappa_j^2 + kappa_0^2)^e with
/// kappa_j = 2^j * 2pi/extent_l, kappa_0 = 2pi/L0, e defaulting to 11/6
/// (inverse Kolmogorov spectrum, von Karman outer-scale cutoff).
struct DiagonalRegularizer {
    std::vector<std::vector<double>> d;  // [layer][scale 0..J]
};

inline DiagonalRegularizer regularizer_build(const SystemGeometry& g) {
    DiagonalRegularizer reg;
    const double kappa0 = 2.0 * std::numbers::pi / g.solver.outer_scale;
    for (const auto& l : g.layers) {
        std::vector<double> per_scale(static_cast<std::size_t>(l.grid_order) + 1);
        for (int j = 0; j <= l.grid_order; ++j) {
            const double kappa = std::ldexp(2.0 * std::numbers::pi / l.extent, j);
            per_scale[static_cast<std::size_t>(j)] =
                std::pow(kappa * kappa + kappa0 * kappa0, g.solver.spectral_exponent) /
                l.relative_strength;
        }
        reg.d.push_back(std::move(per_scale));
    }
    return reg;
}

/// out += alpha * D * coeffs for one layer block.
inline void regularizer_accumulate_layer(std::span<const double> coeffs, int side,
                                         const std::vector<double>& d_scale, double alpha,
                                         std::span<double> out) {
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * side + j;
            out[k] += alpha * d_scale[static_cast<std::size_t>(subband_scale(i, j))] * coeffs[k];
        }
}

/// coeffs <- alpha * D * coeffs across all layers.
inline void regularizer_apply(std::span<double> coeffs, const DiagonalRegularizer& reg,
                              double alpha, const CoeffLayout& lay) {
    if (coeffs.size() != lay.total) throw std::invalid_argument("regularizer_apply: size mismatch");
    for (std::size_t l = 0; l < reg.d.size(); ++l) {
        const int side = lay.side[l];
        auto block = lay.layer(coeffs, static_cast<int>(l));
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * side + j;
                block[k] *= alpha * reg.d[l][static_cast<std::size_t>(subband_scale(i, j))];
            }
    }
}

// ---------------------------------------------------------------------------
// Modified Jacobi preconditioner
// ---------------------------------------------------------------------------

/// Modified Jacobi preconditioner with three modes.
///
///   exact        J = diag(M), probed with canonical basis vectors; desk
///                scale only (guarded by the dense size cap).
///   approximate  per (layer, scale, orientation) sub-band, one probe at the
///                block-center coefficient: J = alpha*D + w_j * t_hat with
///                t_hat the probed fitting-term diagonal and w_j = 1 on
///                detail scales, a configurable boost on the coarse scale.
///   balanced     same probes, but J = (alpha*D + t_hat)^g * (alpha*D)^(1-g).
///                The geometric interpolation pulls the weakly sensed
///                sub-bands (true eigenvalue near alpha*d, Jacobi diagonal
///                dominated by t_hat) and the strongly sensed ones into one
///                cluster, which is what lets a fixed low iteration count
///                converge on underdetermined desk-scale systems.
template <typename ApplyM>
std::vector<double> preconditioner_build(const SystemGeometry& g, const DiagonalRegularizer& reg,
                                         ApplyM&& apply_m, const CoeffLayout& lay) {
    const std::size_t n = lay.total;
    std::vector<double> diag(n, 0.0);
    std::vector<double> e(n, 0.0), me(n, 0.0);

    auto probe = [&](std::size_t k) {
        e[k] = 1.0;
        apply_m(std::span<const double>(e), std::span<double>(me));
        e[k] = 0.0;
        return me[k];
    };

    if (g.solver.precond_mode == PrecondMode::exact) {
        if (n > g.solver.dense_size_cap)
            throw config_error("preconditioner: exact mode needs coefficient dimension <= " +
                               std::to_string(g.solver.dense_size_cap) + ", got " +
                               std::to_string(n));
        for (std::size_t k = 0; k < n; ++k) diag[k] = probe(k);
    } else {
        for (std::size_t l = 0; l < g.layers.size(); ++l) {
            const int side = lay.side[l];
            const int order = g.layers[l].grid_order;
            // coarse (scale 0) plus three orientations per detail scale
            for (int scale = 0; scale <= order; ++scale) {
                const int block = scale == 0 ? 1 : 1 << (scale - 1);
                for (int orient = scale == 0 ? 0 : 1; orient <= (scale == 0 ? 0 : 3); ++orient) {
                    const int oi = orient >= 2 ? block : 0;
                    const int oj = (orient == 1 || orient == 3) ? block : 0;
                    const int ci = oi + block / 2;
                    const int cj = oj + block / 2;
                    const std::size_t rep =
                        lay.offset[l] + static_cast<std::size_t>(ci) * side + cj;
                    const double alpha_d = g.solver.alpha * reg.d[l][static_cast<std::size_t>(scale)];
                    const double probed = probe(rep);
                    double value;
                    if (g.solver.precond_mode == PrecondMode::balanced) {
                        const double ex = g.solver.precond_balance_exponent;
                        value = std::pow(probed, ex) * std::pow(alpha_d, 1.0 - ex);
                    } else {
                        const double t_hat = probed - alpha_d;
                        const double w = scale == 0 ? g.solver.precond_coarse_weight : 1.0;
                        value = alpha_d + w * t_hat;
                    }
                    for (int i = oi; i < oi + block; ++i)
                        for (int j = oj; j < oj + block; ++j)
                            diag[lay.offset[l] + static_cast<std::size_t>(i) * side + j] = value;
                }
            }
        }
    }

    for (double v : diag)
        if (!(v > 0.0))
            throw std::runtime_error(
                "preconditioner: non-positive diagonal entry (operator symmetry broken?)");
    return diag;
}

}  // namespace fewha
