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

#include <functional>
#include <string>
#include <vector>

#include "fewha/dense.hpp"
#include "fewha/pcg.hpp"
#include "fewha/reconstructor.hpp"
#include "fewha/simulation.hpp"

namespace fewha {

struct CheckResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double tolerance = 0.0;
    std::string note;
};

struct VerifyOptions {
    int adjoint_trials = 1000;
    std::uint64_t seed = 20260809;
    int threads = 0;  // 0 = max(L, W)
};

inline bool all_passed(const std::vector<CheckResult>& checks) {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

namespace detail {

/// Concatenated per-WFS wavefront-grid vector (column space of Gamma).
struct WavefrontLayout {
    std::vector<std::size_t> offset;
    std::vector<int> side;
    std::size_t total = 0;

    static WavefrontLayout of(const SystemGeometry& g) {
        WavefrontLayout w;
        for (const auto& wc : g.wfs) {
            w.offset.push_back(w.total);
            w.side.push_back(wc.n_subap + 1);
            w.total += static_cast<std::size_t>(wc.n_subap + 1) * (wc.n_subap + 1);
        }
        return w;
    }
};

inline void fill_gaussian(GaussianStream& gs, std::span<double> v) {
    for (double& x : v) x = gs();
}

/// |<Ax,y> - <x,A^T y>| scaled by the norm products; robust at 1e-12 even
/// when the inner products nearly cancel.
inline double adjoint_defect(std::span<const double> ax, std::span<const double> y,
                             std::span<const double> x, std::span<const double> aty) {
    const double lhs = dot(ax, y);
    const double rhs = dot(x, aty);
    const double scale = 0.5 * (norm2(ax) * norm2(y) + norm2(x) * norm2(aty));
    return scale == 0.0 ? std::abs(lhs - rhs) : std::abs(lhs - rhs) / scale;
}

}  // namespace detail

/// Full operator correctness suite: dense-oracle equivalence (desk scale,
/// refused above the size cap), randomized adjoint / linearity / SPD checks,
/// PCG against a dense Cholesky solve, and wavelet properties.  Uses the
/// Reconstructor entry points, so fault fixtures in the config surface here.
inline std::vector<CheckResult> run_verification(const SystemGeometry& geom,
                                                 const VerifyOptions& opt = {}) {
    std::vector<CheckResult> out;
    auto add = [&](const std::string& name, double measured, double tol, const std::string& note = "") {
        out.push_back({name, measured <= tol, measured, tol, note});
    };

    Reconstructor rec(geom, opt.threads);
    const auto& g = rec.geometry();
    const auto& mlay = rec.measurement_layout();
    const auto& clay = rec.coeff_layout();
    const auto wlay = detail::WavefrontLayout::of(g);
    const int W = static_cast<int>(g.wfs.size());
    const int L = static_cast<int>(g.layers.size());
    GaussianStream gs(opt.seed);

    // -- stacked matrix-free operator entry points ---------------------------

    auto gamma = [&](std::span<const double> wf, std::span<double> meas) {
        for (int w = 0; w < W; ++w) {
            const int n = wlay.side[static_cast<std::size_t>(w)];
            Grid2D phi(n, n);
            auto slice = wf.subspan(wlay.offset[static_cast<std::size_t>(w)],
                                    static_cast<std::size_t>(n) * n);
            std::copy(slice.begin(), slice.end(), phi.data());
            rec.sh(w, phi, mlay.sx(meas, g, w), mlay.sy(meas, g, w));
        }
    };
    auto gamma_t = [&](std::span<const double> meas, std::span<double> wf) {
        for (int w = 0; w < W; ++w) {
            const int n = wlay.side[static_cast<std::size_t>(w)];
            Grid2D phi(n, n);
            rec.sh_transpose(w, mlay.sx(meas, g, w), mlay.sy(meas, g, w), phi);
            auto slice = wf.subspan(wlay.offset[static_cast<std::size_t>(w)],
                                    static_cast<std::size_t>(n) * n);
            std::copy(phi.flat().begin(), phi.flat().end(), slice.begin());
        }
    };
    auto layers_from_flat = [&](std::span<const double> v) {
        std::vector<Grid2D> grids;
        for (int l = 0; l < L; ++l) {
            const int n = clay.side[static_cast<std::size_t>(l)];
            Grid2D grid(n, n);
            auto slice = clay.layer(v, l);
            std::copy(slice.begin(), slice.end(), grid.data());
            grids.push_back(std::move(grid));
        }
        return grids;
    };
    auto prop = [&](std::span<const double> layers_flat, std::span<double> wf) {
        const auto grids = layers_from_flat(layers_flat);
        for (int w = 0; w < W; ++w) {
            const int n = wlay.side[static_cast<std::size_t>(w)];
            Grid2D phi(n, n);
            propagate(grids, g, w, phi);
            auto slice = wf.subspan(wlay.offset[static_cast<std::size_t>(w)],
                                    static_cast<std::size_t>(n) * n);
            std::copy(phi.flat().begin(), phi.flat().end(), slice.begin());
        }
    };
    auto prop_t = [&](std::span<const double> wf, std::span<double> layers_flat) {
        for (int l = 0; l < L; ++l) {
            const int n = clay.side[static_cast<std::size_t>(l)];
            Grid2D acc(n, n);
            for (int w = 0; w < W; ++w) {
                const int nw = wlay.side[static_cast<std::size_t>(w)];
                Grid2D phi(nw, nw);
                auto slice = wf.subspan(wlay.offset[static_cast<std::size_t>(w)],
                                        static_cast<std::size_t>(nw) * nw);
                std::copy(slice.begin(), slice.end(), phi.data());
                propagate_transpose_layer(phi, g, w, l, acc);
            }
            auto dst = clay.layer(layers_flat, l);
            std::copy(acc.flat().begin(), acc.flat().end(), dst.begin());
        }
    };
    auto per_layer_transform = [&](auto&& method) {
        return [&, method](std::span<const double> in, std::span<double> v) {
            std::copy(in.begin(), in.end(), v.begin());
            for (int l = 0; l < L; ++l) {
                const int n = clay.side[static_cast<std::size_t>(l)];
                Grid2D grid(n, n);
                auto slice = clay.layer(v, l);
                std::copy(slice.begin(), slice.end(), grid.data());
                method(rec.wavelet(), grid);
                std::copy(grid.flat().begin(), grid.flat().end(), slice.begin());
            }
        };
    };
    auto w_fwd = per_layer_transform([](const Wavelet2D& w, Grid2D& grid) { w.forward(grid); });
    auto w_inv = per_layer_transform([](const Wavelet2D& w, Grid2D& grid) { w.inverse(grid); });
    auto w_invt =
        per_layer_transform([](const Wavelet2D& w, Grid2D& grid) { w.inverse_transposed(grid); });
    auto noise = [&](std::span<const double> in, std::span<double> outv) {
        std::copy(in.begin(), in.end(), outv.begin());
        noise_weight_apply(outv, rec.noise_weights(), mlay, g);
    };
    auto alpha_d = [&](std::span<const double> in, std::span<double> outv) {
        std::copy(in.begin(), in.end(), outv.begin());
        regularizer_apply(outv, rec.regularizer(), g.solver.alpha, clay);
    };
    auto m_op = [&](std::span<const double> in, std::span<double> outv) { rec.apply_M(in, outv); };

    // -- randomized adjoint, linearity, SPD checks ---------------------------

    auto adjoint_check = [&](const std::string& name, std::size_t in_dim, std::size_t out_dim,
                             auto&& fwd, auto&& adj, double tol) {
        std::vector<double> x(in_dim), y(out_dim), ax(out_dim), aty(in_dim);
        double worst = 0.0;
        for (int t = 0; t < opt.adjoint_trials; ++t) {
            detail::fill_gaussian(gs, x);
            detail::fill_gaussian(gs, y);
            fwd(std::span<const double>(x), std::span<double>(ax));
            adj(std::span<const double>(y), std::span<double>(aty));
            worst = std::max(worst, detail::adjoint_defect(ax, y, x, aty));
        }
        add("adjoint/" + name, worst, tol,
            std::to_string(opt.adjoint_trials) + " randomized trials");
    };

    adjoint_check("sh", wlay.total, mlay.total, gamma, gamma_t, 1e-12);
    adjoint_check("propagation", clay.total, wlay.total, prop, prop_t, 1e-12);
    adjoint_check("wavelet", clay.total, clay.total, w_inv, w_invt, 1e-12);

    auto linearity_check = [&](const std::string& name, std::size_t in_dim, std::size_t out_dim,
                               auto&& fwd) {
        std::vector<double> x(in_dim), y(in_dim), xy(in_dim), fx(out_dim), fy(out_dim),
            fxy(out_dim), ref(out_dim);
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            detail::fill_gaussian(gs, x);
            detail::fill_gaussian(gs, y);
            const double a = gs(), b = gs();
            for (std::size_t k = 0; k < in_dim; ++k) xy[k] = a * x[k] + b * y[k];
            fwd(std::span<const double>(x), std::span<double>(fx));
            fwd(std::span<const double>(y), std::span<double>(fy));
            fwd(std::span<const double>(xy), std::span<double>(fxy));
            for (std::size_t k = 0; k < out_dim; ++k) ref[k] = a * fx[k] + b * fy[k];
            worst = std::max(worst, rel_err(fxy, ref));
        }
        add("linearity/" + name, worst, 1e-12);
    };
    linearity_check("sh", wlay.total, mlay.total, gamma);
    linearity_check("propagation", clay.total, wlay.total, prop);
    linearity_check("wavelet", clay.total, clay.total, w_inv);
    linearity_check("m", clay.total, clay.total, m_op);

    {
        std::vector<double> x(clay.total), y(clay.total), mx(clay.total), my(clay.total);
        double worst_sym = 0.0, worst_pos = 1.0;
        for (int t = 0; t < 20; ++t) {
            detail::fill_gaussian(gs, x);
            detail::fill_gaussian(gs, y);
            rec.apply_M(x, mx);
            rec.apply_M(y, my);
            worst_sym = std::max(worst_sym, detail::adjoint_defect(mx, y, x, my));
            worst_pos = std::min(worst_pos, dot(mx, x) / (norm2(x) * norm2(x)));
        }
        add("spd/symmetry", worst_sym, 1e-10, "20 randomized trials");
        out.push_back({"spd/positivity", worst_pos > 0.0, worst_pos, 0.0,
                       "min Rayleigh quotient over 20 trials (must be > 0)"});
    }

    {
        // planar wavefront: slopes constant, equal to gradient * subaperture size
        double worst = 0.0;
        for (int w = 0; w < W; ++w) {
            const auto& wc = g.wfs[static_cast<std::size_t>(w)];
            const int n = wc.n_subap + 1;
            const double d = g.telescope_diameter / (n - 1);
            const double ax = 0.37, ay = -1.21;
            Grid2D phi(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) phi(i, j) = ax * (j * d) + ay * (i * d);
            std::vector<double> sx(static_cast<std::size_t>(wc.n_subap) * wc.n_subap),
                sy(sx.size());
            rec.sh(w, phi, sx, sy);
            for (int i = 0; i < wc.n_subap; ++i)
                for (int j = 0; j < wc.n_subap; ++j) {
                    if (!wc.active_mask(i, j)) continue;
                    const std::size_t k = static_cast<std::size_t>(i) * wc.n_subap + j;
                    worst = std::max(worst, std::abs(sx[k] - ax * d) / std::abs(ax * d));
                    worst = std::max(worst, std::abs(sy[k] - ay * d) / std::abs(ay * d));
                }
        }
        add("sh/planar_slopes", worst, 1e-12);
    }

    {
        // wavelet orthonormality and perfect reconstruction at this config's order
        double worst_norm = 0.0, worst_rec = 0.0;
        for (int l = 0; l < L; ++l) {
            const int n = clay.side[static_cast<std::size_t>(l)];
            Grid2D grid(n, n);
            std::vector<double> orig(static_cast<std::size_t>(n) * n);
            detail::fill_gaussian(gs, orig);
            std::copy(orig.begin(), orig.end(), grid.data());
            rec.wavelet().forward(grid);
            worst_norm = std::max(worst_norm,
                                  std::abs(norm2(grid.flat()) / norm2(orig) - 1.0));
            rec.wavelet().inverse(grid);
            double diff = 0.0;
            for (std::size_t k = 0; k < orig.size(); ++k)
                diff = std::max(diff, std::abs(grid.data()[k] - orig[k]));
            worst_rec = std::max(worst_rec, diff / norm_inf(orig));
        }
        add("wavelet/orthonormality", worst_norm, 1e-12);
        add("wavelet/reconstruction", worst_rec, 1e-10);
    }

    // -- dense oracles (size-capped) ------------------------------------------

    if (clay.total > g.solver.dense_size_cap) {
        out.push_back({"dense/size_cap", true, static_cast<double>(clay.total),
                       static_cast<double>(g.solver.dense_size_cap),
                       "coefficient dimension exceeds the dense-oracle cap; dense checks skipped"});
        return out;
    }

    const DenseMatrix gamma_d = DenseMatrix::from_operator(wlay.total, mlay.total, gamma);
    const DenseMatrix gamma_t_d = DenseMatrix::from_operator(mlay.total, wlay.total, gamma_t);
    const DenseMatrix p_d = DenseMatrix::from_operator(clay.total, wlay.total, prop);
    const DenseMatrix p_t_d = DenseMatrix::from_operator(wlay.total, clay.total, prop_t);
    const DenseMatrix w_fwd_d = DenseMatrix::from_operator(clay.total, clay.total, w_fwd);
    const DenseMatrix w_inv_d = DenseMatrix::from_operator(clay.total, clay.total, w_inv);
    const DenseMatrix w_invt_d = DenseMatrix::from_operator(clay.total, clay.total, w_invt);
    const DenseMatrix noise_d = DenseMatrix::from_operator(mlay.total, mlay.total, noise);
    const DenseMatrix alpha_d_d = DenseMatrix::from_operator(clay.total, clay.total, alpha_d);
    const DenseMatrix m_d = DenseMatrix::from_operator(clay.total, clay.total, m_op);

    auto product_check = [&](const std::string& name, const DenseMatrix& mat, auto&& op) {
        std::vector<double> x(mat.cols), y(mat.rows);
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            detail::fill_gaussian(gs, x);
            op(std::span<const double>(x), std::span<double>(y));
            worst = std::max(worst, rel_err(y, mat.multiply(x)));
        }
        add("dense/" + name + "_product", worst, 1e-10);
    };
    product_check("sh", gamma_d, gamma);
    product_check("sh_t", gamma_t_d, gamma_t);
    product_check("propagation", p_d, prop);
    product_check("propagation_t", p_t_d, prop_t);
    product_check("wavelet_fwd", w_fwd_d, w_fwd);
    product_check("wavelet_inv", w_inv_d, w_inv);
    product_check("wavelet_invt", w_invt_d, w_invt);
    product_check("noise", noise_d, noise);
    product_check("alpha_d", alpha_d_d, alpha_d);
    product_check("m", m_d, m_op);

    add("dense/sh_transpose_pair", gamma_t_d.rel_distance(gamma_d.transposed()), 1e-12);
    add("dense/propagation_transpose_pair", p_t_d.rel_distance(p_d.transposed()), 1e-12);
    add("dense/wavelet_transpose_pair", w_invt_d.rel_distance(w_inv_d.transposed()), 1e-12);

    {
        DenseMatrix eye(clay.total, clay.total);
        for (std::size_t k = 0; k < clay.total; ++k) eye.at(k, k) = 1.0;
        add("dense/wavelet_inverse_pair", w_inv_d.multiply(w_fwd_d).rel_distance(eye), 1e-10);
        add("dense/wavelet_orthogonal", w_fwd_d.transposed().multiply(w_fwd_d).rel_distance(eye),
            1e-10);
    }

    // M assembled from the dense factors versus the fused matrix-free pipeline
    DenseMatrix m_composed(clay.total, clay.total);
    {
        const DenseMatrix chain = gamma_d.multiply(p_d).multiply(w_inv_d);  // meas x N
        DenseMatrix weighted = chain;
        for (std::size_t w = 0; w < g.wfs.size(); ++w) {
            const double inv_var = rec.noise_weights().inv_variance[w];
            const std::size_t n2 = mlay.block_size(g, static_cast<int>(w));
            for (std::size_t r = 0; r < 2 * n2; ++r)
                for (std::size_t c = 0; c < weighted.cols; ++c)
                    weighted.at(mlay.offset[w] + r, c) *= inv_var;
        }
        m_composed = chain.transposed().multiply(weighted);
        for (std::size_t k = 0; k < clay.total; ++k)
            for (std::size_t c = 0; c < clay.total; ++c)
                m_composed.at(k, c) += alpha_d_d.at(k, c);
        add("dense/m_composition", m_d.rel_distance(m_composed), 1e-10,
            "fused apply vs composed dense factors");
        add("dense/m_symmetry", m_d.rel_distance(m_d.transposed()), 1e-10);

        // RHS chain b = W^-T P^T Gamma^T C_eta^-1 s against the composed factors
        const DenseMatrix rhs_dense = weighted.transposed();
        std::vector<double> s(mlay.total), b(clay.total);
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            detail::fill_gaussian(gs, s);
            rec.build_rhs(s, b);
            worst = std::max(worst, rel_err(b, rhs_dense.multiply(s)));
        }
        add("dense/rhs_composition", worst, 1e-10, "build_rhs vs composed dense factors");
    }

    {
        // PCG against the dense Cholesky solve: 50 cold-start iterations
        rec.build_preconditioner();
        std::vector<double> b(clay.total);
        detail::fill_gaussian(gs, b);
        std::vector<double> c(clay.total, 0.0), r(b), p(clay.total, 0.0), q(clay.total, 0.0);
        PcgScalars sc;
        pcg_solve(m_op, rec.preconditioner(), c, r, p, q, sc, 50);
        const double rel_res = norm2(r) / norm2(b);
        add("pcg/residual", rel_res, 1e-6, "relative residual after 50 cold iterations");
        const std::vector<double> direct = cholesky_solve(m_composed, b);
        add("pcg/dense_match", rel_err(c, direct), 1e-6, "vs dense Cholesky solve");
    }

    {
        // exact-probe preconditioner equals diag(M)
        SystemGeometry exact_geom = g;
        exact_geom.solver.precond_mode = PrecondMode::exact;
        const auto diag = preconditioner_build(exact_geom, rec.regularizer(), m_op, clay);
        std::vector<double> md(clay.total);
        for (std::size_t k = 0; k < clay.total; ++k) md[k] = m_d.at(k, k);
        add("precond/exact_diag", rel_err(diag, md), 1e-10);
    }

    return out;
}

}  // namespace fewha
