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

#include <chrono>
#include <cstring>
#include <span>
#include <vector>

#include "fewha/geometry.hpp"
#include "fewha/grid.hpp"
#include "fewha/operators.hpp"
#include "fewha/pcg.hpp"
#include "fewha/thread_pool.hpp"
#include "fewha/wavelet.hpp"

namespace fewha {

/// Per-DM actuator command grids.
struct MirrorShapes {
    std::vector<Grid2D> dm;

    static MirrorShapes zero(const SystemGeometry& g) {
        MirrorShapes a;
        for (const auto& d : g.dms) a.dm.emplace_back(d.n_act, d.n_act);
        return a;
    }
    bool is_zero() const {
        for (const auto& m : dm)
            for (double v : m.flat())
                if (v != 0.0) return false;
        return true;
    }
    bool bitwise_equal(const MirrorShapes& o) const {
        if (dm.size() != o.dm.size()) return false;
        for (std::size_t m = 0; m < dm.size(); ++m) {
            if (!dm[m].same_shape(o.dm[m])) return false;
            if (std::memcmp(dm[m].data(), o.dm[m].data(), dm[m].size() * sizeof(double)) != 0)
                return false;
        }
        return true;
    }
};

/// Buffers carried across loop steps: previous solution, right-hand side,
/// residual, PCG directions and scalars, and the two-step mirror history.
struct ReconstructorState {
    std::vector<double> c, b, r, p, q;  // c^(0), b^(0), r^(0), carried PCG directions
    PcgScalars pcg;
    MirrorShapes a_prev2, a_prev;  // a^(-1), a^(0)

    static ReconstructorState zero(const SystemGeometry& g) {
        ReconstructorState st;
        const std::size_t n = g.coeff_dim();
        st.c.assign(n, 0.0);
        st.b.assign(n, 0.0);
        st.r.assign(n, 0.0);
        st.p.assign(n, 0.0);
        st.q.assign(n, 0.0);
        st.a_prev2 = MirrorShapes::zero(g);
        st.a_prev = MirrorShapes::zero(g);
        return st;
    }

    /// Warm-restart reset: zero every carried buffer; the next step behaves
    /// as a cold start.
    void reset() {
        auto zero_out = [](std::vector<double>& v) { v.assign(v.size(), 0.0); };
        zero_out(c);
        zero_out(b);
        zero_out(r);
        zero_out(p);
        zero_out(q);
        pcg.reset();
        for (auto& m : a_prev2.dm) m.fill(0.0);
        for (auto& m : a_prev.dm) m.fill(0.0);
    }
};

struct StepTelemetry {
    int step = -1;
    std::vector<double> rho;  // preconditioned residual norm per PCG iteration
    double stage1_us = 0.0;   // per-layer W^-1 kernels
    double stage2_us = 0.0;   // per-WFS Gamma/P/C_eta^-1/Gamma^T kernels (incl. RHS)
    double stage3_us = 0.0;   // per-layer P^T / W^-T / alpha D kernels (incl. RHS)
    double pcg_us = 0.0;
    double total_us = 0.0;
};

/// The FEWHA core: owns the operator bindings (wavelet, regularizer, noise
/// weights, preconditioner) for one geometry and executes the reconstruction
/// step.  apply_M runs the three-stage fork-barrier decomposition; every
/// output element is written by exactly one task with a fixed internal
/// reduction order (ascending guide-star index), so results are bitwise
/// identical for any thread count.
class Reconstructor {
public:
    explicit Reconstructor(SystemGeometry geom, int threads = 0)
        : geom_(std::move(geom)),
          wavelet_(geom_.solver.wavelet_order),
          reg_(regularizer_build(geom_)),
          mlay_(MeasurementLayout::of(geom_)),
          clay_(CoeffLayout::of(geom_)),
          noise_(NoiseWeights::of(geom_)),
          pool_(threads > 0 ? threads : default_threads(geom_)),
          sh_fault_(geom_.solver.fault == "sh_adjoint" ? 1.0 + 1e-6 : 1.0) {
        const std::size_t L = geom_.layers.size();
        const std::size_t W = geom_.wfs.size();
        layer_work_.reserve(L);
        for (const auto& l : geom_.layers) layer_work_.emplace_back(l.n_nodes(), l.n_nodes());
        wf_work_.reserve(W);
        slope_work_.resize(W);
        for (const auto& w : geom_.wfs) {
            wf_work_.emplace_back(w.n_subap + 1, w.n_subap + 1);
            slope_work_[wf_work_.size() - 1].assign(
                2 * static_cast<std::size_t>(w.n_subap) * w.n_subap, 0.0);
        }
        meas_work_.assign(mlay_.total, 0.0);
        b1_.assign(clay_.total, 0.0);
    }

    static int default_threads(const SystemGeometry& g) {
        return static_cast<int>(std::max(g.layers.size(), g.wfs.size()));
    }

    const SystemGeometry& geometry() const { return geom_; }
    const Wavelet2D& wavelet() const { return wavelet_; }
    const DiagonalRegularizer& regularizer() const { return reg_; }
    const MeasurementLayout& measurement_layout() const { return mlay_; }
    const CoeffLayout& coeff_layout() const { return clay_; }
    const NoiseWeights& noise_weights() const { return noise_; }
    int threads() const { return pool_.degree(); }
    const StepTelemetry& last_telemetry() const { return telemetry_; }

    // -- individual operator entry points (also used by the verification
    //    suite, so the fault fixture below flows through them) --------------

    void sh(int w, const Grid2D& phi, std::span<double> sx, std::span<double> sy) const {
        sh_apply(phi, geom_.wfs[static_cast<std::size_t>(w)], sx, sy);
    }

    void sh_transpose(int w, std::span<const double> sx, std::span<const double> sy,
                      Grid2D& phi) const {
        sh_transpose_apply(sx, sy, geom_.wfs[static_cast<std::size_t>(w)], phi);
        if (sh_fault_ != 1.0)
            for (double& v : phi.flat()) v *= sh_fault_;
    }

    /// M c = (W^-T A^T C_eta^-1 A W^-1 + alpha D) c via the three-stage
    /// decomposition.  Stages touch disjoint buffers; barriers in between.
    /// c_in and c_out must not alias (stage 3 reads c_in after writing c_out).
    void apply_M(std::span<const double> c_in, std::span<double> c_out) {
        if (c_in.size() != clay_.total || c_out.size() != clay_.total)
            throw std::invalid_argument("apply_M: coefficient length mismatch");
        const int L = static_cast<int>(geom_.layers.size());
        const int W = static_cast<int>(geom_.wfs.size());

        // stage 1: per layer, phi_l = W^-1 c_l
        auto t0 = now();
        pool_.parallel_for(L, [&](int l) {
            auto block = clay_.layer(c_in, l);
            std::copy(block.begin(), block.end(), layer_work_[static_cast<std::size_t>(l)].data());
            wavelet_.inverse(layer_work_[static_cast<std::size_t>(l)]);
        });
        auto t1 = now();

        // stage 2: per WFS, psi_g = Gamma^T C_eta^-1 Gamma P phi
        pool_.parallel_for(W, [&](int w) {
            auto& wf = wf_work_[static_cast<std::size_t>(w)];
            auto& sl = slope_work_[static_cast<std::size_t>(w)];
            const std::size_t n2 = sl.size() / 2;
            propagate(layer_work_, geom_, w, wf);
            std::span<double> sx(sl.data(), n2), sy(sl.data() + n2, n2);
            sh(w, wf, sx, sy);
            const double inv_var = noise_.inv_variance[static_cast<std::size_t>(w)];
            for (double& v : sl) v *= inv_var;
            sh_transpose(w, sx, sy, wf);
        });
        auto t2 = now();

        // stage 3: per layer, out_l = W^-T sum_g P_g^T psi_g + alpha D c_l
        pool_.parallel_for(L, [&](int l) {
            auto& acc = layer_work_[static_cast<std::size_t>(l)];
            acc.fill(0.0);
            for (int w = 0; w < W; ++w)
                propagate_transpose_layer(wf_work_[static_cast<std::size_t>(w)], geom_, w, l, acc);
            wavelet_.inverse_transposed(acc);
            auto out = clay_.layer(c_out, l);
            std::copy(acc.flat().begin(), acc.flat().end(), out.begin());
            regularizer_accumulate_layer(clay_.layer(c_in, l), clay_.side[static_cast<std::size_t>(l)],
                                         reg_.d[static_cast<std::size_t>(l)], geom_.solver.alpha, out);
        });
        auto t3 = now();

        telemetry_.stage1_us += us(t0, t1);
        telemetry_.stage2_us += us(t1, t2);
        telemetry_.stage3_us += us(t2, t3);
    }

    /// b = W^-T A^T C_eta^-1 s: per-WFS stage, barrier, per-layer stage.
    void build_rhs(std::span<const double> meas, std::span<double> b_out) {
        if (meas.size() != mlay_.total || b_out.size() != clay_.total)
            throw std::invalid_argument("build_rhs: length mismatch");
        const int L = static_cast<int>(geom_.layers.size());
        const int W = static_cast<int>(geom_.wfs.size());

        auto t0 = now();
        pool_.parallel_for(W, [&](int w) {
            auto& sl = slope_work_[static_cast<std::size_t>(w)];
            const std::size_t n2 = sl.size() / 2;
            const double inv_var = noise_.inv_variance[static_cast<std::size_t>(w)];
            auto in_x = mlay_.sx(meas, geom_, w);
            auto in_y = mlay_.sy(meas, geom_, w);
            for (std::size_t k = 0; k < n2; ++k) sl[k] = in_x[k] * inv_var;
            for (std::size_t k = 0; k < n2; ++k) sl[n2 + k] = in_y[k] * inv_var;
            sh_transpose(w, std::span<const double>(sl.data(), n2),
                         std::span<const double>(sl.data() + n2, n2),
                         wf_work_[static_cast<std::size_t>(w)]);
        });
        auto t1 = now();
        pool_.parallel_for(L, [&](int l) {
            auto& acc = layer_work_[static_cast<std::size_t>(l)];
            acc.fill(0.0);
            for (int w = 0; w < W; ++w)
                propagate_transpose_layer(wf_work_[static_cast<std::size_t>(w)], geom_, w, l, acc);
            wavelet_.inverse_transposed(acc);
            auto out = clay_.layer(b_out, l);
            std::copy(acc.flat().begin(), acc.flat().end(), out.begin());
        });
        auto t2 = now();
        telemetry_.stage2_us += us(t0, t1);
        telemetry_.stage3_us += us(t1, t2);
    }

    /// Builds (or rebuilds) the Jacobi preconditioner per the configured mode.
    void build_preconditioner() {
        precond_ = preconditioner_build(
            geom_, reg_, [this](std::span<const double> in, std::span<double> out) { apply_M(in, out); },
            clay_);
    }
    const std::vector<double>& preconditioner() const { return precond_; }

    /// Simulated slopes of the DM shapes along every WFS direction, added
    /// into meas (the pseudo open-loop correction Gamma a^(-1)).
    void add_dm_slopes(const MirrorShapes& a, std::span<double> meas) {
        const int W = static_cast<int>(geom_.wfs.size());
        std::vector<Screen> screens = dm_screens(a);
        pool_.parallel_for(W, [&](int w) {
            auto& wf = wf_work_[static_cast<std::size_t>(w)];
            auto& sl = slope_work_[static_cast<std::size_t>(w)];
            const std::size_t n2 = sl.size() / 2;
            const auto& star = geom_.guide_stars[static_cast<std::size_t>(w)];
            const int n = geom_.wfs[static_cast<std::size_t>(w)].n_subap + 1;
            const double d = geom_.telescope_diameter / (n - 1);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    wf(i, j) = propagate_point(screens, star, -geom_.telescope_diameter / 2.0 + j * d,
                                               -geom_.telescope_diameter / 2.0 + i * d);
            std::span<double> sx(sl.data(), n2), sy(sl.data() + n2, n2);
            sh(w, wf, sx, sy);
            auto out_x = mlay_.sx(meas, geom_, w);
            auto out_y = mlay_.sy(meas, geom_, w);
            for (std::size_t k = 0; k < n2; ++k) out_x[k] += sx[k];
            for (std::size_t k = 0; k < n2; ++k) out_y[k] += sy[k];
        });
    }

    /// Fitting for L = M: per layer, W^-1 then bilinear resampling onto the
    /// paired DM's actuator grid (identity when the grids coincide).
    MirrorShapes fit_to_mirrors(std::span<const double> coeffs) {
        MirrorShapes a = MirrorShapes::zero(geom_);
        const int L = static_cast<int>(geom_.layers.size());
        pool_.parallel_for(L, [&](int l) {
            auto& grid = layer_work_[static_cast<std::size_t>(l)];
            auto block = clay_.layer(coeffs, l);
            std::copy(block.begin(), block.end(), grid.data());
            wavelet_.inverse(grid);
            const auto& dm = geom_.dms[static_cast<std::size_t>(l)];
            auto& out = a.dm[static_cast<std::size_t>(l)];
            if (dm.n_act == grid.rows()) {
                std::copy(grid.flat().begin(), grid.flat().end(), out.data());
                return;
            }
            const double da = dm.extent / (dm.n_act - 1);
            for (int i = 0; i < dm.n_act; ++i)
                for (int j = 0; j < dm.n_act; ++j)
                    out(i, j) = bilinear_sample(grid, dm.extent, -dm.extent / 2.0 + j * da,
                                                -dm.extent / 2.0 + i * da);
        });
        return a;
    }

    /// One loop step: pseudo open-loop correction (closed loop), RHS,
    /// incremental residual, warm-restarted PCG, fitting, gain control, and
    /// the two-step history rotation.
    MirrorShapes step(ReconstructorState& st, std::span<const double> meas) {
        if (precond_.empty()) build_preconditioner();
        telemetry_ = StepTelemetry{};
        telemetry_.step = ++step_counter_;
        const auto t_start = now();

        std::copy(meas.begin(), meas.end(), meas_work_.begin());
        if (geom_.loop_mode == LoopMode::closed) add_dm_slopes(st.a_prev2, meas_work_);

        build_rhs(meas_work_, b1_);

        // r_bar = (b^(1) - b^(0)) + r^(0); valid because r^(0) = b^(0) - M c^(0)
        for (std::size_t k = 0; k < b1_.size(); ++k) st.r[k] += b1_[k] - st.b[k];
        std::swap(st.b, b1_);

        const auto t_pcg = now();
        telemetry_.rho = pcg_solve(
            [this](std::span<const double> in, std::span<double> out) { apply_M(in, out); },
            precond_, std::span<double>(st.c), std::span<double>(st.r), std::span<double>(st.p),
            std::span<double>(st.q), st.pcg, geom_.solver.pcg_max_iter,
            geom_.solver.pcg_tolerance);
        telemetry_.pcg_us = us(t_pcg, now());

        MirrorShapes a_tilde = fit_to_mirrors(st.c);

        MirrorShapes a_next = MirrorShapes::zero(geom_);
        for (std::size_t m = 0; m < a_next.dm.size(); ++m) {
            auto an = a_next.dm[m].flat();
            auto at = a_tilde.dm[m].flat();
            auto a0 = st.a_prev.dm[m].flat();
            auto a1 = st.a_prev2.dm[m].flat();
            if (geom_.loop_mode == LoopMode::closed) {
                for (std::size_t k = 0; k < an.size(); ++k)
                    an[k] = a0[k] + geom_.gain * (at[k] - a1[k]);
            } else {
                for (std::size_t k = 0; k < an.size(); ++k)
                    an[k] = (1.0 - geom_.gain) * a0[k] + geom_.gain * at[k];
            }
        }

        st.a_prev2 = std::move(st.a_prev);
        st.a_prev = a_next;

        telemetry_.total_us = us(t_start, now());
        return a_next;
    }

    std::vector<Screen> dm_screens(const MirrorShapes& a) const {
        std::vector<Screen> screens;
        screens.reserve(a.dm.size());
        for (std::size_t m = 0; m < a.dm.size(); ++m)
            screens.push_back(
                {&a.dm[m], geom_.dms[m].extent, geom_.dms[m].conjugation_height});
        return screens;
    }

private:
    using clock = std::chrono::steady_clock;
    static clock::time_point now() { return clock::now(); }
    static double us(clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::micro>(b - a).count();
    }

    SystemGeometry geom_;
    Wavelet2D wavelet_;
    DiagonalRegularizer reg_;
    MeasurementLayout mlay_;
    CoeffLayout clay_;
    NoiseWeights noise_;
    ThreadPool pool_;
    double sh_fault_;

    std::vector<Grid2D> layer_work_;           // L nodal grids
    std::vector<Grid2D> wf_work_;              // per-WFS wavefront grids
    std::vector<std::vector<double>> slope_work_;  // per-WFS sx|sy scratch
    std::vector<double> meas_work_, b1_;
    std::vector<double> precond_;
    StepTelemetry telemetry_;
    int step_counter_ = -1;
};

}  // namespace fewha
