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

#include <cstdint>
#include <random>
#include <vector>

#include "fewha/fft.hpp"
#include "fewha/geometry.hpp"
#include "fewha/grid.hpp"
#include "fewha/operators.hpp"
#include "fewha/reconstructor.hpp"

namespace fewha {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic standard-normal stream (explicit Box-Muller over mt19937_64
/// bits; platform-independent, unlike std::normal_distribution).
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

    double operator()() {
        if (have_) {
            have_ = false;
            return cache_;
        }
        const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;          // [0, 1)
        const double m = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cache_ = m * std::sin(a);
        have_ = true;
        return m * std::cos(a);
    }

private:
    std::mt19937_64 rng_;
    bool have_ = false;
    double cache_ = 0.0;
};

/// Ground-truth turbulence: per-layer nodal screens, reproducible from seed.
struct AtmosphereTruth {
    std::vector<Grid2D> layers;
    std::uint64_t seed = 0;
    double outer_scale = 25.0;
};

/// Spectral sampling of von Karman screens: complex white noise shaped by
/// sqrt of the power spectrum (kappa^2 + kappa0^2)^(-11/6), inverse FFT, real
/// part, mean removed.  Each layer is rescaled so its sample variance is
/// exactly relative_strength * truth_strength, which keeps the layer-strength
/// proportionality invariant sharp.
inline AtmosphereTruth generate_atmosphere(const SystemGeometry& g, std::uint64_t seed) {
    AtmosphereTruth truth;
    truth.seed = seed;
    truth.outer_scale = g.solver.outer_scale;
    const double kappa0 = 2.0 * std::numbers::pi / g.solver.outer_scale;

    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        const auto& lc = g.layers[l];
        const int n = lc.n_nodes();
        const double period = lc.extent / (n - 1) * n;  // screen is periodic over n cells

        GaussianStream gauss(splitmix64(seed ^ (0x51a9e4c7ULL + l)));
        std::vector<std::complex<double>> spec(static_cast<std::size_t>(n) * n);
        for (int ki = 0; ki < n; ++ki) {
            const int wi = ki <= n / 2 ? ki : ki - n;
            for (int kj = 0; kj < n; ++kj) {
                const int wj = kj <= n / 2 ? kj : kj - n;
                const std::size_t idx = static_cast<std::size_t>(ki) * n + kj;
                const double re = gauss();
                const double im = gauss();
                if (wi == 0 && wj == 0) {
                    spec[idx] = 0.0;  // zero mean
                    continue;
                }
                const double kx = 2.0 * std::numbers::pi * wj / period;
                const double ky = 2.0 * std::numbers::pi * wi / period;
                const double amp = std::pow(kx * kx + ky * ky + kappa0 * kappa0, -11.0 / 12.0);
                spec[idx] = std::complex<double>(re, im) * amp;
            }
        }
        fft2_inplace(spec, n, true);

        Grid2D screen(n, n);
        double mean = 0.0;
        for (std::size_t k = 0; k < spec.size(); ++k) {
            screen.data()[k] = spec[k].real();
            mean += spec[k].real();
        }
        mean /= static_cast<double>(spec.size());
        double var = 0.0;
        for (double& v : screen.flat()) {
            v -= mean;
            var += v * v;
        }
        var /= static_cast<double>(screen.size());
        const double target = lc.relative_strength * g.simulation.truth_strength;
        const double scale = var > 0.0 ? std::sqrt(target / var) : 0.0;
        for (double& v : screen.flat()) v *= scale;
        truth.layers.push_back(std::move(screen));
    }
    return truth;
}

/// Layer screens at loop step k: static by default, periodic frozen-flow
/// translation when per-layer wind is configured.
inline std::vector<Grid2D> truth_at_step(const AtmosphereTruth& truth, const SystemGeometry& g,
                                         int step) {
    if (g.simulation.wind.empty() || step == 0) return truth.layers;
    std::vector<Grid2D> out;
    out.reserve(truth.layers.size());
    for (std::size_t l = 0; l < truth.layers.size(); ++l) {
        const auto& base = truth.layers[l];
        const int n = base.rows();
        const double spacing = g.layers[l].extent / (n - 1);
        const double si = g.simulation.wind[l].second * step / spacing;  // rows shift
        const double sj = g.simulation.wind[l].first * step / spacing;
        Grid2D shifted(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                double ti = std::fmod(i + si, static_cast<double>(n));
                double tj = std::fmod(j + sj, static_cast<double>(n));
                if (ti < 0) ti += n;
                if (tj < 0) tj += n;
                const int i0 = static_cast<int>(ti) % n, j0 = static_cast<int>(tj) % n;
                const int i1 = (i0 + 1) % n, j1 = (j0 + 1) % n;
                const double fi = ti - std::floor(ti), fj = tj - std::floor(tj);
                shifted(i, j) = (1 - fi) * ((1 - fj) * base(i0, j0) + fj * base(i0, j1)) +
                                fi * ((1 - fj) * base(i1, j0) + fj * base(i1, j1));
            }
        }
        out.push_back(std::move(shifted));
    }
    return out;
}

/// Forward measurement synthesis s = Gamma P phi (- Gamma P_dm a when a
/// correction is applied) + noise.  Reuses the reconstruction operators --
/// there is no second forward model.
inline std::vector<double> synthesize_measurements(const std::vector<Grid2D>& layers,
                                                   const MirrorShapes* correction,
                                                   const SystemGeometry& g,
                                                   std::uint64_t noise_seed) {
    const MeasurementLayout lay = MeasurementLayout::of(g);
    std::vector<double> meas(lay.total, 0.0);

    std::vector<Screen> truth_screens;
    for (std::size_t l = 0; l < layers.size(); ++l)
        truth_screens.push_back({&layers[l], g.layers[l].extent, g.layers[l].height});
    std::vector<Screen> dm_screens;
    if (correction) {
        for (std::size_t m = 0; m < correction->dm.size(); ++m)
            dm_screens.push_back(
                {&correction->dm[m], g.dms[m].extent, g.dms[m].conjugation_height});
    }

    GaussianStream gauss(splitmix64(noise_seed ^ 0x6e0f7a3dULL));
    for (std::size_t w = 0; w < g.wfs.size(); ++w) {
        const auto& wc = g.wfs[w];
        const auto& star = g.guide_stars[w];
        const int n = wc.n_subap + 1;
        const double d = g.telescope_diameter / (n - 1);
        Grid2D wf(n, n);
        for (int i = 0; i < n; ++i) {
            const double y = -g.telescope_diameter / 2.0 + i * d;
            for (int j = 0; j < n; ++j) {
                const double x = -g.telescope_diameter / 2.0 + j * d;
                double v = propagate_point(truth_screens, star, x, y);
                if (correction) v -= propagate_point(dm_screens, star, x, y);
                wf(i, j) = v;
            }
        }
        auto sx = lay.sx(std::span<double>(meas), g, static_cast<int>(w));
        auto sy = lay.sy(std::span<double>(meas), g, static_cast<int>(w));
        sh_apply(wf, wc, sx, sy);
        if (g.simulation.noise) {
            const double sigma = std::sqrt(wc.noise_variance);
            for (int i = 0; i < wc.n_subap; ++i)
                for (int j = 0; j < wc.n_subap; ++j) {
                    if (!wc.active_mask(i, j)) continue;
                    const std::size_t k = static_cast<std::size_t>(i) * wc.n_subap + j;
                    sx[k] += sigma * gauss();
                    sy[k] += sigma * gauss();
                }
        }
    }
    return meas;
}

/// Per-step quality metrics over the probe-direction grid.
struct QualityRecord {
    int step = 0;
    std::vector<double> rms_per_dir;  // piston-removed residual RMS, rad
    double field_rms = 0.0;           // quadratic mean over directions
    double layer_rel_err = 0.0;       // ||phi_rec - phi_true|| / ||phi_true||, mean-removed
    std::vector<double> rho;          // PCG convergence log of the reconstruction step
};

/// Residual wavefront statistics: propagated truth minus propagated DM
/// correction, sampled on the finest WFS aperture grid restricted to the
/// annular pupil.  Piston (the mean over pupil nodes) is removed per
/// direction: it lies in the null space of the SH operator, so it is
/// unobservable and optically meaningless.
inline QualityRecord evaluate_quality(const std::vector<Grid2D>& truth_layers,
                                      const MirrorShapes& correction, const SystemGeometry& g) {
    QualityRecord rec;

    int n_sub = 0;
    for (const auto& w : g.wfs) n_sub = std::max(n_sub, w.n_subap);
    const int n = n_sub + 1;
    const double d = g.telescope_diameter / (n - 1);
    const double r_out = g.pupil_outer_radius();
    const double r_in = g.pupil_inner_radius();

    std::vector<Screen> truth_screens;
    for (std::size_t l = 0; l < truth_layers.size(); ++l)
        truth_screens.push_back({&truth_layers[l], g.layers[l].extent, g.layers[l].height});
    std::vector<Screen> dm_screens;
    for (std::size_t m = 0; m < correction.dm.size(); ++m)
        dm_screens.push_back({&correction.dm[m], g.dms[m].extent, g.dms[m].conjugation_height});

    std::vector<std::pair<double, double>> pupil_nodes;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double x = -r_out + j * d;
            const double y = -r_out + i * d;
            const double r2 = x * x + y * y;
            if (r2 <= r_out * r_out * (1.0 + 1e-12) && r2 >= r_in * r_in * (1.0 - 1e-12))
                pupil_nodes.emplace_back(x, y);
        }
    }

    double sum_sq = 0.0;
    std::vector<double> res(pupil_nodes.size());
    for (const auto& [tx, ty] : g.evaluation.directions()) {
        GuideStar probe{StarKind::ngs, tx, ty, kInfiniteHeight};
        double mean = 0.0;
        for (std::size_t k = 0; k < pupil_nodes.size(); ++k) {
            const auto [x, y] = pupil_nodes[k];
            res[k] = propagate_point(truth_screens, probe, x, y) -
                     propagate_point(dm_screens, probe, x, y);
            mean += res[k];
        }
        mean /= static_cast<double>(res.size());
        double var = 0.0;
        for (double v : res) var += (v - mean) * (v - mean);
        var /= static_cast<double>(res.size());
        rec.rms_per_dir.push_back(std::sqrt(var));
        sum_sq += var;
    }
    rec.field_rms = std::sqrt(sum_sq / static_cast<double>(rec.rms_per_dir.size()));

    // Layer reconstruction error: DM shapes resampled back onto the layer
    // grids (mean-removed on both sides).
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < truth_layers.size(); ++l) {
        const auto& lt = truth_layers[l];
        const int nl = lt.rows();
        const auto& dm = correction.dm[l];
        const double extent = g.layers[l].extent;
        const double dl = extent / (nl - 1);
        double mean_t = 0.0, mean_r = 0.0;
        Grid2D up(nl, nl);
        for (int i = 0; i < nl; ++i)
            for (int j = 0; j < nl; ++j) {
                up(i, j) = bilinear_sample(dm, extent, -extent / 2.0 + j * dl, -extent / 2.0 + i * dl);
                mean_t += lt(i, j);
                mean_r += up(i, j);
            }
        mean_t /= static_cast<double>(lt.size());
        mean_r /= static_cast<double>(up.size());
        for (int i = 0; i < nl; ++i)
            for (int j = 0; j < nl; ++j) {
                const double diff = (up(i, j) - mean_r) - (lt(i, j) - mean_t);
                num += diff * diff;
                den += (lt(i, j) - mean_t) * (lt(i, j) - mean_t);
            }
    }
    rec.layer_rel_err = den > 0.0 ? std::sqrt(num / den) : 0.0;
    return rec;
}

struct LoopSeeds {
    std::uint64_t atmosphere = 1;
    std::uint64_t noise = 2;
};

struct LoopResult {
    std::vector<QualityRecord> records;
    double uncorrected_field_rms = 0.0;  // correction = 0, final step's truth
    double final_field_rms = 0.0;
};

/// Closed- (or open-) loop time stepping with the two-step delay: at step k
/// the measurements and the quality evaluation see the mirror shape a^(k-1),
/// and the reconstructor produces a^(k+1).
inline LoopResult run_closed_loop(const SystemGeometry& g, int n_steps, LoopSeeds seeds,
                                  int threads = 0) {
    if (n_steps < 1) throw std::invalid_argument("run_closed_loop: n_steps must be >= 1");
    LoopResult out;
    const AtmosphereTruth truth = generate_atmosphere(g, seeds.atmosphere);
    Reconstructor rec(g, threads);
    rec.build_preconditioner();
    ReconstructorState st = ReconstructorState::zero(g);
    const MirrorShapes no_correction = MirrorShapes::zero(g);

    for (int k = 0; k < n_steps; ++k) {
        const std::vector<Grid2D> layers_k = truth_at_step(truth, g, k);
        const std::vector<double> meas = synthesize_measurements(
            layers_k, &st.a_prev2, g, splitmix64(seeds.noise + static_cast<std::uint64_t>(k)));
        QualityRecord q = evaluate_quality(layers_k, st.a_prev2, g);
        q.step = k;
        rec.step(st, meas);
        q.rho = rec.last_telemetry().rho;
        out.records.push_back(std::move(q));
        if (k == n_steps - 1)
            out.uncorrected_field_rms = evaluate_quality(layers_k, no_correction, g).field_rms;
    }
    out.final_field_rms = out.records.back().field_rms;
    return out;
}

}  // namespace fewha
