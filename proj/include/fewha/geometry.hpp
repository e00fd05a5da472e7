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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewha/wavelet.hpp"

namespace fewha {

inline constexpr double kArcsecToRad = std::numbers::pi / (180.0 * 3600.0);
inline constexpr double kInfiniteHeight = std::numeric_limits<double>::infinity();

/// Thrown for malformed or invariant-violating configurations.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

enum class StarKind { ngs, lgs };
enum class LoopMode { closed, open };
enum class ObstructionSemantics { area, diameter };
enum class PrecondMode { exact, approximate, balanced };

/// Square boolean grid (active-subaperture masks).
struct BoolGrid {
    int n = 0;
    std::vector<std::uint8_t> on;

    BoolGrid() = default;
    explicit BoolGrid(int side) : n(side), on(static_cast<std::size_t>(side) * side, 0) {}
    bool operator()(int i, int j) const { return on[static_cast<std::size_t>(i) * n + j] != 0; }
    void set(int i, int j, bool v) { on[static_cast<std::size_t>(i) * n + j] = v ? 1 : 0; }
    int count() const { return static_cast<int>(std::count(on.begin(), on.end(), std::uint8_t{1})); }
    bool operator==(const BoolGrid&) const = default;
};

struct WfsConfig {
    int n_subap = 0;              // subapertures per side
    double noise_variance = 1.0;  // rad^2 per slope
    BoolGrid active_mask;         // derived, n_subap x n_subap

    bool operator==(const WfsConfig&) const = default;
};

struct GuideStar {
    StarKind kind = StarKind::ngs;
    double theta_x = 0.0;  // rad
    double theta_y = 0.0;  // rad
    double height = kInfiniteHeight;  // m; finite for LGS only

    /// Cone-effect footprint scale at layer height h: 1 for NGS, 1 - h/H for LGS.
    double footprint_scale(double h) const {
        return kind == StarKind::lgs ? 1.0 - h / height : 1.0;
    }
    double theta_norm() const { return std::hypot(theta_x, theta_y); }

    bool operator==(const GuideStar&) const = default;
};

struct LayerConfig {
    double height = 0.0;           // m
    int grid_order = 0;            // J; 2^J nodes per side
    double extent = 0.0;           // m; <= 0 in input means "derive from meta-pupil"
    double relative_strength = 0.0;

    int n_nodes() const { return 1 << grid_order; }

    bool operator==(const LayerConfig&) const = default;
};

struct DmConfig {
    int n_act = 0;                    // actuators per side
    double conjugation_height = 0.0;  // m
    double extent = 0.0;              // derived: paired layer extent (L = M pairing by index)

    bool operator==(const DmConfig&) const = default;
};

struct SolverConfig {
    int pcg_max_iter = 4;
    double pcg_tolerance = 0.0;  // 0 = fixed iteration count; > 0 enables offline early exit
    double alpha = 1.0;                 // regularization balance
    int wavelet_order = 3;              // Daubechies order, 1..10
    double outer_scale = 25.0;          // L0, m
    double spectral_exponent = 11.0 / 6.0;
    PrecondMode precond_mode = PrecondMode::approximate;
    double precond_coarse_weight = 4.0;
    double precond_balance_exponent = 0.5;  // balanced mode only
    std::size_t dense_size_cap = 20000;  // refuse dense oracles / exact probing above this
    std::string fault;                   // test fixture: "" or "sh_adjoint"

    bool operator==(const SolverConfig&) const = default;
};

struct EvaluationConfig {
    int n_per_side = 5;
    double half_width = 60.0 * kArcsecToRad;  // rad

    /// Probe directions, row-major over the square grid (single point if n_per_side == 1).
    std::vector<std::pair<double, double>> directions() const {
        std::vector<std::pair<double, double>> dirs;
        for (int i = 0; i < n_per_side; ++i) {
            for (int j = 0; j < n_per_side; ++j) {
                const double fy = n_per_side == 1 ? 0.0 : -1.0 + 2.0 * i / (n_per_side - 1);
                const double fx = n_per_side == 1 ? 0.0 : -1.0 + 2.0 * j / (n_per_side - 1);
                dirs.emplace_back(fx * half_width, fy * half_width);
            }
        }
        return dirs;
    }

    bool operator==(const EvaluationConfig&) const = default;
};

struct SimulationConfig {
    double truth_strength = 1.0;  // total layer variance, rad^2
    bool noise = true;            // inject measurement noise
    std::vector<std::pair<double, double>> wind;  // m per step, per layer; empty = static

    bool operator==(const SimulationConfig&) const = default;
};

struct SystemGeometry {
    double telescope_diameter = 0.0;  // D, m
    double obstruction_fraction = 0.0;
    ObstructionSemantics obstruction_semantics = ObstructionSemantics::area;
    double illumination_threshold = 0.5;

    std::vector<WfsConfig> wfs;
    std::vector<GuideStar> guide_stars;
    std::vector<LayerConfig> layers;
    std::vector<DmConfig> dms;

    SolverConfig solver;
    LoopMode loop_mode = LoopMode::closed;
    double gain = 0.4;

    EvaluationConfig evaluation;
    SimulationConfig simulation;

    double pupil_outer_radius() const { return telescope_diameter / 2.0; }
    double pupil_inner_radius() const {
        const double f = obstruction_semantics == ObstructionSemantics::area
                             ? std::sqrt(obstruction_fraction)
                             : obstruction_fraction;
        return f * telescope_diameter / 2.0;
    }

    std::size_t coeff_dim() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.n_nodes()) * l.n_nodes();
        return n;
    }
    std::size_t measurement_dim() const {
        std::size_t n = 0;
        for (const auto& w : wfs) n += 2 * static_cast<std::size_t>(w.n_subap) * w.n_subap;
        return n;
    }

    bool operator==(const SystemGeometry&) const = default;
};

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <typename F>
double integrate(const F& f, double a, double b, double tol) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 40);
}

}  // namespace detail

/// Illuminated area fraction of subaperture (i, j) of WFS w inside the annular
/// pupil: adaptive-Simpson integral along x of the chord length of (outer disk
/// minus inner disk) clipped to the cell's y-range.  Deterministic.
inline double subaperture_fill_fraction(const SystemGeometry& g, int wfs_index, int i, int j) {
    const auto& w = g.wfs[static_cast<std::size_t>(wfs_index)];
    const double d = g.telescope_diameter / w.n_subap;
    // Row index i runs along y, column index j along x.
    const double x0 = -g.telescope_diameter / 2.0 + j * d;
    const double y0 = -g.telescope_diameter / 2.0 + i * d;
    const double y1 = y0 + d;
    const double r_out = g.pupil_outer_radius();
    const double r_in = g.pupil_inner_radius();

    auto clipped_chord = [&](double x) {
        auto overlap = [&](double half) {  // measure of [y0,y1] ∩ [-half, half]
            if (half <= 0.0) return 0.0;
            return std::max(0.0, std::min(y1, half) - std::max(y0, -half));
        };
        const double c_out = r_out * r_out > x * x ? std::sqrt(r_out * r_out - x * x) : 0.0;
        const double c_in = r_in * r_in > x * x ? std::sqrt(r_in * r_in - x * x) : 0.0;
        return overlap(c_out) - overlap(c_in);
    };

    const double area = detail::integrate(clipped_chord, x0, x0 + d, 1e-12 * d * d);
    return area / (d * d);
}

/// Mask of subapertures whose illuminated fraction reaches the threshold.
inline BoolGrid compute_active_subapertures(const SystemGeometry& g, int wfs_index) {
    if (wfs_index < 0 || wfs_index >= static_cast<int>(g.wfs.size()))
        throw std::out_of_range("compute_active_subapertures: wfs_index");
    const int n = g.wfs[static_cast<std::size_t>(wfs_index)].n_subap;
    BoolGrid mask(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            mask.set(i, j, subaperture_fill_fraction(g, wfs_index, i, j) >= g.illumination_threshold);
    return mask;
}

/// Unpadded meta-pupil side length of layer l: the guide-star beam footprints
/// are disks of diameter scale·D centered at theta*h, so a centered square of
/// side max_g(scale_g·D + 2|theta_g|·h) covers their union.
inline double layer_meta_pupil(const SystemGeometry& g, int layer_index) {
    const auto& l = g.layers[static_cast<std::size_t>(layer_index)];
    double side = 0.0;
    for (const auto& star : g.guide_stars) {
        const double s = star.footprint_scale(l.height) * g.telescope_diameter +
                         2.0 * star.theta_norm() * l.height;
        side = std::max(side, s);
    }
    return side;
}

/// Meta-pupil side padded by one grid cell per side so that bilinear
/// evaluation points stay strictly interior.
inline double layer_extent(const SystemGeometry& g, int layer_index) {
    if (layer_index < 0 || layer_index >= static_cast<int>(g.layers.size()))
        throw std::out_of_range("layer_extent: layer_index");
    const auto& l = g.layers[static_cast<std::size_t>(layer_index)];
    const double raw = layer_meta_pupil(g, layer_index);
    return raw + 2.0 * raw / (l.n_nodes() - 1);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate_geometry(const SystemGeometry& g) {
    auto fail = [](const std::string& m) { throw config_error("invalid geometry: " + m); };

    if (!(g.telescope_diameter > 0.0)) fail("telescope diameter must be > 0");
    if (!(g.obstruction_fraction >= 0.0 && g.obstruction_fraction < 1.0))
        fail("obstruction fraction out of [0,1)");
    if (!(g.illumination_threshold > 0.0 && g.illumination_threshold <= 1.0))
        fail("illumination threshold out of (0,1]");
    if (g.wfs.empty()) fail("wfs list is empty");
    if (g.guide_stars.size() != g.wfs.size())
        fail("guide star count " + std::to_string(g.guide_stars.size()) +
             " != wfs count " + std::to_string(g.wfs.size()));
    if (g.layers.empty()) fail("layer list is empty");
    if (g.dms.size() != g.layers.size())
        fail("dm count " + std::to_string(g.dms.size()) + " != layer count " +
             std::to_string(g.layers.size()) + " (only the L = M identity-fitting mode is supported)");

    for (const auto& w : g.wfs) {
        if (w.n_subap < 1) fail("wfs n_subap must be >= 1");
        if (!(w.noise_variance > 0.0)) fail("wfs noise_variance must be > 0");
    }

    double top = -1.0;
    double strength_sum = 0.0;
    for (const auto& l : g.layers) {
        if (l.height < 0.0) fail("layer height must be >= 0");
        if (l.height <= top) fail("layer heights must be strictly increasing");
        top = l.height;
        if (l.grid_order < 1 || l.grid_order > 16) fail("layer grid_order out of 1..16");
        if (!(l.relative_strength > 0.0 && l.relative_strength <= 1.0))
            fail("layer relative_strength out of (0,1]");
        strength_sum += l.relative_strength;
    }
    if (std::abs(strength_sum - 1.0) > 1e-12) fail("layer relative_strength values must sum to 1");

    for (const auto& s : g.guide_stars) {
        if (s.kind == StarKind::lgs) {
            if (!std::isfinite(s.height) || s.height <= 0.0) fail("LGS height must be finite and > 0");
            if (s.height <= top)
                fail("LGS height " + std::to_string(s.height) + " must exceed top layer height " +
                     std::to_string(top));
        } else if (std::isfinite(s.height)) {
            fail("NGS height must be the infinite marker");
        }
    }

    for (const auto& d : g.dms) {
        if (d.n_act < 2) fail("dm n_act must be >= 2");
        if (d.conjugation_height < 0.0) fail("dm conjugation height must be >= 0");
    }

    if (!(g.gain >= 0.0 && g.gain <= 1.0)) fail("gain out of [0,1]");
    if (g.solver.pcg_max_iter < 1) fail("pcg_max_iter must be >= 1");
    if (!(g.solver.pcg_tolerance >= 0.0 && g.solver.pcg_tolerance < 1.0))
        fail("pcg_tolerance out of [0,1)");
    if (!(g.solver.alpha > 0.0)) fail("regularization alpha must be > 0");
    if (g.solver.wavelet_order < kMinWaveletOrder || g.solver.wavelet_order > kMaxWaveletOrder)
        fail("wavelet order out of 1..10");
    if (!(g.solver.outer_scale > 0.0)) fail("outer scale must be > 0");
    if (!(g.solver.spectral_exponent > 0.0)) fail("spectral exponent must be > 0");
    if (!(g.solver.precond_coarse_weight > 0.0)) fail("preconditioner coarse weight must be > 0");
    if (!(g.solver.precond_balance_exponent >= 0.0 && g.solver.precond_balance_exponent <= 1.0))
        fail("preconditioner balance exponent out of [0,1]");
    if (!g.solver.fault.empty() && g.solver.fault != "sh_adjoint")
        fail("unknown fault fixture '" + g.solver.fault + "'");

    if (g.evaluation.n_per_side < 1) fail("evaluation grid must be non-empty");
    if (g.evaluation.half_width < 0.0) fail("evaluation half width must be >= 0");
    if (!(g.simulation.truth_strength > 0.0)) fail("simulation truth_strength must be > 0");
    if (!g.simulation.wind.empty() && g.simulation.wind.size() != g.layers.size())
        fail("simulation wind list must have one entry per layer");

    // Explicitly configured extents must still cover the meta-pupil.
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        if (g.layers[l].extent > 0.0) {
            const double need = layer_meta_pupil(g, static_cast<int>(l));
            if (g.layers[l].extent < need * (1.0 - 1e-12))
                fail("layer " + std::to_string(l) + " extent " + std::to_string(g.layers[l].extent) +
                     " below meta-pupil size " + std::to_string(need));
        }
    }
}

/// Fills in derived quantities (layer extents, DM extents, active masks) and
/// validates.  Every construction path funnels through here.
inline void finalize_geometry(SystemGeometry& g) {
    validate_geometry(g);
    for (std::size_t l = 0; l < g.layers.size(); ++l) {
        if (g.layers[l].extent <= 0.0) g.layers[l].extent = layer_extent(g, static_cast<int>(l));
    }
    // DM m is paired with layer m; its actuator grid spans the layer's extent
    // so identity fitting degenerates to plain resampling that never leaves
    // the layer grid.
    for (std::size_t m = 0; m < g.dms.size(); ++m) g.dms[m].extent = g.layers[m].extent;
    for (std::size_t w = 0; w < g.wfs.size(); ++w)
        g.wfs[w].active_mask = compute_active_subapertures(g, static_cast<int>(w));
}

}  // namespace fewha
