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
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fewha/simulation.hpp"

namespace fewha {

struct SweepSpec {
    std::string param;  // layers | pcg_iters | subapertures | threads
    std::vector<double> values;
    int repetitions = 5;
    int warmup_steps = 10;
    int steps_per_rep = 20;
};

struct BenchRow {
    std::string param;
    double value = 0.0;
    int rep = 0;
    double step_time_us = 0.0;  // median over the repetition's steps
    double stage1_us = 0.0;
    double stage2_us = 0.0;
    double stage3_us = 0.0;
    double pcg_us = 0.0;
    double min_step_us = 0.0;  // fastest step of the repetition (not serialized)
};

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Truncate to the first `count` layers and DMs, renormalizing the layer
/// strengths (extents are re-derived; they only depend on the surviving
/// layers).
inline SystemGeometry truncate_layers(const SystemGeometry& base, int count) {
    if (count < 1 || count > static_cast<int>(base.layers.size()))
        throw config_error("sweep: layer count " + std::to_string(count) +
                           " not legal for the base config");
    SystemGeometry g = base;
    g.layers.resize(static_cast<std::size_t>(count));
    g.dms.resize(static_cast<std::size_t>(count));
    if (!g.simulation.wind.empty()) g.simulation.wind.resize(static_cast<std::size_t>(count));
    double sum = 0.0;
    for (const auto& l : g.layers) sum += l.relative_strength;
    for (auto& l : g.layers) {
        l.relative_strength /= sum;
        l.extent = 0.0;
    }
    finalize_geometry(g);
    return g;
}

/// Geometry for one sweep point.  `subapertures` follows the scaling
/// experiment recipe: the high-resolution WFS class gets n_s = value, the
/// first DM n_s + 1 actuators, and every layer the next power of two above
/// n_s + 1 nodes.
inline SystemGeometry geometry_for_sweep_value(const SystemGeometry& base, const std::string& param,
                                               double value) {
    if (param == "layers") {
        const int count = static_cast<int>(value);
        if (static_cast<double>(count) != value)
            throw config_error("sweep: layer count must be an integer");
        return truncate_layers(base, count);
    }
    if (param == "pcg_iters") {
        const int iters = static_cast<int>(value);
        if (static_cast<double>(iters) != value || iters < 1)
            throw config_error("sweep: pcg_iters value must be a positive integer");
        SystemGeometry g = base;
        g.solver.pcg_max_iter = iters;
        return g;
    }
    if (param == "subapertures") {
        const int ns = static_cast<int>(value);
        if (static_cast<double>(ns) != value || ns < 2)
            throw config_error("sweep: subaperture count must be an integer >= 2");
        SystemGeometry g = base;
        int ns_max = 0;
        for (const auto& w : g.wfs) ns_max = std::max(ns_max, w.n_subap);
        for (auto& w : g.wfs)
            if (w.n_subap == ns_max) w.n_subap = ns;
        int order = 1;
        while ((1 << order) < ns + 1) ++order;
        for (auto& l : g.layers) {
            l.grid_order = order;
            l.extent = 0.0;
        }
        if (!g.dms.empty()) g.dms.front().n_act = ns + 1;
        finalize_geometry(g);
        return g;
    }
    if (param == "threads") {
        const int t = static_cast<int>(value);
        if (static_cast<double>(t) != value || t < 1)
            throw config_error("sweep: thread count must be a positive integer");
        return base;  // parallelism degree is a runtime parameter
    }
    throw config_error("sweep: unknown parameter '" + param +
                       "' (expected layers, pcg_iters, subapertures or threads)");
}

/// Runs the sweep: per point, a warmup phase excluded from timing, then
/// `repetitions` batches of steps; each row carries the per-step medians of
/// one batch.  Wall time is measured around reconstruct_step only
/// (measurement synthesis excluded).
inline std::vector<BenchRow> run_bench(const SystemGeometry& base, const SweepSpec& sweep,
                                       int threads, std::uint64_t seed) {
    if (sweep.repetitions < 3) throw config_error("sweep: repetitions must be >= 3");
    if (sweep.values.empty()) throw config_error("sweep: no values given");
    if (sweep.warmup_steps < 0 || sweep.steps_per_rep < 1)
        throw config_error("sweep: bad warmup/steps configuration");

    std::vector<BenchRow> rows;
    for (const double value : sweep.values) {
        const SystemGeometry g = geometry_for_sweep_value(base, sweep.param, value);
        const int degree = sweep.param == "threads" ? static_cast<int>(value) : threads;

        const AtmosphereTruth truth = generate_atmosphere(g, seed);
        Reconstructor rec(g, degree);
        rec.build_preconditioner();
        ReconstructorState st = ReconstructorState::zero(g);

        auto one_step = [&](int k) {
            const auto layers = truth_at_step(truth, g, k);
            const auto meas = synthesize_measurements(layers, &st.a_prev2, g,
                                                      splitmix64(seed + static_cast<std::uint64_t>(k)));
            rec.step(st, meas);
        };

        int step_index = 0;
        for (int k = 0; k < sweep.warmup_steps; ++k) one_step(step_index++);

        for (int rep = 0; rep < sweep.repetitions; ++rep) {
            std::vector<double> total, s1, s2, s3, pcg;
            for (int k = 0; k < sweep.steps_per_rep; ++k) {
                one_step(step_index++);
                const auto& t = rec.last_telemetry();
                total.push_back(t.total_us);
                s1.push_back(t.stage1_us);
                s2.push_back(t.stage2_us);
                s3.push_back(t.stage3_us);
                pcg.push_back(t.pcg_us);
            }
            rows.push_back({sweep.param, value, rep, median(total), median(s1), median(s2),
                            median(s3), median(pcg), *std::min_element(total.begin(), total.end())});
        }
    }
    return rows;
}

/// Median per-step time per sweep value (over all repetition rows).
inline std::vector<std::pair<double, double>> bench_medians(const std::vector<BenchRow>& rows) {
    std::vector<std::pair<double, double>> out;
    for (const auto& r : rows) {
        if (std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.value; }) ==
            out.end())
            out.emplace_back(r.value, 0.0);
    }
    for (auto& [value, med] : out) {
        std::vector<double> t;
        for (const auto& r : rows)
            if (r.value == value) t.push_back(r.step_time_us);
        med = median(std::move(t));
    }
    return out;
}

/// Fastest single step per sweep value.  Timing interference on a shared
/// host is one-sided, so the minimum is the robust estimator for trend
/// comparisons.
inline std::vector<std::pair<double, double>> bench_minima(const std::vector<BenchRow>& rows) {
    std::vector<std::pair<double, double>> out;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& p) { return p.first == r.value; });
        if (it == out.end())
            out.emplace_back(r.value, r.min_step_us);
        else
            it->second = std::min(it->second, r.min_step_us);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kBenchCsvHeader =
    "sweep_param,value,rep,step_time_us,stage1_us,stage2_us,stage3_us,pcg_us";

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << kBenchCsvHeader << "\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%d,%.3f,%.3f,%.3f,%.3f,%.3f", r.param.c_str(),
                      r.value, r.rep, r.step_time_us, r.stage1_us, r.stage2_us, r.stage3_us,
                      r.pcg_us);
        out << buf << "\n";
    }
}

inline void write_quality_csv(const std::string& path, const std::vector<QualityRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    if (records.empty()) throw std::runtime_error("no records to write");
    out << "step";
    for (std::size_t d = 0; d < records.front().rms_per_dir.size(); ++d) {
        char h[32];
        std::snprintf(h, sizeof h, ",rms_d%02zu", d);
        out << h;
    }
    out << ",field_rms,layer_rel_err";
    for (std::size_t i = 0; i < records.front().rho.size(); ++i) out << ",rho_" << i;
    out << "\n";
    char buf[64];
    for (const auto& r : records) {
        out << r.step;
        auto emit = [&](double v) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            out << buf;
        };
        for (double v : r.rms_per_dir) emit(v);
        emit(r.field_rms);
        emit(r.layer_rel_err);
        for (double v : r.rho) emit(v);
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Plot-script emission
// ---------------------------------------------------------------------------

/// Emits a self-contained matplotlib script (data rows embedded) reproducing
/// the time-vs-parameter line chart for bench CSVs or the RMS-vs-step chart
/// for quality CSVs.
inline void emit_plot_script(const std::string& csv_path, const std::string& out_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open '" + csv_path + "'");
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("no data rows in '" + csv_path + "'");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    if (lines.empty()) throw std::runtime_error("no data rows in '" + csv_path + "'");

    const bool is_bench = header == kBenchCsvHeader;
    const bool is_quality = header.rfind("step,", 0) == 0 && header.find("field_rms") != std::string::npos;
    if (!is_bench && !is_quality)
        throw std::runtime_error("unrecognized CSV schema in '" + csv_path + "'");

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
    out << "#!/usr/bin/env python3\n"
        << "# Self-contained plot script generated from " << csv_path << "\n"
        << "import matplotlib\n"
        << "matplotlib.use('Agg')\n"
        << "import matplotlib.pyplot as plt\n\n"
        << "header = '" << header << "'.split(',')\n"
        << "rows = [\n";
    for (const auto& line : lines) out << "    '" << line << "'.split(','),\n";
    out << "]\n\n";

    if (is_bench) {
        out << "series = {}\n"
            << "for r in rows:\n"
            << "    series.setdefault(r[0], {}).setdefault(float(r[1]), []).append(float(r[3]))\n"
            << "fig, ax = plt.subplots(figsize=(6, 4))\n"
            << "for param, pts in sorted(series.items()):\n"
            << "    xs = sorted(pts)\n"
            << "    med = [sorted(pts[x])[len(pts[x]) // 2] / 1000.0 for x in xs]\n"
            << "    lo = [min(pts[x]) / 1000.0 for x in xs]\n"
            << "    hi = [max(pts[x]) / 1000.0 for x in xs]\n"
            << "    ax.plot(xs, med, marker='o', label=param)\n"
            << "    ax.fill_between(xs, lo, hi, alpha=0.2)\n"
            << "ax.set_xlabel(rows[0][0])\n"
            << "ax.set_ylabel('reconstruction step time [ms]')\n"
            << "ax.legend()\n"
            << "ax.grid(True, alpha=0.3)\n";
    } else {
        out << "steps = [int(r[0]) for r in rows]\n"
            << "field = [float(r[header.index('field_rms')]) for r in rows]\n"
            << "fig, ax = plt.subplots(figsize=(6, 4))\n"
            << "ax.plot(steps, field, marker='o', label='field RMS')\n"
            << "ax.set_xlabel('loop step')\n"
            << "ax.set_ylabel('residual wavefront RMS [rad]')\n"
            << "ax.set_yscale('log')\n"
            << "ax.legend()\n"
            << "ax.grid(True, alpha=0.3)\n";
    }
    out << "fig.tight_layout()\n"
        << "fig.savefig('" << out_path << ".png', dpi=150)\n"
        << "print('wrote " << out_path << ".png')\n";
}

}  // namespace fewha
