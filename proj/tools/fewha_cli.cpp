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

#include <cinttypes>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fewha/bench.hpp"
#include "fewha/config_io.hpp"
#include "fewha/simulation.hpp"
#include "fewha/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitConfigError = 2;

int cmd_verify(const std::string& config_path, int threads, std::uint64_t seed, int trials) {
    const fewha::SystemGeometry geom = fewha::load_config(config_path);
    fewha::VerifyOptions opt;
    opt.threads = threads;
    opt.seed = seed;
    opt.adjoint_trials = trials;
    const auto checks = fewha::run_verification(geom, opt);
    std::size_t failed = 0;
    for (const auto& c : checks) {
        std::printf("%-40s %-4s  measured %.3e  tol %.3e%s%s\n", c.name.c_str(),
                    c.pass ? "ok" : "FAIL", c.measured, c.tolerance, c.note.empty() ? "" : "  ",
                    c.note.c_str());
        if (!c.pass) ++failed;
    }
    std::printf("%zu checks, %zu failed\n", checks.size(), failed);
    return failed == 0 ? kExitOk : kExitVerificationFailure;
}

int cmd_bench(const std::string& config_path, const fewha::SweepSpec& sweep, int base_layers,
              int threads, std::uint64_t seed, const std::string& output) {
    fewha::SystemGeometry geom = fewha::load_config(config_path);
    if (base_layers > 0) geom = fewha::truncate_layers(geom, base_layers);
    const auto rows = fewha::run_bench(geom, sweep, threads, seed);
    fewha::write_bench_csv(output, rows);
    std::printf("sweep over %s, %d repetitions x %d steps (warmup %d)\n", sweep.param.c_str(),
                sweep.repetitions, sweep.steps_per_rep, sweep.warmup_steps);
    for (const auto& [value, med] : fewha::bench_medians(rows)) {
        double lo = med, hi = med;
        for (const auto& r : rows)
            if (r.value == value) {
                lo = std::min(lo, r.step_time_us);
                hi = std::max(hi, r.step_time_us);
            }
        std::printf("  %s = %-8g median %9.1f us  [%9.1f, %9.1f]\n", sweep.param.c_str(), value,
                    med, lo, hi);
    }
    std::printf("wrote %s\n", output.c_str());
    return kExitOk;
}

int cmd_simulate(const std::string& config_path, int steps, bool noiseless, std::uint64_t seed,
                 int threads, const std::string& output) {
    fewha::SystemGeometry geom = fewha::load_config(config_path);
    if (noiseless) geom.simulation.noise = false;
    fewha::LoopSeeds seeds;
    seeds.atmosphere = seed;
    seeds.noise = fewha::splitmix64(seed ^ 0xabcdef12ULL);
    const auto result = fewha::run_closed_loop(geom, steps, seeds, threads);
    fewha::write_quality_csv(output, result.records);
    const double improvement = result.final_field_rms > 0.0
                                   ? result.uncorrected_field_rms / result.final_field_rms
                                   : std::numeric_limits<double>::infinity();
    std::printf("steps             %d\n", steps);
    std::printf("uncorrected RMS   %.6e rad\n", result.uncorrected_field_rms);
    std::printf("final field RMS   %.6e rad\n", result.final_field_rms);
    std::printf("improvement       %.2fx\n", improvement);
    std::printf("wrote %s\n", output.c_str());
    return kExitOk;
}

int cmd_plot(const std::string& csv_path, const std::string& output) {
    fewha::emit_plot_script(csv_path, output);
    std::printf("wrote %s (run with python3 to render)\n", output.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fewha: matrix-free wavelet tomography reconstructor for adaptive optics"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output = "out.csv";
    int threads = 0;
    std::uint64_t seed = 1;
    app.add_option("--config", config_path, "system configuration JSON")->envname("FEWHA_CONFIG");
    app.add_option("--threads", threads, "parallelism degree (0 = max(L, W))");
    app.add_option("--seed", seed, "base RNG seed");
    app.add_option("--output", output, "output file path");

    auto* verify = app.add_subcommand("verify", "run the operator/adjoint/SPD verification suite");
    int trials = 1000;
    verify->add_option("--trials", trials, "randomized adjoint trials per operator pair");

    auto* bench = app.add_subcommand("bench", "scaling benchmark sweeps");
    fewha::SweepSpec sweep;
    int base_layers = 0;
    bench->add_option("--sweep", sweep.param, "swept parameter: layers|pcg_iters|subapertures|threads")
        ->required();
    bench->add_option("--values", sweep.values, "sweep values")->required();
    bench->add_option("--reps", sweep.repetitions, "repetitions per point (>= 3)");
    bench->add_option("--warmup", sweep.warmup_steps, "warmup steps excluded from timing");
    bench->add_option("--steps", sweep.steps_per_rep, "timed steps per repetition");
    bench->add_option("--base-layers", base_layers, "truncate the base config to this many layers first");

    auto* simulate = app.add_subcommand("simulate", "closed-loop simulation with quality metrics");
    int steps = 20;
    bool noiseless = false;
    simulate->add_option("--steps", steps, "number of loop steps");
    simulate->add_flag("--noiseless", noiseless, "disable measurement noise injection");

    auto* plot = app.add_subcommand("plot", "emit a plot script from a CSV");
    std::string csv_path;
    plot->add_option("csv", csv_path, "input CSV (bench or quality schema)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) {
            if (config_path.empty()) throw fewha::config_error("verify: --config is required");
            return cmd_verify(config_path, threads, seed, trials);
        }
        if (bench->parsed()) {
            if (config_path.empty()) throw fewha::config_error("bench: --config is required");
            return cmd_bench(config_path, sweep, base_layers, threads, seed, output);
        }
        if (simulate->parsed()) {
            if (config_path.empty()) throw fewha::config_error("simulate: --config is required");
            return cmd_simulate(config_path, steps, noiseless, seed, threads, output);
        }
        if (plot->parsed()) return cmd_plot(csv_path, output);
    } catch (const fewha::config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitVerificationFailure;
    }
    return kExitOk;
}
