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

// End-to-end acceptance suite.  Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails.

#include <chrono>
#include <thread>
#include <cstdio>
#include <string>
#include <vector>

#include "fewha/bench.hpp"
#include "fewha/config_io.hpp"
#include "fewha/simulation.hpp"
#include "fewha/verify.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %d: %s (%s) [%.1f s]\n", pass ? "PASS" : "FAIL", criterion,
                what.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string preset(const std::string& name) { return std::string(FEWHA_PRESET_DIR) + "/" + name; }

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

bool checks_pass(const std::vector<fewha::CheckResult>& checks, const std::string& prefix,
                 double* worst, int* count) {
    bool ok = true;
    for (const auto& c : checks) {
        if (c.name.rfind(prefix, 0) != 0) continue;
        ++*count;
        if (c.tolerance > 0.0) *worst = std::max(*worst, c.measured / c.tolerance);
        ok = ok && c.pass;
    }
    return ok;
}

// criteria 1, 2, 4 all come out of the verification suite on the mini config
void criteria_1_2_4(const fewha::SystemGeometry& mini) {
    const auto t0 = clock_type::now();
    fewha::VerifyOptions opt;
    opt.adjoint_trials = 1000;
    const auto checks = fewha::run_verification(mini, opt);
    const double elapsed = seconds_since(t0);

    double worst = 0.0;
    int count = 0;
    bool ok = checks_pass(checks, "dense/", &worst, &count) &&
              checks_pass(checks, "precond/", &worst, &count) && count > 0 && elapsed < 10.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d dense-oracle checks at 1e-10, worst margin %.1e of tol",
                  count, worst);
    report(1, ok, "matrix-free operators match densely assembled matrices", buf, elapsed);

    worst = 0.0;
    count = 0;
    ok = checks_pass(checks, "adjoint/", &worst, &count) && count == 3;
    std::snprintf(buf, sizeof buf, "1000 randomized trials per pair at 1e-12, worst %.1e of tol",
                  worst);
    report(2, ok, "adjoint identities for Gamma/P/W pairs", buf, elapsed);

    worst = 0.0;
    count = 0;
    ok = checks_pass(checks, "pcg/", &worst, &count) && count == 2;
    std::snprintf(buf, sizeof buf, "50 cold iterations, residual and dense-solve match at 1e-6, worst %.1e of tol",
                  worst);
    report(4, ok, "PCG converges and matches the dense direct solve", buf, elapsed);
}

void criterion_3(const fewha::SystemGeometry& mini, const fewha::SystemGeometry& maory,
                 const fewha::SystemGeometry& maory9) {
    const auto t0 = clock_type::now();
    bool ok = true;
    double worst = 0.0;
    for (const auto* g : {&mini, &maory, &maory9}) {
        fewha::Reconstructor rec(*g);
        const std::size_t n = rec.coeff_layout().total;
        fewha::GaussianStream gs(77);
        std::vector<double> x(n), y(n), mx(n), my(n);
        for (int trial = 0; trial < 20; ++trial) {
            for (double& v : x) v = gs();
            for (double& v : y) v = gs();
            rec.apply_M(x, mx);
            rec.apply_M(y, my);
            const double sym = std::abs(fewha::dot(mx, y) - fewha::dot(x, my)) /
                               (fewha::norm2(mx) * fewha::norm2(y));
            worst = std::max(worst, sym);
            ok = ok && sym <= 1e-10 && fewha::dot(mx, x) > 0.0;
        }
    }
    char buf[120];
    std::snprintf(buf, sizeof buf, "20 trials each on every shipped config, worst symmetry defect %.1e",
                  worst);
    report(3, ok, "M is symmetric positive definite", buf, seconds_since(t0));
}

void criterion_5(fewha::SystemGeometry mini) {
    const auto t0 = clock_type::now();
    // noise keeps the incremental residual well scaled relative to machine
    // precision accumulation; the identity itself is loop-mode independent
    mini.simulation.noise = true;
    fewha::Reconstructor rec(mini);
    fewha::Reconstructor probe(mini);
    fewha::ReconstructorState st = fewha::ReconstructorState::zero(mini);
    const auto truth = fewha::generate_atmosphere(mini, 1);
    const std::size_t n = rec.coeff_layout().total;
    std::vector<double> b1(n), mc(n), direct(n), incr(n);

    double worst = 0.0;
    for (int step = 0; step < 20; ++step) {
        const auto meas = fewha::synthesize_measurements(truth.layers, &st.a_prev2, mini,
                                                         900 + static_cast<std::uint64_t>(step));
        std::vector<double> s_pseudo(meas);
        probe.add_dm_slopes(st.a_prev2, s_pseudo);
        probe.build_rhs(s_pseudo, b1);
        probe.apply_M(st.c, mc);
        for (std::size_t k = 0; k < n; ++k) {
            direct[k] = b1[k] - mc[k];
            incr[k] = (b1[k] - st.b[k]) + st.r[k];
        }
        worst = std::max(worst, fewha::rel_err(direct, incr));
        rec.step(st, meas);
    }
    char buf[120];
    std::snprintf(buf, sizeof buf, "20 closed-loop steps, worst relative deviation %.1e", worst);
    report(5, worst <= 1e-10, "incremental residual equals direct b - M c", buf,
           seconds_since(t0));
}

void criterion_6(fewha::SystemGeometry mini) {
    const auto t0 = clock_type::now();
    mini.simulation.noise = false;
    mini.gain = 0.4;
    mini.solver.pcg_max_iter = 4;
    const auto r = fewha::run_closed_loop(mini, 20, {}, 0);
    const double ratio = r.final_field_rms / r.uncorrected_field_rms;
    char buf[120];
    std::snprintf(buf, sizeof buf,
                  "final field RMS %.3e = %.1f%% of uncorrected %.3e (threshold 10%%)",
                  r.final_field_rms, 100.0 * ratio, r.uncorrected_field_rms);
    report(6, ratio < 0.10, "noiseless closed loop reaches below 10% residual", buf,
           seconds_since(t0));
}

void criterion_7(const fewha::SystemGeometry& maory, const fewha::SystemGeometry& maory9) {
    const auto t0 = clock_type::now();
    const int n_threads = fewha::Reconstructor::default_threads(maory);
    // sweeps that compare step times across points run at the hardware
    // concurrency: oversubscribed thread pools add scheduler jitter without
    // changing trends
    const int bench_threads =
        std::min(n_threads, static_cast<int>(std::thread::hardware_concurrency()));

    fewha::SweepSpec pcg_sweep{"pcg_iters", {4.0, 8.0}, 5, 6, 10};
    const auto pcg_rows = fewha::run_bench(maory, pcg_sweep, bench_threads, 1);
    const auto pcg_med = fewha::bench_minima(pcg_rows);
    const double ratio = pcg_med[1].second / pcg_med[0].second;

    fewha::SweepSpec layer_sweep{"layers", {3, 4, 5, 6, 7, 8, 9}, 5, 6, 10};
    const auto layer_rows = fewha::run_bench(maory9, layer_sweep, bench_threads, 1);
    const auto layer_med = fewha::bench_minima(layer_rows);
    bool monotone = true;
    for (std::size_t k = 1; k < layer_med.size(); ++k)
        monotone = monotone && layer_med[k].second > layer_med[k - 1].second;

    fewha::SweepSpec thread_sweep{"threads", {1.0, static_cast<double>(n_threads)}, 3, 6, 8};
    const auto thread_rows = fewha::run_bench(maory, thread_sweep, 0, 1);
    const auto thread_med = fewha::bench_minima(thread_rows);
    const double speedup = thread_med[0].second / thread_med[1].second;

    const double elapsed = seconds_since(t0);
    const bool ok =
        ratio >= 1.6 && ratio <= 2.4 && monotone && speedup > 1.0 && elapsed < 600.0;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "time(8)/time(4) = %.2f in [1.6,2.4]; step time monotone over L=3..9: %s; "
                  "speedup at %d threads = %.2f",
                  ratio, monotone ? "yes" : "NO", n_threads, speedup);
    report(7, ok, "scaling trends at MAORY scale", buf, elapsed);
}

void criterion_8(const fewha::SystemGeometry& maory) {
    const auto t0 = clock_type::now();
    const auto truth = fewha::generate_atmosphere(maory, 3);
    std::vector<fewha::MirrorShapes> finals;
    for (int threads : {1, 2, fewha::Reconstructor::default_threads(maory)}) {
        fewha::Reconstructor rec(maory, threads);
        rec.build_preconditioner();
        fewha::ReconstructorState st = fewha::ReconstructorState::zero(maory);
        fewha::MirrorShapes a;
        for (int step = 0; step < 5; ++step) {
            const auto meas = fewha::synthesize_measurements(
                truth.layers, &st.a_prev2, maory, 70 + static_cast<std::uint64_t>(step));
            a = rec.step(st, meas);
        }
        finals.push_back(std::move(a));
    }
    const bool ok = finals[0].bitwise_equal(finals[1]) && finals[0].bitwise_equal(finals[2]);
    report(8, ok, "bitwise-identical reconstruction across thread counts {1, 2, max(L,W)}",
           ok ? "5 MAORY steps, outputs identical" : "outputs differ", seconds_since(t0));
}

void criterion_9() {
    const auto t0 = clock_type::now();
    bool ok = true;
    double worst_norm = 0.0, worst_rec = 0.0, worst_coarse = 0.0;
    fewha::GaussianStream gs(5);
    for (int J = 3; J <= 7; ++J) {
        const int n = 1 << J;
        for (int order = 1; order <= 10; ++order) {
            const fewha::Wavelet2D w(order);
            fewha::Grid2D g(n, n);
            std::vector<double> orig(g.size());
            for (double& v : orig) v = gs();
            std::copy(orig.begin(), orig.end(), g.data());
            w.forward(g);
            const double ratio = fewha::norm2(g.flat()) / fewha::norm2(orig);
            worst_norm = std::max(worst_norm, std::abs(ratio - 1.0));
            w.inverse(g);
            double diff = 0.0;
            for (std::size_t k = 0; k < orig.size(); ++k)
                diff = std::max(diff, std::abs(g.data()[k] - orig[k]));
            worst_rec = std::max(worst_rec, diff / fewha::norm_inf(orig));

            const double c = 0.8125;
            fewha::Grid2D cg(n, n, c);
            w.forward(cg);
            worst_coarse = std::max(worst_coarse, std::abs(cg(0, 0) - c * n) / (c * n));
            double detail = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    if (i || j) detail = std::max(detail, std::abs(cg(i, j)));
            ok = ok && detail <= 1e-12 * c * n;
        }
    }
    ok = ok && worst_norm <= 1e-12 && worst_rec <= 1e-10 && worst_coarse <= 1e-12;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "J in 3..7, orders 1..10: orthonormality %.1e (tol 1e-12), reconstruction %.1e "
                  "(tol 1e-10), coarse 2^J*c %.1e",
                  worst_norm, worst_rec, worst_coarse);
    report(9, ok, "wavelet properties across scales and orders", buf, seconds_since(t0));
}

}  // namespace

int main() {
    const auto t0 = clock_type::now();
    const auto mini = fewha::load_config(preset("mini.json"));
    const auto maory = fewha::load_config(preset("maory.json"));
    const auto maory9 = fewha::load_config(preset("maory9.json"));

    criteria_1_2_4(mini);
    criterion_3(mini, maory, maory9);
    criterion_5(mini);
    criterion_6(mini);
    criterion_7(maory, maory9);
    criterion_8(maory);
    criterion_9();

    std::printf("%s: %d criterion failure(s), total %.1f s\n", g_failures ? "FAIL" : "OK",
                g_failures, seconds_since(t0));
    return g_failures ? 1 : 0;
}
