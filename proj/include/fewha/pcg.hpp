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
#include <span>
#include <stdexcept>
#include <vector>

#include "fewha/grid.hpp"

namespace fewha {

/// Scalar carry-overs of the fused PCG.  `fresh` selects the classical CG
/// start (beta = 0, alpha = rho/mu) on the next iteration; afterwards
/// rho_old and alpha persist -- including across warm-restarted calls, where
/// the carried direction vectors p, q make the fused updates well defined.
struct PcgScalars {
    double rho_old = 0.0;
    double alpha = 0.0;
    bool fresh = true;

    void reset() { *this = PcgScalars{}; }
};

/// Fused preconditioned conjugate gradient for M c = b.  By default runs
/// exactly max_iter iterations (fixed-count real-time scheme; no early exit),
/// updating c, r, p, q and the carried scalars in place.  r must hold the
/// current residual b - M c on entry.  Returns the preconditioned residual
/// norms rho = (r, z) per iteration.  A positive rel_tol enables the offline
/// convergence exit: iteration stops once rho falls to rel_tol^2 of the
/// entry value (then the rho log is shorter than max_iter).
///
/// Per iteration:  z = J^-1 r;  s = M z;  rho = (r,z);  mu = (s,z);
///                 beta = rho/rho_old;  alpha = rho/(mu - rho*beta/alpha_prev);
///                 p = z + beta p;  q = s + beta q;  c += alpha p;  r -= alpha q.
template <typename ApplyM>
std::vector<double> pcg_solve(ApplyM&& apply_m, std::span<const double> jacobi,
                              std::span<double> c, std::span<double> r, std::span<double> p,
                              std::span<double> q, PcgScalars& sc, int max_iter,
                              double rel_tol = 0.0) {
    const std::size_t n = c.size();
    if (r.size() != n || p.size() != n || q.size() != n || jacobi.size() != n)
        throw std::invalid_argument("pcg_solve: vector length mismatch");
    if (max_iter < 1) throw std::invalid_argument("pcg_solve: max_iter must be >= 1");
    for (double v : jacobi)
        if (!(v > 0.0)) throw std::invalid_argument("pcg_solve: preconditioner entries must be > 0");

    std::vector<double> z(n), s(n);
    std::vector<double> rho_log;
    rho_log.reserve(static_cast<std::size_t>(max_iter));
    double rho_entry = -1.0;

    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / jacobi[i];
        apply_m(std::span<const double>(z), std::span<double>(s));

        const double rho = dot(r, z);
        const double mu = dot(s, z);
        if (rho_entry < 0.0) rho_entry = rho;
        if (rel_tol > 0.0 && rho <= rel_tol * rel_tol * rho_entry) {
            rho_log.push_back(rho);
            break;
        }

        if (rho == 0.0 && mu == 0.0) {
            // exactly converged residual: no-op iterations keep the fixed count
            // without disturbing the carried directions and scalars
            rho_log.push_back(0.0);
            continue;
        }
        double beta, alpha;
        if (sc.fresh) {
            beta = 0.0;
            alpha = rho / mu;
            sc.fresh = false;
        } else {
            beta = rho / sc.rho_old;
            alpha = rho / (mu - rho * beta / sc.alpha);
        }
        if (!std::isfinite(rho) || !std::isfinite(mu) || !std::isfinite(beta) ||
            !std::isfinite(alpha))
            throw std::runtime_error("pcg_solve: non-finite scalar (indefinite operator?)");
        sc.rho_old = rho;
        sc.alpha = alpha;

        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        for (std::size_t i = 0; i < n; ++i) q[i] = s[i] + beta * q[i];
        for (std::size_t i = 0; i < n; ++i) c[i] += alpha * p[i];
        for (std::size_t i = 0; i < n; ++i) r[i] -= alpha * q[i];
        rho_log.push_back(rho);
    }
    return rho_log;
}

}  // namespace fewha
