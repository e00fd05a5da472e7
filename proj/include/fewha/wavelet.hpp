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

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fewha/grid.hpp"

namespace fewha {

inline constexpr int kMinWaveletOrder = 1;
inline constexpr int kMaxWaveletOrder = 10;

/// Daubechies (extremal-phase) scaling filters, orders 1..10, analysis
/// convention a_i = sum_k h[k] x[2i+k].  Values from 60-digit spectral
/// factorization, rounded to 17 significant digits; see
/// docs/wavelet-filters.md.  sum h = sqrt(2), sum h^2 = 1, and all even
/// autocorrelation shifts vanish, so the induced transform is orthonormal
/// to machine precision.
inline std::span<const double> daubechies_scaling_filter(int order) {
    static const std::array<std::vector<double>, 10> table = {{
        {0.70710678118654752, 0.70710678118654752},
        {-0.12940952255126038, 0.22414386804201338, 0.83651630373780791, 0.48296291314453414},
        {0.035226291885709537, -0.085441273882026662, -0.13501102001025459, 0.45987750211849157,
         0.80689150931109258, 0.33267055295008262},
        {-0.010597401785069032, 0.032883011666885200, 0.030841381835560764, -0.18703481171909308,
         -0.027983769416859854, 0.63088076792985891, 0.71484657055291565, 0.23037781330889650},
        {0.0033357252854737713, -0.012580751999081999, -0.0062414902127982743, 0.077571493840045714,
         -0.032244869584638375, -0.24229488706638203, 0.13842814590132073, 0.72430852843777293,
         0.60382926979718967, 0.16010239797419291},
        {-0.0010773010853084796, 0.0047772575109455106, 0.00055384220116149614, -0.031582039317486030,
         0.027522865530305729, 0.097501605587323049, -0.12976686756726194, -0.22626469396543982,
         0.31525035170919763, 0.75113390802109535, 0.49462389039845309, 0.11154074335010946},
        {0.00035371379997452025, -0.0018016407040474909, 0.00042957797292136652, 0.012550998556099841,
         -0.016574541630666881, -0.038029936935014414, 0.080612609151083072, 0.071309219266830265,
         -0.22403618499387498, -0.14390600392856498, 0.46978228740519312, 0.72913209084623512,
         0.39653931948191731, 0.077852054085009179},
        {-0.00011747678412476953, 0.00067544940645056937, -0.00039174037337694705, -0.0048703529934515743,
         0.0087460940474057767, 0.013981027917398282, -0.044088253930794752, -0.017369301001807546,
         0.12874742662047846, 0.00047248457391328277, -0.28401554296154693, -0.015829105256349306,
         0.58535468365420671, 0.67563073629728981, 0.31287159091429997, 0.054415842243104010},
        {3.9347320316271599e-05, -0.00025196318894271014, 0.00023038576352319597, 0.0018476468830562265,
         -0.0042815036824634298, -0.0047232047577513973, 0.022361662123679097, 0.00025094711483145196,
         -0.067632829061329974, 0.030725681479333379, 0.14854074933810638, -0.096840783222976461,
         -0.29327378327917491, 0.13319738582500758, 0.65728807805130054, 0.60482312369011111,
         0.24383467461259035, 0.038077947363878347},
        {-1.3264202894521245e-05, 9.3588670320069591e-05, -0.00011646685512928545, -0.00068585669495971163,
         0.0019924052951850561, 0.0013953517470529012, -0.010733175483330575, 0.0036065535669561697,
         0.033212674059341002, -0.029457536821875813, -0.071394147166397087, 0.093057364603572351,
         0.12736934033579326, -0.19594627437737704, -0.24984642432731538, 0.28117234366057746,
         0.68845903945360357, 0.52720118893172559, 0.18817680007769149, 0.026670057900555554},
    }};
    if (order < kMinWaveletOrder || order > kMaxWaveletOrder)
        throw std::invalid_argument("daubechies_scaling_filter: order must be in 1..10");
    return table[static_cast<std::size_t>(order - 1)];
}

inline bool is_power_of_two(int n) { return n > 0 && std::has_single_bit(static_cast<unsigned>(n)); }

/// Sub-band scale index of coefficient position (i, j) in the standard Mallat
/// layout of a 2^J x 2^J grid: 0 = coarse block at the origin, and a detail
/// block of side 2^b carries scale b+1 (higher scale = finer detail).
inline int subband_scale(int i, int j) {
    const unsigned m = static_cast<unsigned>(std::max(i, j));
    return static_cast<int>(std::bit_width(m));
}

/// Orientation within the scale: 0 coarse, 1 detail columns, 2 detail rows, 3 diagonal.
inline int subband_orientation(int i, int j) {
    const unsigned m = static_cast<unsigned>(std::max(i, j));
    if (m == 0) return 0;
    const int p = static_cast<int>(std::bit_floor(m));
    return (i >= p ? 2 : 0) + (j >= p ? 1 : 0);
}

/// 2D separable multilevel DWT on 2^J x 2^J grids with periodic boundary
/// handling.  All three entry points are pure given the filter, so distinct
/// layers may be transformed concurrently.
class Wavelet2D {
public:
    explicit Wavelet2D(int order) : order_(order) {
        const auto lo = daubechies_scaling_filter(order);
        lo_.assign(lo.begin(), lo.end());
        hi_.resize(lo_.size());
        const int len = static_cast<int>(lo_.size());
        for (int k = 0; k < len; ++k)
            hi_[k] = (k % 2 == 0 ? 1.0 : -1.0) * lo_[len - 1 - k];
    }

    int order() const { return order_; }

    /// Full J-level analysis, in place.  Coarse coefficient lands at (0,0).
    /// The column pass runs as a row pass on the transposed subgrid: same
    /// operands in the same order (bitwise-identical results), contiguous
    /// memory access.
    void forward(Grid2D& g) const {
        check_square_pow2(g);
        const int n = g.rows();
        std::vector<double> tmp(static_cast<std::size_t>(n));
        for (int s = n; s >= 2; s /= 2) {
            for (int i = 0; i < s; ++i) analysis_step(&g(i, 0), s, tmp.data());
            transpose_subgrid(g, s);
            for (int i = 0; i < s; ++i) analysis_step(&g(i, 0), s, tmp.data());
            transpose_subgrid(g, s);
        }
    }

    /// Exact inverse of forward(), in place.
    void inverse(Grid2D& g) const {
        check_square_pow2(g);
        const int n = g.rows();
        std::vector<double> tmp(static_cast<std::size_t>(n));
        for (int s = 2; s <= n; s *= 2) {
            transpose_subgrid(g, s);
            for (int i = 0; i < s; ++i) synthesis_step(&g(i, 0), s, tmp.data());
            transpose_subgrid(g, s);
            for (int i = 0; i < s; ++i) synthesis_step(&g(i, 0), s, tmp.data());
        }
    }

    /// (W^-1)^T.  The filters are orthonormal, so the transposed inverse is
    /// the forward transform; kept as a distinct entry point because the
    /// reconstructor applies it in a different role (Eq. rhs chain).
    void inverse_transposed(Grid2D& g) const { forward(g); }

private:
    static void check_square_pow2(const Grid2D& g) {
        if (g.rows() != g.cols() || !is_power_of_two(g.rows()))
            throw std::invalid_argument("Wavelet2D: grid must be square with power-of-two side");
    }

    // One periodic analysis pass over the contiguous row x[0..m):
    // approximations to the front half, details to the back half.
    void analysis_step(double* x, int m, double* tmp) const {
        const int half = m / 2;
        const int mask = m - 1;
        const int flen = static_cast<int>(lo_.size());
        for (int i = 0; i < half; ++i) {
            double a = 0.0, d = 0.0;
            for (int k = 0; k < flen; ++k) {
                const double v = x[(2 * i + k) & mask];
                a += lo_[k] * v;
                d += hi_[k] * v;
            }
            tmp[i] = a;
            tmp[half + i] = d;
        }
        for (int i = 0; i < m; ++i) x[i] = tmp[i];
    }

    void synthesis_step(double* x, int m, double* tmp) const {
        const int half = m / 2;
        const int mask = m - 1;
        const int flen = static_cast<int>(lo_.size());
        for (int i = 0; i < m; ++i) tmp[i] = 0.0;
        for (int i = 0; i < half; ++i) {
            const double a = x[i];
            const double d = x[half + i];
            for (int k = 0; k < flen; ++k) tmp[(2 * i + k) & mask] += a * lo_[k] + d * hi_[k];
        }
        for (int i = 0; i < m; ++i) x[i] = tmp[i];
    }

    // tiled in-place transpose of the top-left s x s subgrid
    static void transpose_subgrid(Grid2D& g, int s) {
        constexpr int tile = 16;
        for (int bi = 0; bi < s; bi += tile) {
            const int ei = std::min(bi + tile, s);
            for (int i = bi; i < ei; ++i)
                for (int j = i + 1; j < ei; ++j) std::swap(g(i, j), g(j, i));
            for (int bj = bi + tile; bj < s; bj += tile) {
                const int ej = std::min(bj + tile, s);
                for (int i = bi; i < ei; ++i)
                    for (int j = bj; j < ej; ++j) std::swap(g(i, j), g(j, i));
            }
        }
    }

    int order_;
    std::vector<double> lo_;
    std::vector<double> hi_;
};

}  // namespace fewha
