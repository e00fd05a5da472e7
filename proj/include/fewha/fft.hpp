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

#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace fewha {

/// Iterative radix-2 complex FFT, in place.  Screen grids are 2^J per side by
/// construction, so this covers everything the synthesis needs.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

/// 2D transform of an n x n row-major complex grid.
inline void fft2_inplace(std::vector<std::complex<double>>& a, int n, bool inverse) {
    if (a.size() != static_cast<std::size_t>(n) * n) throw std::invalid_argument("fft2: size mismatch");
    std::vector<std::complex<double>> col(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<std::complex<double>> row(a.begin() + static_cast<std::ptrdiff_t>(i) * n,
                                              a.begin() + static_cast<std::ptrdiff_t>(i + 1) * n);
        fft_inplace(row, inverse);
        std::copy(row.begin(), row.end(), a.begin() + static_cast<std::ptrdiff_t>(i) * n);
    }
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + j];
        fft_inplace(col, inverse);
        for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + j] = col[static_cast<std::size_t>(i)];
    }
}

}  // namespace fewha
