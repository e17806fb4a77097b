// SPDX-License-Identifier: Apache-2.0
//
// Unnormalized forward 2-D DFT, computed as row transforms followed by column
// transforms. Power-of-two lengths use iterative radix-2; other lengths fall
// back to direct summation.

#ifndef ADAPTPROMPT_FFT_HPP
#define ADAPTPROMPT_FFT_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

struct ComplexGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> real;
    std::vector<double> imag;

    ComplexGrid() = default;
    ComplexGrid(std::size_t r, std::size_t c) : rows(r), cols(c), real(r * c), imag(r * c) {}

    std::complex<double> at(std::size_t u, std::size_t v) const {
        return {real[u * cols + v], imag[u * cols + v]};
    }
    double power(std::size_t u, std::size_t v) const { return std::norm(at(u, v)); }
};

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                // twiddles evaluated directly rather than by recurrence to keep round-off flat
                const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
            }
        }
    }
}

inline void dft_direct(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc{};
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += a[t] * std::polar(1.0, ang);
        }
        out[k] = acc;
    }
    a = std::move(out);
}

inline void dft_1d(std::vector<std::complex<double>>& a) {
    if (is_power_of_two(a.size())) {
        fft_radix2(a);
    } else {
        dft_direct(a);
    }
}

}  // namespace detail

/// F[u][v] = sum_{x,y} img[x][y] exp(-2 pi i (u x / H + v y / W)).
inline ComplexGrid fft2(const Tensor& image) {
    require_rank(image, 2, "fft2");
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h == 0 || w == 0) throw DimensionError("fft2: empty image");
    std::vector<std::complex<double>> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = image[i];

    std::vector<std::complex<double>> line(w);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) line[c] = grid[r * w + c];
        detail::dft_1d(line);
        for (std::size_t c = 0; c < w; ++c) grid[r * w + c] = line[c];
    }
    line.resize(h);
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) line[r] = grid[r * w + c];
        detail::dft_1d(line);
        for (std::size_t r = 0; r < h; ++r) grid[r * w + c] = line[r];
    }

    ComplexGrid out(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
        out.real[i] = grid[i].real();
        out.imag[i] = grid[i].imag();
    }
    return out;
}

}  // namespace adaptprompt

#endif
