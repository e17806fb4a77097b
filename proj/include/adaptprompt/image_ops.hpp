// SPDX-License-Identifier: Apache-2.0
//
// Grayscale image perturbations: separable Gaussian blur and a deterministic
// 8x8 DCT quantization round trip at a JPEG quality setting.

#ifndef ADAPTPROMPT_IMAGE_OPS_HPP
#define ADAPTPROMPT_IMAGE_OPS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

/// Mirror index into [0, n) without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
inline std::size_t reflect_index(long long i, std::size_t n) {
    if (n == 1) return 0;
    const long long period = 2 * (static_cast<long long>(n) - 1);
    long long m = i % period;
    if (m < 0) m += period;
    if (m >= static_cast<long long>(n)) m = period - m;
    return static_cast<std::size_t>(m);
}

/// Normalized 1-D kernel of radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    const long long radius = static_cast<long long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long long i = -radius; i <= radius; ++i) {
        const double w = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (double& w : k) w /= total;
    return k;
}

inline Tensor gaussian_blur(const Tensor& image, double sigma) {
    require_rank(image, 2, "gaussian_blur");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return image;
    const auto k = gaussian_kernel(sigma);
    const long long radius = static_cast<long long>(k.size() / 2);
    const std::size_t h = image.dim(0), w = image.dim(1);
    Tensor tmp({h, w}), out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long long i = -radius; i <= radius; ++i)
                acc += k[static_cast<std::size_t>(i + radius)] * image(y, reflect_index(static_cast<long long>(x) + i, w));
            tmp(y, x) = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long long i = -radius; i <= radius; ++i)
                acc += k[static_cast<std::size_t>(i + radius)] * tmp(reflect_index(static_cast<long long>(y) + i, h), x);
            out(y, x) = acc;
        }
    return out;
}

// ---------------------------------------------------------------------------
// JPEG-like quantization

inline constexpr std::array<int, 64> kLuminanceTable{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

/// Standard luminance table scaled for `quality` in [1, 100], entries clamped to [1, 255].
inline std::array<int, 64> quantization_table(int quality) {
    if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg_like: quality must be in [1, 100]");
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> q{};
    for (std::size_t i = 0; i < 64; ++i) q[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
    return q;
}

namespace detail {

inline const std::array<double, 64>& dct_basis() {
    // basis[u * 8 + x] = c(u) cos((2x + 1) u pi / 16), orthonormal
    static const std::array<double, 64> b = [] {
        std::array<double, 64> t{};
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double c = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
                t[static_cast<std::size_t>(u * 8 + x)] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        return t;
    }();
    return b;
}

inline void dct8x8(const double* in, double* out) {
    const auto& b = dct_basis();
    double tmp[64];
    for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x) acc += b[u * 8 + x] * in[y * 8 + x];
            tmp[y * 8 + u] = acc;
        }
    for (int v = 0; v < 8; ++v)
        for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y) acc += b[v * 8 + y] * tmp[y * 8 + u];
            out[v * 8 + u] = acc;
        }
}

inline void idct8x8(const double* in, double* out) {
    const auto& b = dct_basis();
    double tmp[64];
    for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u) acc += b[u * 8 + x] * in[v * 8 + u];
            tmp[v * 8 + x] = acc;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int v = 0; v < 8; ++v) acc += b[v * 8 + y] * tmp[v * 8 + x];
            out[y * 8 + x] = acc;
        }
}

}  // namespace detail

/// Per 8x8 block: scale to [0,255], shift by -128, DCT-II, quantize/dequantize, inverse,
/// unshift, clamp and rescale to [0,1]. Sides are reflection-padded to a multiple of 8.
inline Tensor jpeg_like(const Tensor& image, int quality) {
    require_rank(image, 2, "jpeg_like");
    const auto q = quantization_table(quality);
    const std::size_t h = image.dim(0), w = image.dim(1);
    if (h == 0 || w == 0) throw DimensionError("jpeg_like: empty image");
    const std::size_t ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
    Tensor out({h, w});
    double block[64], coef[64], rec[64];
    for (std::size_t by = 0; by < ph; by += 8)
        for (std::size_t bx = 0; bx < pw; bx += 8) {
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    const std::size_t sy = reflect_index(static_cast<long long>(by + y), h);
                    const std::size_t sx = reflect_index(static_cast<long long>(bx + x), w);
                    block[y * 8 + x] = image(sy, sx) * 255.0 - 128.0;
                }
            detail::dct8x8(block, coef);
            for (std::size_t i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
            detail::idct8x8(coef, rec);
            for (std::size_t y = 0; y < 8; ++y)
                for (std::size_t x = 0; x < 8; ++x) {
                    if (by + y >= h || bx + x >= w) continue;
                    out(by + y, bx + x) = std::clamp(rec[y * 8 + x] + 128.0, 0.0, 255.0) / 255.0;
                }
        }
    return out;
}

}  // namespace adaptprompt

#endif
