// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace ap = adaptprompt;
using ap::Tensor;

namespace {

void expect_matches_naive(const Tensor& img, double tol) {
    const auto f = ap::fft2(img);
    const auto ref = oracle::naive_dft(img);
    ASSERT_EQ(f.rows, img.dim(0));
    ASSERT_EQ(f.cols, img.dim(1));
    for (std::size_t u = 0; u < f.rows; ++u)
        for (std::size_t v = 0; v < f.cols; ++v) EXPECT_LE(std::abs(f.at(u, v) - ref[u * f.cols + v]), tol);
}

}  // namespace

TEST(Fft2, ConstantImageHasOnlyDc) {
    const auto f = ap::fft2(Tensor({8, 8}, 0.25));
    EXPECT_NEAR(f.at(0, 0).real(), 16.0, 1e-12);
    for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t v = 0; v < 8; ++v) {
            if (u || v) {
                EXPECT_LE(std::abs(f.at(u, v)), 1e-12);
            }
        }
}

TEST(Fft2, ImpulseHasFlatSpectrum) {
    Tensor img({4, 4});
    img(0, 0) = 1.0;
    const auto f = ap::fft2(img);
    for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t v = 0; v < 4; ++v) EXPECT_LE(std::abs(f.at(u, v) - std::complex<double>(1.0, 0.0)), 1e-15);
}

TEST(Fft2, MatchesNaiveDftPowerOfTwo) {
    ap::Rng rng(21);
    expect_matches_naive(oracle::random_tensor(rng, {4, 4}), 1e-12);
    expect_matches_naive(oracle::random_tensor(rng, {16, 8}), 1e-11);
}

TEST(Fft2, MatchesNaiveDftOtherSizes) {
    ap::Rng rng(22);
    expect_matches_naive(oracle::random_tensor(rng, {5, 7}), 1e-11);
    expect_matches_naive(oracle::random_tensor(rng, {6, 6}), 1e-11);
}

TEST(Fft2, Parseval) {
    ap::Rng rng(23);
    const Tensor img = oracle::random_tensor(rng, {32, 32});
    const auto f = ap::fft2(img);
    double spatial = 0.0, spectral = 0.0;
    for (double v : img.data()) spatial += v * v;
    for (std::size_t u = 0; u < 32; ++u)
        for (std::size_t v = 0; v < 32; ++v) spectral += f.power(u, v);
    EXPECT_NEAR(spectral / (32.0 * 32.0), spatial, 1e-9 * spatial);
}

TEST(Fft2, RejectsNonMatrix) {
    EXPECT_THROW((void)ap::fft2(Tensor({4})), ap::DimensionError);
    EXPECT_THROW((void)ap::fft2(Tensor({0, 4})), ap::DimensionError);
}
