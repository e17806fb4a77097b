// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations and fixtures shared by the test suites.

#ifndef ADAPTPROMPT_TEST_ORACLES_HPP
#define ADAPTPROMPT_TEST_ORACLES_HPP

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "adaptprompt/adaptprompt.hpp"

namespace oracle {

namespace ap = adaptprompt;
namespace fs = std::filesystem;

inline ap::Tensor random_tensor(ap::Rng& rng, ap::Shape shape, double lo = -1.0, double hi = 1.0) {
    ap::Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// O(H^2 W^2) double sum straight from the DFT definition.
inline std::vector<std::complex<double>> naive_dft(const ap::Tensor& img) {
    const std::size_t h = img.dim(0), w = img.dim(1);
    std::vector<std::complex<double>> out(h * w);
    for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < w; ++v) {
            std::complex<double> acc = 0.0;
            for (std::size_t x = 0; x < h; ++x)
                for (std::size_t y = 0; y < w; ++y) {
                    const double ang = -2.0 * std::numbers::pi *
                                       (static_cast<double>(u * x) / static_cast<double>(h) +
                                        static_cast<double>(v * y) / static_cast<double>(w));
                    acc += img(x, y) * std::complex<double>(std::cos(ang), std::sin(ang));
                }
            out[u * w + v] = acc;
        }
    return out;
}

/// Precision at the rank of every positive, with ranks read off pairwise comparisons:
/// sample j precedes i iff s_j > s_i, or s_j == s_i and j < i.
inline double brute_force_ap(const std::vector<double>& s, const std::vector<bool>& pos) {
    const std::size_t n = s.size();
    auto precedes = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
    double sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!pos[i]) continue;
        ++n_pos;
        std::size_t rank = 1, hits = 1;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || !precedes(j, i)) continue;
            ++rank;
            if (pos[j]) ++hits;
        }
        sum += static_cast<double>(hits) / static_cast<double>(rank);
    }
    return sum / static_cast<double>(n_pos);
}

/// Reflected CRC-32 (polynomial 0xEDB88320), one bit at a time.
inline std::uint32_t bitwise_crc32(std::span<const std::uint8_t> bytes) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::uint8_t b : bytes) {
        crc ^= b;
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

inline ap::BackboneConfig tiny_config(ap::Variant v = ap::Variant::v2) {
    ap::BackboneConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.vision_width = 8;
    c.vision_layers = 2;
    c.vision_heads = 2;
    c.text_width = 8;
    c.text_layers = 1;
    c.text_heads = 2;
    c.embed_dim = 6;
    c.vocab_size = 16;
    c.max_seq_len = 8;
    c.variant = v;
    return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("adaptprompt_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

  private:
    fs::path path_;
};

}  // namespace oracle

#endif
