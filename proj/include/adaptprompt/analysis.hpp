// SPDX-License-Identifier: Apache-2.0
//
// Spectral forensics (azimuthally integrated power spectra, spike detection),
// robustness sweeps under blur / JPEG-like quantization, and embedding export.

#ifndef ADAPTPROMPT_ANALYSIS_HPP
#define ADAPTPROMPT_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "adaptprompt/adaptation.hpp"
#include "adaptprompt/backbone.hpp"
#include "adaptprompt/data.hpp"
#include "adaptprompt/fft.hpp"
#include "adaptprompt/image_ops.hpp"
#include "adaptprompt/metrics.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

/// Bin b holds centered frequencies with radius in [b, b + 1) cycles per image.
struct RadialSpectrum {
    std::vector<double> mean_power;
    std::vector<std::size_t> counts;

    std::size_t bins() const { return mean_power.size(); }
    double total_power() const {
        double t = 0.0;
        for (std::size_t b = 0; b < bins(); ++b) t += mean_power[b] * static_cast<double>(counts[b]);
        return t;
    }
};

/// Signed frequency of DFT index u on an n-point grid, as placed by an fftshift.
inline long long centered_frequency(std::size_t u, std::size_t n) {
    return u < (n + 1) / 2 ? static_cast<long long>(u) : static_cast<long long>(u) - static_cast<long long>(n);
}

/// Radial bin of every DFT coefficient of an n x n grid.
inline std::vector<std::size_t> radial_bins(std::size_t n, std::size_t* num_bins = nullptr) {
    std::vector<std::size_t> bins(n * n);
    std::size_t top = 0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) {
            const double fu = static_cast<double>(centered_frequency(u, n));
            const double fv = static_cast<double>(centered_frequency(v, n));
            const auto b = static_cast<std::size_t>(std::floor(std::sqrt(fu * fu + fv * fv)));
            bins[u * n + v] = b;
            top = std::max(top, b);
        }
    if (num_bins) *num_bins = top + 1;
    return bins;
}

/// Per-radius mean of |F|^2; the mean is not removed, so DC lands in bin 0.
inline RadialSpectrum radial_power_spectrum(const Tensor& image) {
    require_rank(image, 2, "radial_power_spectrum");
    if (image.dim(0) != image.dim(1)) {
        throw DimensionError("radial_power_spectrum: image must be square, got " + shape_string(image.shape()));
    }
    const std::size_t n = image.dim(0);
    const ComplexGrid f = fft2(image);
    std::size_t nb = 0;
    const auto bins = radial_bins(n, &nb);
    RadialSpectrum s{std::vector<double>(nb, 0.0), std::vector<std::size_t>(nb, 0)};
    for (std::size_t i = 0; i < n * n; ++i) {
        s.mean_power[bins[i]] += f.real[i] * f.real[i] + f.imag[i] * f.imag[i];
        ++s.counts[bins[i]];
    }
    for (std::size_t b = 0; b < nb; ++b)
        if (s.counts[b]) s.mean_power[b] /= static_cast<double>(s.counts[b]);
    return s;
}

/// Bin-wise mean of the per-image spectra.
inline RadialSpectrum dataset_mean_spectrum(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("dataset_mean_spectrum: no images");
    RadialSpectrum acc = radial_power_spectrum(images.front());
    for (std::size_t i = 1; i < images.size(); ++i) {
        if (images[i].shape() != images.front().shape()) {
            throw DimensionError("dataset_mean_spectrum: image " + std::to_string(i) + " has shape " +
                                 shape_string(images[i].shape()) + ", expected " + shape_string(images.front().shape()));
        }
        const RadialSpectrum s = radial_power_spectrum(images[i]);
        for (std::size_t b = 0; b < acc.bins(); ++b) acc.mean_power[b] += s.mean_power[b];
    }
    for (double& v : acc.mean_power) v /= static_cast<double>(images.size());
    return acc;
}

inline constexpr double kSpikeFactor = 3.0;
inline constexpr std::size_t kSpikeNeighbours = 4;
inline constexpr double kSpikeFloor = 1e-9;  // relative to the largest bin

/// Bins (excluding DC) whose mean exceeds 3x the mean of their 4 nearest non-spike
/// neighbours. The spike set is refined until it stops changing.
inline std::vector<std::size_t> detect_spikes(const RadialSpectrum& s) {
    const std::size_t nb = s.bins();
    if (nb < 2) return {};
    const double floor = kSpikeFloor * *std::max_element(s.mean_power.begin(), s.mean_power.end());
    std::vector<bool> spike(nb, false);
    for (int iter = 0; iter < 16; ++iter) {
        std::vector<bool> next(nb, false);
        for (std::size_t b = 1; b < nb; ++b) {
            if (s.mean_power[b] <= floor) continue;
            std::vector<std::size_t> cand;
            for (std::size_t j = 1; j < nb; ++j)
                if (j != b && !spike[j]) cand.push_back(j);
            std::stable_sort(cand.begin(), cand.end(), [b](std::size_t x, std::size_t y) {
                const auto dx = x > b ? x - b : b - x, dy = y > b ? y - b : b - y;
                return dx < dy;
            });
            if (cand.empty()) continue;
            const std::size_t k = std::min(kSpikeNeighbours, cand.size());
            double mean = 0.0;
            for (std::size_t i = 0; i < k; ++i) mean += s.mean_power[cand[i]];
            mean /= static_cast<double>(k);
            next[b] = s.mean_power[b] > kSpikeFactor * mean;
        }
        if (next == spike) break;
        spike = std::move(next);
    }
    std::vector<std::size_t> out;
    for (std::size_t b = 1; b < nb; ++b)
        if (spike[b]) out.push_back(b);
    return out;
}

/// First bin of the upper third of the radial range.
inline std::size_t upper_third_start(std::size_t bins) { return bins - bins / 3; }

/// Sum of mean power over the upper third of bins, numerator over reference.
inline double high_frequency_ratio(const RadialSpectrum& s, const RadialSpectrum& reference) {
    if (s.bins() != reference.bins()) throw DimensionError("high_frequency_ratio: spectra differ in bin count");
    double num = 0.0, den = 0.0;
    for (std::size_t b = upper_third_start(s.bins()); b < s.bins(); ++b) {
        num += s.mean_power[b];
        den += reference.mean_power[b];
    }
    if (den <= 0.0) throw UndefinedMetric("high_frequency_ratio: reference has no high-frequency power");
    return num / den;
}

/// "radius<TAB>mean_power<TAB>count" per bin; radius is the bin's lower edge.
inline std::string format_spectrum(const RadialSpectrum& s) {
    std::string out;
    char buf[96];
    for (std::size_t b = 0; b < s.bins(); ++b) {
        std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%zu\n", b, s.mean_power[b], s.counts[b]);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// robustness

enum class PerturbationKind { blur, jpeg_like };

struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::blur;
    double parameter = 0.0;  // sigma in pixels, or quality in [1, 100]

    void validate() const {
        if (kind == PerturbationKind::blur) {
            if (!(parameter >= 0.0)) throw std::invalid_argument("blur sigma must be >= 0");
        } else if (parameter != std::floor(parameter) || parameter < 1.0 || parameter > 100.0) {
            throw std::invalid_argument("jpeg_like quality must be an integer in [1, 100]");
        }
    }
    std::string_view kind_name() const { return kind == PerturbationKind::blur ? "blur" : "jpeg"; }
};

inline Tensor apply_perturbation(const Tensor& image, const PerturbationSpec& p) {
    p.validate();
    return p.kind == PerturbationKind::blur ? gaussian_blur(image, p.parameter)
                                            : jpeg_like(image, static_cast<int>(p.parameter));
}

/// Blur sigmas ascending, then JPEG qualities descending (both in increasing strength).
inline std::vector<PerturbationSpec> perturbation_grid(const std::vector<double>& sigmas, const std::vector<double>& qualities) {
    std::vector<PerturbationSpec> out;
    std::vector<double> s = sigmas, q = qualities;
    std::sort(s.begin(), s.end());
    std::sort(q.begin(), q.end(), std::greater<>());
    for (double v : s) out.push_back({PerturbationKind::blur, v});
    for (double v : q) out.push_back({PerturbationKind::jpeg_like, v});
    for (const auto& p : out) p.validate();
    return out;
}

struct CurveRow {
    PerturbationSpec spec;
    double ap = 0.0;
    double acc = 0.0;
};

/// Pooled AP / accuracy over `images` (labels from `meta`) after each perturbation.
inline std::vector<CurveRow> robustness_sweep(const AdaptState& state, const BackboneParams& bb,
                                              const std::vector<Tensor>& images, const std::vector<ScoredSample>& meta,
                                              const std::vector<PerturbationSpec>& specs) {
    if (images.size() != meta.size()) throw std::invalid_argument("robustness_sweep: images and labels differ in count");
    std::vector<CurveRow> rows;
    if (specs.empty()) return rows;
    const Tensor emb = state.config.mode == TrainMode::linear_probe ? Tensor() : class_embeddings(bb, state);
    for (const auto& spec : specs) {
        std::vector<Tensor> perturbed;
        perturbed.reserve(images.size());
        for (const auto& img : images) perturbed.push_back(apply_perturbation(img, spec));
        const Tensor x = vision_features(bb, perturbed, state.config.variant);
        const Tensor p = predict_probabilities(state, emb, x);
        std::vector<ScoredSample> scored = meta;
        for (std::size_t i = 0; i < scored.size(); ++i) scored[i].score = std::clamp(p(i, kFakeClass), 0.0, 1.0);
        rows.push_back({spec, average_precision(scored), accuracy(scored)});
    }
    return rows;
}

/// "kind<TAB>param<TAB>AP<TAB>ACC" per row.
inline std::string format_curve(const std::vector<CurveRow>& rows) {
    std::string out;
    for (const auto& r : rows)
        out += std::string(r.spec.kind_name()) + '\t' + format6(r.spec.parameter) + '\t' + format6(r.ap) + '\t' +
               format6(r.acc) + '\n';
    return out;
}

// ---------------------------------------------------------------------------
// embedding export

enum class EmbeddingStage { raw_feature, post_adapter };

inline EmbeddingStage parse_stage(std::string_view s) {
    if (s == "raw_feature") return EmbeddingStage::raw_feature;
    if (s == "post_adapter") return EmbeddingStage::post_adapter;
    throw std::invalid_argument("unknown stage '" + std::string(s) + "' (expected raw_feature or post_adapter)");
}

/// One line per record in manifest order: path, label, generator, then the vector.
inline std::string export_embeddings(const AdaptState* state, const Manifest& m, const Tensor& raw_features,
                                     EmbeddingStage stage) {
    if (raw_features.dim(0) != m.size()) throw DimensionError("export_embeddings: one feature row per record required");
    Tensor feats = raw_features;
    if (stage == EmbeddingStage::post_adapter) {
        if (!state) throw std::invalid_argument("export_embeddings: post_adapter stage needs a trained state");
        if (state->config.mode == TrainMode::linear_probe) {
            throw std::invalid_argument("export_embeddings: linear-probe states have no adapted feature space");
        }
        feats = adapted_features(*state, raw_features);
    }
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& r = m.records[i];
        out += r.path + '\t' + std::string(label_name(r.label)) + '\t' + r.generator;
        for (std::size_t j = 0; j < feats.dim(1); ++j) {
            std::snprintf(buf, sizeof buf, "\t%.9g", feats(i, j));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace adaptprompt

#endif
