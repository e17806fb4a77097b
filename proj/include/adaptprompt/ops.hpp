// SPDX-License-Identifier: Apache-2.0
//
// Forward operators on the trainable path and their vector-Jacobian products.
// Every function is pure; the *_vjp variants take the forward inputs plus the
// upstream gradient and return gradients in input order.

#ifndef ADAPTPROMPT_OPS_HPP
#define ADAPTPROMPT_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "adaptprompt/tensor.hpp"

namespace adaptprompt::ops {

inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// matmul

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw DimensionError("matmul: inner extents differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            const double* brow = &b.data()[p * n];
            double* crow = &c.data()[i * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    Tensor t({a.dim(1), a.dim(0)});
    for (std::size_t i = 0; i < a.dim(0); ++i)
        for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
    return t;
}

struct MatmulGrads {
    Tensor da;
    Tensor db;
};

inline MatmulGrads matmul_vjp(const Tensor& a, const Tensor& b, const Tensor& g) {
    if (g.rank() != 2 || g.dim(0) != a.dim(0) || g.dim(1) != b.dim(1)) {
        throw DimensionError("matmul_vjp: upstream gradient has shape " + shape_string(g.shape()));
    }
    return {matmul(g, transpose(b)), matmul(transpose(a), g)};
}

// ---------------------------------------------------------------------------
// elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

/// x[T x n] + bias[n] broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row");
    if (bias.size() != x.dim(1)) throw DimensionError("add_row: bias width mismatch");
    Tensor y = x;
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = 0; j < x.dim(1); ++j) y(i, j) += bias[j];
    return y;
}

/// Column sums of a rank-2 gradient; the vjp of add_row with respect to the bias.
inline Tensor sum_rows(const Tensor& g) {
    require_rank(g, 2, "sum_rows");
    Tensor s({g.dim(1)});
    for (std::size_t i = 0; i < g.dim(0); ++i)
        for (std::size_t j = 0; j < g.dim(1); ++j) s[j] += g(i, j);
    return s;
}

inline Tensor scale(const Tensor& x, double s) {
    Tensor y = x;
    for (double& v : y.data()) v *= s;
    return y;
}

inline void accumulate(Tensor& into, const Tensor& g) {
    if (into.shape() != g.shape()) throw DimensionError("accumulate: shape mismatch");
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Subgradient at exactly 0 is 0.
inline Tensor relu_vjp(const Tensor& x, const Tensor& g) {
    if (x.shape() != g.shape()) throw DimensionError("relu_vjp: shape mismatch");
    Tensor dx = g;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] > 0.0)) dx[i] = 0.0;
    return dx;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// x * sigmoid(1.702 x), the feed-forward activation of the backbone blocks.
inline Tensor quick_gelu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data()) v = v * sigmoid(1.702 * v);
    return y;
}

inline Tensor quick_gelu_vjp(const Tensor& x, const Tensor& g) {
    if (x.shape() != g.shape()) throw DimensionError("quick_gelu_vjp: shape mismatch");
    Tensor dx = g;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = sigmoid(1.702 * x[i]);
        dx[i] *= s + 1.702 * x[i] * s * (1.0 - s);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// softmax over an arbitrary axis

namespace detail {
struct AxisLayout {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw DimensionError("softmax: axis out of range for " + shape_string(shape));
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    if (l.extent == 0) throw DimensionError("softmax: empty axis");
    return l;
}
}  // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto l = detail::axis_layout(x.shape(), axis);
    Tensor y(x.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.extent * l.inner + in;
            double mx = x[base];
            for (std::size_t k = 1; k < l.extent; ++k) mx = std::max(mx, x[base + k * l.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < l.extent; ++k) {
                const double e = std::exp(x[base + k * l.inner] - mx);
                y[base + k * l.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < l.extent; ++k) y[base + k * l.inner] /= total;
        }
    }
    require_finite(y, "softmax");
    return y;
}

inline Tensor softmax(const Tensor& x) { return softmax(x, x.rank() - 1); }

/// Takes the softmax output y rather than its input.
inline Tensor softmax_vjp_from_output(const Tensor& y, const Tensor& g, std::size_t axis) {
    if (y.shape() != g.shape()) throw DimensionError("softmax_vjp: shape mismatch");
    const auto l = detail::axis_layout(y.shape(), axis);
    Tensor dx(y.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.extent * l.inner + in;
            double dot = 0.0;
            for (std::size_t k = 0; k < l.extent; ++k) dot += y[base + k * l.inner] * g[base + k * l.inner];
            for (std::size_t k = 0; k < l.extent; ++k) {
                const std::size_t idx = base + k * l.inner;
                dx[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    return dx;
}

inline Tensor softmax_vjp(const Tensor& x, const Tensor& g, std::size_t axis) {
    return softmax_vjp_from_output(softmax(x, axis), g, axis);
}

// ---------------------------------------------------------------------------
// layer norm over the last axis

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kLayerNormEps) {
    if (x.rank() == 0 || x.empty()) throw DimensionError("layer_norm: empty input");
    const std::size_t w = x.shape().back();
    if (gamma.size() != w || beta.size() != w) {
        throw DimensionError("layer_norm: gamma/beta must have width " + std::to_string(w));
    }
    const std::size_t rows = x.size() / w;
    Tensor y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + eps);
        auto yr = y.row(r);
        for (std::size_t j = 0; j < w; ++j) yr[j] = (xr[j] - mean) * inv * gamma[j] + beta[j];
    }
    require_finite(y, "layer_norm");
    return y;
}

struct LayerNormGrads {
    Tensor dx;
    Tensor dgamma;
    Tensor dbeta;
};

inline LayerNormGrads layer_norm_vjp(const Tensor& x, const Tensor& gamma, const Tensor& g,
                                     double eps = kLayerNormEps) {
    if (x.shape() != g.shape()) throw DimensionError("layer_norm_vjp: shape mismatch");
    const std::size_t w = x.shape().back();
    if (gamma.size() != w) throw DimensionError("layer_norm_vjp: gamma width mismatch");
    const std::size_t rows = x.size() / w;
    LayerNormGrads out{Tensor(x.shape()), Tensor({w}), Tensor({w})};
    std::vector<double> xhat(w), dxhat(w);
    const double n = static_cast<double>(w);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto xr = x.row(r);
        const auto gr = g.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            xhat[j] = (xr[j] - mean) * inv;
            dxhat[j] = gr[j] * gamma[j];
            out.dgamma[j] += gr[j] * xhat[j];
            out.dbeta[j] += gr[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[j];
        }
        mean_d /= n;
        mean_dx /= n;
        auto dr = out.dx.row(r);
        for (std::size_t j = 0; j < w; ++j) dr[j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
    }
    return out;
}

// ---------------------------------------------------------------------------
// cosine similarity between every row of a[B x w] and every row of e[C x w]

inline Tensor cosine_similarity(const Tensor& a, const Tensor& e) {
    require_rank(a, 2, "cosine_similarity");
    require_rank(e, 2, "cosine_similarity");
    if (a.dim(1) != e.dim(1)) {
        throw DimensionError("cosine_similarity: widths differ: " + shape_string(a.shape()) + " vs " +
                             shape_string(e.shape()));
    }
    const std::size_t b = a.dim(0), c = e.dim(0), w = a.dim(1);
    std::vector<double> na(b), ne(c);
    for (std::size_t i = 0; i < b; ++i) {
        na[i] = l2_norm(a.row(i));
        if (na[i] == 0.0) throw NumericError("cosine_similarity: zero-norm feature row " + std::to_string(i));
    }
    for (std::size_t k = 0; k < c; ++k) {
        ne[k] = l2_norm(e.row(k));
        if (ne[k] == 0.0) throw NumericError("cosine_similarity: zero-norm class embedding " + std::to_string(k));
    }
    Tensor s({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            double dot = 0.0;
            for (std::size_t j = 0; j < w; ++j) dot += a(i, j) * e(k, j);
            s(i, k) = dot / (na[i] * ne[k]);
        }
    }
    return s;
}

struct CosineGrads {
    Tensor da;
    Tensor de;
};

inline CosineGrads cosine_similarity_vjp(const Tensor& a, const Tensor& e, const Tensor& g) {
    const Tensor s = cosine_similarity(a, e);
    if (g.shape() != s.shape()) throw DimensionError("cosine_similarity_vjp: upstream shape mismatch");
    const std::size_t b = a.dim(0), c = e.dim(0), w = a.dim(1);
    std::vector<double> na(b), ne(c);
    for (std::size_t i = 0; i < b; ++i) na[i] = l2_norm(a.row(i));
    for (std::size_t k = 0; k < c; ++k) ne[k] = l2_norm(e.row(k));
    CosineGrads out{Tensor(a.shape()), Tensor(e.shape())};
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            const double gk = g(i, k);
            if (gk == 0.0) continue;
            const double inv = 1.0 / (na[i] * ne[k]);
            const double sa = s(i, k) / (na[i] * na[i]);
            const double se = s(i, k) / (ne[k] * ne[k]);
            for (std::size_t j = 0; j < w; ++j) {
                out.da(i, j) += gk * (e(k, j) * inv - sa * a(i, j));
                out.de(k, j) += gk * (a(i, j) * inv - se * e(k, j));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// mean cross-entropy of softmax(logits) against integer labels

inline double cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    require_rank(logits, 2, "cross_entropy");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) throw DimensionError("cross_entropy: label count differs from batch");
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= c) throw DimensionError("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
        // log-sum-exp form avoids log(0) when a probability underflows
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (double v : row) total += std::exp(v - mx);
        loss -= row[labels[i]] - mx - std::log(total);
    }
    loss /= static_cast<double>(b);
    if (!std::isfinite(loss)) throw NumericError("cross_entropy: non-finite loss");
    return loss;
}

/// Gradient of the mean loss with respect to the logits, scaled by the scalar upstream g.
inline Tensor cross_entropy_vjp(const Tensor& logits, std::span<const std::size_t> labels, double g = 1.0) {
    Tensor d = softmax(logits, 1);
    const std::size_t b = logits.dim(0);
    for (std::size_t i = 0; i < b; ++i) d(i, labels[i]) -= 1.0;
    for (double& v : d.data()) v *= g / static_cast<double>(b);
    return d;
}

}  // namespace adaptprompt::ops

#endif
