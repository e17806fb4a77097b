// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional multi-head self-attention with an explicit backward pass.

#ifndef ADAPTPROMPT_ATTENTION_HPP
#define ADAPTPROMPT_ATTENTION_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "adaptprompt/ops.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

/// Projections are stored input-major: q = x * wq + bq.
struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t heads = 1;

    std::size_t width() const { return wq.dim(0); }
};

struct AttentionGrads {
    Tensor dx;
    AttentionParams dparams;
};

namespace ops {

namespace detail {

struct AttentionCache {
    Tensor q, k, v;
    std::vector<Tensor> probs;  // per head, T x T
    Tensor context;             // T x d, heads concatenated
};

inline void check_attention(const Tensor& x, const AttentionParams& p) {
    require_rank(x, 2, "multi_head_attention");
    const std::size_t d = x.dim(1);
    if (p.heads == 0 || d % p.heads != 0) {
        throw DimensionError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                             std::to_string(p.heads) + " heads");
    }
    if (p.wq.shape() != Shape{d, d} || p.wk.shape() != Shape{d, d} || p.wv.shape() != Shape{d, d} ||
        p.wo.shape() != Shape{d, d}) {
        throw DimensionError("multi_head_attention: projection matrices must be " + shape_string({d, d}));
    }
}

inline Tensor head_slice(const Tensor& m, std::size_t h, std::size_t dh) {
    Tensor s({m.dim(0), dh});
    for (std::size_t t = 0; t < m.dim(0); ++t)
        for (std::size_t j = 0; j < dh; ++j) s(t, j) = m(t, h * dh + j);
    return s;
}

inline void head_scatter(Tensor& m, const Tensor& s, std::size_t h, std::size_t dh) {
    for (std::size_t t = 0; t < m.dim(0); ++t)
        for (std::size_t j = 0; j < dh; ++j) m(t, h * dh + j) += s(t, j);
}

inline Tensor attention_forward(const Tensor& x, const AttentionParams& p, AttentionCache* cache) {
    check_attention(x, p);
    const std::size_t tokens = x.dim(0), d = x.dim(1), dh = d / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = add_row(matmul(x, p.wq), p.bq);
    Tensor k = add_row(matmul(x, p.wk), p.bk);
    Tensor v = add_row(matmul(x, p.wv), p.bv);
    Tensor context({tokens, d});
    std::vector<Tensor> probs;
    probs.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        const Tensor qh = head_slice(q, h, dh), kh = head_slice(k, h, dh), vh = head_slice(v, h, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Tensor a = softmax(scores, 1);
        head_scatter(context, matmul(a, vh), h, dh);
        probs.push_back(std::move(a));
    }
    Tensor out = add_row(matmul(context, p.wo), p.bo);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->context = std::move(context);
    }
    return out;
}

}  // namespace detail

/// Scaled dot-product attention, 1/sqrt(d_head) per head, no mask.
inline Tensor multi_head_attention(const Tensor& x, const AttentionParams& p) {
    return detail::attention_forward(x, p, nullptr);
}

inline AttentionGrads multi_head_attention_vjp(const Tensor& x, const AttentionParams& p, const Tensor& g) {
    detail::AttentionCache c;
    detail::attention_forward(x, p, &c);
    if (g.shape() != x.shape()) throw DimensionError("multi_head_attention_vjp: upstream shape mismatch");
    const std::size_t tokens = x.dim(0), d = x.dim(1), dh = d / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    AttentionGrads out;
    out.dparams.heads = p.heads;
    out.dparams.bo = sum_rows(g);
    auto [dcontext, dwo] = matmul_vjp(c.context, p.wo, g);
    out.dparams.wo = std::move(dwo);

    Tensor dq({tokens, d}), dk({tokens, d}), dv({tokens, d});
    for (std::size_t h = 0; h < p.heads; ++h) {
        const Tensor qh = detail::head_slice(c.q, h, dh);
        const Tensor kh = detail::head_slice(c.k, h, dh);
        const Tensor vh = detail::head_slice(c.v, h, dh);
        const Tensor dctx_h = detail::head_slice(dcontext, h, dh);
        auto [da, dvh] = matmul_vjp(c.probs[h], vh, dctx_h);
        Tensor dscores = scale(softmax_vjp_from_output(c.probs[h], da, 1), inv_sqrt);
        auto [dqh, dkt] = matmul_vjp(qh, transpose(kh), dscores);
        detail::head_scatter(dq, dqh, h, dh);
        detail::head_scatter(dk, transpose(dkt), h, dh);
        detail::head_scatter(dv, dvh, h, dh);
    }
    auto [dxq, dwq] = matmul_vjp(x, p.wq, dq);
    auto [dxk, dwk] = matmul_vjp(x, p.wk, dk);
    auto [dxv, dwv] = matmul_vjp(x, p.wv, dv);
    out.dparams.wq = std::move(dwq);
    out.dparams.wk = std::move(dwk);
    out.dparams.wv = std::move(dwv);
    out.dparams.bq = sum_rows(dq);
    out.dparams.bk = sum_rows(dk);
    out.dparams.bv = sum_rows(dv);
    out.dx = add(add(dxq, dxk), dxv);
    return out;
}

}  // namespace ops
}  // namespace adaptprompt

#endif
