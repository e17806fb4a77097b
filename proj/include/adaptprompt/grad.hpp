// SPDX-License-Identifier: Apache-2.0
//
// Uniform op-id dispatch over the forward operators and their vjps, plus the
// central-difference gradient used as the independent check.

#ifndef ADAPTPROMPT_GRAD_HPP
#define ADAPTPROMPT_GRAD_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/attention.hpp"
#include "adaptprompt/ops.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

enum class OpId {
    matmul,
    relu,
    quick_gelu,
    softmax,
    layer_norm,
    multi_head_attention,
    add,
    cosine_similarity,
    cross_entropy,
};

inline constexpr std::array<std::pair<OpId, std::string_view>, 9> kOpNames{{
    {OpId::matmul, "matmul"},
    {OpId::relu, "relu"},
    {OpId::quick_gelu, "quick_gelu"},
    {OpId::softmax, "softmax"},
    {OpId::layer_norm, "layer_norm"},
    {OpId::multi_head_attention, "multi_head_attention"},
    {OpId::add, "add"},
    {OpId::cosine_similarity, "cosine_similarity"},
    {OpId::cross_entropy, "cross_entropy"},
}};

inline OpId parse_op(std::string_view name) {
    for (const auto& [id, n] : kOpNames)
        if (n == name) return id;
    throw std::invalid_argument("unknown op id '" + std::string(name) + "'");
}

inline std::string_view op_name(OpId id) {
    for (const auto& [i, n] : kOpNames)
        if (i == id) return n;
    return "?";
}

struct OpAttributes {
    std::size_t axis = 1;        // softmax
    double eps = ops::kLayerNormEps;
    std::size_t heads = 1;       // multi_head_attention
};

// Input conventions:
//   matmul {a, b}; relu/quick_gelu/softmax {x}; layer_norm {x, gamma, beta};
//   multi_head_attention {x, wq, bq, wk, bk, wv, bv, wo, bo}; add {a, b};
//   cosine_similarity {features, classes}; cross_entropy {logits, labels}
//   where labels holds class indices as reals and the output is a [1] tensor.

namespace detail {

inline void require_inputs(OpId op, std::span<const Tensor> inputs, std::size_t n) {
    if (inputs.size() != n) {
        throw DimensionError(std::string(op_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(inputs.size()));
    }
}

inline AttentionParams attention_from(std::span<const Tensor> in, std::size_t heads) {
    return AttentionParams{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], heads};
}

inline std::vector<std::size_t> labels_from(const Tensor& t) {
    std::vector<std::size_t> labels(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < 0.0 || t[i] != std::floor(t[i])) throw DimensionError("cross_entropy: labels must be indices");
        labels[i] = static_cast<std::size_t>(t[i]);
    }
    return labels;
}

}  // namespace detail

inline Tensor forward(OpId op, std::span<const Tensor> in, const OpAttributes& attrs = {}) {
    switch (op) {
        case OpId::matmul:
            detail::require_inputs(op, in, 2);
            return ops::matmul(in[0], in[1]);
        case OpId::relu:
            detail::require_inputs(op, in, 1);
            return ops::relu(in[0]);
        case OpId::quick_gelu:
            detail::require_inputs(op, in, 1);
            return ops::quick_gelu(in[0]);
        case OpId::softmax:
            detail::require_inputs(op, in, 1);
            return ops::softmax(in[0], attrs.axis);
        case OpId::layer_norm:
            detail::require_inputs(op, in, 3);
            return ops::layer_norm(in[0], in[1], in[2], attrs.eps);
        case OpId::multi_head_attention:
            detail::require_inputs(op, in, 9);
            return ops::multi_head_attention(in[0], detail::attention_from(in, attrs.heads));
        case OpId::add:
            detail::require_inputs(op, in, 2);
            return ops::add(in[0], in[1]);
        case OpId::cosine_similarity:
            detail::require_inputs(op, in, 2);
            return ops::cosine_similarity(in[0], in[1]);
        case OpId::cross_entropy: {
            detail::require_inputs(op, in, 2);
            const auto labels = detail::labels_from(in[1]);
            return Tensor::scalar(ops::cross_entropy(in[0], labels));
        }
    }
    throw std::invalid_argument("unknown op id");
}

/// Vector-Jacobian product of `op` at `in`, one gradient per input, in input order.
inline std::vector<Tensor> vjp(OpId op, std::span<const Tensor> in, const Tensor& upstream,
                               const OpAttributes& attrs = {}) {
    switch (op) {
        case OpId::matmul: {
            detail::require_inputs(op, in, 2);
            auto g = ops::matmul_vjp(in[0], in[1], upstream);
            return {std::move(g.da), std::move(g.db)};
        }
        case OpId::relu:
            detail::require_inputs(op, in, 1);
            return {ops::relu_vjp(in[0], upstream)};
        case OpId::quick_gelu:
            detail::require_inputs(op, in, 1);
            return {ops::quick_gelu_vjp(in[0], upstream)};
        case OpId::softmax:
            detail::require_inputs(op, in, 1);
            return {ops::softmax_vjp(in[0], upstream, attrs.axis)};
        case OpId::layer_norm: {
            detail::require_inputs(op, in, 3);
            auto g = ops::layer_norm_vjp(in[0], in[1], upstream, attrs.eps);
            return {std::move(g.dx), std::move(g.dgamma), std::move(g.dbeta)};
        }
        case OpId::multi_head_attention: {
            detail::require_inputs(op, in, 9);
            auto g = ops::multi_head_attention_vjp(in[0], detail::attention_from(in, attrs.heads), upstream);
            auto& p = g.dparams;
            return {std::move(g.dx), std::move(p.wq), std::move(p.bq), std::move(p.wk), std::move(p.bk),
                    std::move(p.wv), std::move(p.bv), std::move(p.wo), std::move(p.bo)};
        }
        case OpId::add:
            detail::require_inputs(op, in, 2);
            if (in[0].shape() != in[1].shape() || upstream.shape() != in[0].shape()) {
                throw DimensionError("add: shape mismatch");
            }
            return {upstream, upstream};
        case OpId::cosine_similarity: {
            detail::require_inputs(op, in, 2);
            auto g = ops::cosine_similarity_vjp(in[0], in[1], upstream);
            return {std::move(g.da), std::move(g.de)};
        }
        case OpId::cross_entropy: {
            detail::require_inputs(op, in, 2);
            if (upstream.size() != 1) throw DimensionError("cross_entropy: upstream must be a scalar");
            const auto labels = detail::labels_from(in[1]);
            return {ops::cross_entropy_vjp(in[0], labels, upstream[0]), Tensor(in[1].shape())};
        }
    }
    throw std::invalid_argument("unknown op id");
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                     double h = 1e-6) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_difference_grad: step must be positive");
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe);
        probe[i] = orig - h;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_difference_grad: non-finite function value at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

}  // namespace adaptprompt

#endif
