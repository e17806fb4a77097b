// SPDX-License-Identifier: Apache-2.0
//
// Parameter-efficient adaptation on top of the frozen backbone:
//
//   Y   = X + alpha * relu(X W_down) W_up                (visual adapter)
//   P_c = [<bos>, v_1 .. v_M, CLASS_c, <eos>]            (learnable prompt)
//   E_c = text_encode(P_c)
//   p(c | x) = softmax_c( cos(Y W_out?, E_c) * exp(log_inv_tau) )
//
// trained with mean cross-entropy and Adam. Only the adapter, the context
// vectors, the temperature and the optional output projection are updated.

#ifndef ADAPTPROMPT_ADAPTATION_HPP
#define ADAPTPROMPT_ADAPTATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/backbone.hpp"
#include "adaptprompt/io.hpp"
#include "adaptprompt/ops.hpp"
#include "adaptprompt/rng.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

enum class TrainMode { adaptprompt, adapter_only, prompt_only, linear_probe };

inline TrainMode parse_mode(std::string_view s) {
    if (s == "adaptprompt") return TrainMode::adaptprompt;
    if (s == "adapter_only") return TrainMode::adapter_only;
    if (s == "prompt_only") return TrainMode::prompt_only;
    if (s == "linear_probe") return TrainMode::linear_probe;
    throw std::invalid_argument("unknown mode '" + std::string(s) +
                                "' (expected adaptprompt, adapter_only, prompt_only or linear_probe)");
}

inline std::string_view mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::adaptprompt: return "adaptprompt";
        case TrainMode::adapter_only: return "adapter_only";
        case TrainMode::prompt_only: return "prompt_only";
        case TrainMode::linear_probe: return "linear_probe";
    }
    return "?";
}

/// Whether the head maps adapted features into the text embedding space.
enum class OutputProjection { automatic, on, off };

inline OutputProjection parse_output_projection(std::string_view s) {
    if (s == "auto") return OutputProjection::automatic;
    if (s == "on") return OutputProjection::on;
    if (s == "off") return OutputProjection::off;
    throw std::invalid_argument("unknown output_projection '" + std::string(s) + "' (expected auto, on or off)");
}

inline std::string_view output_projection_name(OutputProjection p) {
    switch (p) {
        case OutputProjection::automatic: return "auto";
        case OutputProjection::on: return "on";
        case OutputProjection::off: return "off";
    }
    return "?";
}

inline const double kMaxLogitScale = 100.0;
inline const double kMaxLogInvTau = std::log(kMaxLogitScale);

inline constexpr std::size_t kRealClass = 0;
inline constexpr std::size_t kFakeClass = 1;

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    Variant variant = Variant::v0;
    std::size_t d_mid = 0;  // 0 selects feature_width / 4
    std::size_t context_len = 16;
    double alpha = 0.2;
    TrainMode mode = TrainMode::adaptprompt;
    OutputProjection output_projection = OutputProjection::automatic;
    std::size_t patience = 5;  // linear probe stall window, in epochs

    bool uses_adapter() const { return mode == TrainMode::adaptprompt || mode == TrainMode::adapter_only; }
    bool uses_context() const { return mode == TrainMode::adaptprompt || mode == TrainMode::prompt_only; }

    std::size_t resolved_d_mid(const BackboneConfig& bc) const {
        return d_mid ? d_mid : std::max<std::size_t>(1, bc.feature_width(variant) / 4);
    }

    /// Resolves `auto` and rejects combinations that cannot work.
    bool has_output_projection(const BackboneConfig& bc) const {
        if (mode == TrainMode::linear_probe) return false;
        const bool mismatch = bc.feature_width(variant) != bc.embed_dim;
        switch (output_projection) {
            case OutputProjection::automatic: return variant != Variant::v0;
            case OutputProjection::on:
                if (variant == Variant::v0) {
                    throw std::invalid_argument("output_projection=on conflicts with variant v0 (features are already in the joint space)");
                }
                return true;
            case OutputProjection::off:
                if (mismatch) {
                    throw std::invalid_argument("output_projection=off with variant " + std::string(variant_name(variant)) +
                                                ": feature width differs from embed_dim");
                }
                return false;
        }
        return false;
    }

    void validate(const BackboneConfig& bc) const {
        auto fail = [](const std::string& why) { throw std::invalid_argument("invalid train config: " + why); };
        if (batch_size < 1) fail("batch_size must be at least 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be positive");
        if (!std::isfinite(alpha)) fail("alpha must be finite");
        const std::size_t d_in = bc.feature_width(variant);
        if (uses_adapter()) {
            const std::size_t mid = resolved_d_mid(bc);
            if (mid >= d_in) fail("d_mid must be smaller than the feature width " + std::to_string(d_in));
        }
        if (uses_context() && context_len + 3 > bc.max_seq_len) {
            fail("context_len + 3 exceeds max_seq_len " + std::to_string(bc.max_seq_len));
        }
        (void)has_output_projection(bc);
    }
};

struct AdapterParams {
    Tensor w_down;  // d_in x d_mid
    Tensor w_up;    // d_mid x d_in
    double alpha = 0.2;
};

/// Context is shared by every class; it is the learnable block of each prompt.
struct PromptParams {
    Tensor context;  // M x text_width
    std::vector<std::size_t> class_token_ids;
    std::size_t bos_id = 0;
    std::size_t eos_id = 1;
    /// Fixed word ids surrounding the class token for hand-written prompts.
    std::vector<std::size_t> static_prefix_ids;
    std::vector<std::size_t> static_suffix_ids;

    std::size_t num_classes() const { return class_token_ids.size(); }
    std::size_t context_len() const { return context.empty() ? 0 : context.dim(0); }
};

struct HeadParams {
    Tensor log_inv_tau = Tensor::scalar(std::log(kMaxLogitScale));  // tau = exp(-log_inv_tau)
    std::optional<Tensor> w_out;                                      // feature_width x embed_dim

    double logit_scale() const { return std::exp(log_inv_tau[0]); }
};

/// Logistic-regression head on frozen features: logits = X W^T + b.
struct LinearHead {
    Tensor weight;  // C x w
    Tensor bias;    // C
};

struct AdamMoments {
    Tensor first;
    Tensor second;
};

struct AdaptState {
    TrainConfig config;
    std::vector<std::string> class_names;
    AdapterParams adapter;
    PromptParams prompts;
    HeadParams head;
    std::optional<LinearHead> probe;
    std::vector<std::pair<std::string, AdamMoments>> moments;
    std::uint64_t step = 0;
};

// ---------------------------------------------------------------------------
// trainable bookkeeping

/// The tensors the optimizer updates in this state's mode, in a fixed order.
inline std::vector<std::pair<std::string, Tensor*>> trainable_tensors(AdaptState& s) {
    std::vector<std::pair<std::string, Tensor*>> out;
    const auto& cfg = s.config;
    if (cfg.mode == TrainMode::linear_probe) {
        out.emplace_back("probe.W", &s.probe->weight);
        out.emplace_back("probe.b", &s.probe->bias);
        return out;
    }
    if (cfg.uses_adapter()) {
        out.emplace_back("adapter.W_down", &s.adapter.w_down);
        out.emplace_back("adapter.W_up", &s.adapter.w_up);
    }
    if (cfg.uses_context()) {
        if (s.prompts.context_len() > 0) out.emplace_back("prompt.context", &s.prompts.context);
        out.emplace_back("head.log_inv_tau", &s.head.log_inv_tau);
    }
    if (s.head.w_out) out.emplace_back("head.W_out", &*s.head.w_out);
    return out;
}

inline Tensor& trainable(AdaptState& s, std::string_view name) {
    for (auto& [n, t] : trainable_tensors(s))
        if (n == name) return *t;
    throw std::invalid_argument("'" + std::string(name) + "' is not trainable in mode " +
                                std::string(mode_name(s.config.mode)));
}

struct ParamCount {
    std::size_t trainable = 0;
    std::size_t total = 0;
    double ratio = 0.0;
};

/// trainable = 2 d_in d_mid + M d_e + 1 (+ d_v d with an output projection) for adaptprompt;
/// the other modes drop the parts they freeze.
inline ParamCount count_params(const TrainConfig& cfg, const BackboneConfig& bc, std::size_t num_classes = 2) {
    ParamCount pc;
    const std::size_t d_in = bc.feature_width(cfg.variant);
    if (cfg.mode == TrainMode::linear_probe) {
        pc.trainable = num_classes * d_in + num_classes;
    } else {
        if (cfg.uses_adapter()) pc.trainable += 2 * d_in * cfg.resolved_d_mid(bc);
        if (cfg.uses_context()) pc.trainable += cfg.context_len * bc.text_width + 1;
        if (cfg.has_output_projection(bc)) pc.trainable += d_in * bc.embed_dim;
    }
    pc.total = parameter_count(bc) + pc.trainable;
    pc.ratio = static_cast<double>(pc.trainable) / static_cast<double>(pc.total);
    return pc;
}

// ---------------------------------------------------------------------------
// forward pieces

inline Tensor adapter_forward(const AdapterParams& a, const Tensor& x) {
    require_rank(x, 2, "adapter_forward");
    if (x.dim(1) != a.w_down.dim(0) || a.w_up.dim(1) != x.dim(1) || a.w_down.dim(1) != a.w_up.dim(0)) {
        throw DimensionError("adapter_forward: features " + shape_string(x.shape()) + " do not fit W_down " +
                             shape_string(a.w_down.shape()) + " / W_up " + shape_string(a.w_up.shape()));
    }
    const Tensor branch = ops::matmul(ops::relu(ops::matmul(x, a.w_down)), a.w_up);
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a.alpha * branch[i];
    return y;
}

/// [<bos>, v_1 .. v_M, CLASS_c, <eos>] as a (M + 3) x text_width sequence.
inline Tensor build_prompt(const BackboneParams& bb, const PromptParams& pr, std::size_t class_index) {
    if (class_index >= pr.num_classes()) {
        throw std::out_of_range("build_prompt: class index " + std::to_string(class_index) + " out of range");
    }
    const std::size_t m = pr.context_len(), w = bb.config.text_width;
    if (m + 3 > bb.config.max_seq_len) {
        throw DimensionError("build_prompt: prompt length " + std::to_string(m + 3) + " exceeds max_seq_len " +
                             std::to_string(bb.config.max_seq_len));
    }
    if (m > 0 && pr.context.dim(1) != w) throw DimensionError("build_prompt: context width differs from text_width");
    const Tensor fixed = embed_tokens(bb, {pr.bos_id, pr.class_token_ids[class_index], pr.eos_id});
    Tensor seq({m + 3, w});
    for (std::size_t j = 0; j < w; ++j) {
        seq(0, j) = fixed(0, j);
        for (std::size_t t = 0; t < m; ++t) seq(1 + t, j) = pr.context(t, j);
        seq(m + 1, j) = fixed(1, j);
        seq(m + 2, j) = fixed(2, j);
    }
    return seq;
}

/// Hand-written prompt "<bos> a photo of a CLASS image <eos>" with no learnable part.
inline Tensor build_static_prompt(const BackboneParams& bb, const PromptParams& pr, std::size_t class_index) {
    std::vector<std::size_t> ids{pr.bos_id};
    ids.insert(ids.end(), pr.static_prefix_ids.begin(), pr.static_prefix_ids.end());
    ids.push_back(pr.class_token_ids.at(class_index));
    ids.insert(ids.end(), pr.static_suffix_ids.begin(), pr.static_suffix_ids.end());
    ids.push_back(pr.eos_id);
    if (ids.size() > bb.config.max_seq_len) throw DimensionError("static prompt exceeds max_seq_len");
    return embed_tokens(bb, ids);
}

/// Row c = text_encode(prompt_c); static prompts are used when the context is frozen.
inline Tensor class_embeddings(const BackboneParams& bb, const PromptParams& pr, bool learnable_context = true) {
    const std::size_t c = pr.num_classes();
    Tensor e({c, bb.config.embed_dim});
    for (std::size_t k = 0; k < c; ++k) {
        const Tensor seq = learnable_context ? build_prompt(bb, pr, k) : build_static_prompt(bb, pr, k);
        const Tensor row = text_encode(bb, seq);
        for (std::size_t j = 0; j < row.size(); ++j) e(k, j) = row[j];
    }
    return e;
}

inline Tensor class_embeddings(const BackboneParams& bb, const AdaptState& s) {
    return class_embeddings(bb, s.prompts, s.config.uses_context());
}

/// Maps adapted features into the class-embedding space when widths differ.
inline Tensor head_project(const Tensor& y, const HeadParams& head, std::size_t embed_dim) {
    if (head.w_out) return ops::matmul(y, *head.w_out);
    if (y.dim(1) != embed_dim) {
        throw DimensionError("class_probabilities: feature width " + std::to_string(y.dim(1)) +
                             " differs from class-embedding width " + std::to_string(embed_dim) +
                             " and no output projection is present");
    }
    return y;
}

/// P[b] = softmax(cos(Y_b, E_c) / tau). Zero-norm rows are an error.
inline Tensor class_probabilities(const Tensor& y, const Tensor& e, const HeadParams& head) {
    require_rank(y, 2, "class_probabilities");
    require_rank(e, 2, "class_probabilities");
    const Tensor proj = head_project(y, head, e.dim(1));
    return ops::softmax(ops::scale(ops::cosine_similarity(proj, e), head.logit_scale()), 1);
}

/// Index of the largest entry; exact ties go to the lower index.
inline std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// loss and gradients

struct LossAndGrads {
    double loss = 0.0;
    std::vector<NamedTensor> grads;  // same order as trainable_tensors()

    const Tensor& grad(std::string_view name) const { return find_tensor(grads, name); }
};

inline void check_labels(std::span<const std::size_t> labels, std::size_t num_classes) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw std::invalid_argument("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                        " is outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

namespace detail {

inline LossAndGrads probe_loss_and_grads(const LinearHead& h, const Tensor& x, std::span<const std::size_t> labels) {
    const Tensor logits = ops::add_row(ops::matmul(x, ops::transpose(h.weight)), h.bias);
    LossAndGrads out;
    out.loss = ops::cross_entropy(logits, labels);
    const Tensor dlogits = ops::cross_entropy_vjp(logits, labels);
    out.grads.push_back({"probe.W", ops::matmul(ops::transpose(dlogits), x)});
    out.grads.push_back({"probe.b", ops::sum_rows(dlogits)});
    return out;
}

}  // namespace detail

/// Mean cross-entropy over the batch and its gradient for every trainable of the state's mode.
/// `fixed_classes` supplies precomputed class embeddings when the context is frozen.
inline LossAndGrads loss_and_grads(const AdaptState& s, const BackboneParams& bb, const Tensor& x,
                                   std::span<const std::size_t> labels, const Tensor* fixed_classes = nullptr) {
    require_rank(x, 2, "loss_and_grads");
    if (labels.size() != x.dim(0)) throw DimensionError("loss_and_grads: label count differs from batch size");
    const auto& cfg = s.config;
    const std::size_t num_classes = cfg.mode == TrainMode::linear_probe ? s.probe->weight.dim(0) : s.prompts.num_classes();
    check_labels(labels, num_classes);
    if (cfg.mode == TrainMode::linear_probe) return detail::probe_loss_and_grads(*s.probe, x, labels);

    // forward
    Tensor hidden, activated, y = x;
    if (cfg.uses_adapter()) {
        hidden = ops::matmul(x, s.adapter.w_down);
        activated = ops::relu(hidden);
        const Tensor branch = ops::matmul(activated, s.adapter.w_up);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += s.adapter.alpha * branch[i];
    }
    const Tensor e = fixed_classes ? *fixed_classes : class_embeddings(bb, s);
    const Tensor proj = head_project(y, s.head, e.dim(1));
    const Tensor sims = ops::cosine_similarity(proj, e);
    const double scale = s.head.logit_scale();
    const Tensor logits = ops::scale(sims, scale);

    LossAndGrads out;
    out.loss = ops::cross_entropy(logits, labels);

    // backward
    const Tensor dlogits = ops::cross_entropy_vjp(logits, labels);
    double dlit = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) dlit += dlogits[i] * logits[i];
    auto [dproj, de] = ops::cosine_similarity_vjp(proj, e, ops::scale(dlogits, scale));

    Tensor dy = dproj;
    std::optional<Tensor> dw_out;
    if (s.head.w_out) {
        auto g = ops::matmul_vjp(y, *s.head.w_out, dproj);
        dy = std::move(g.da);
        dw_out = std::move(g.db);
    }
    if (cfg.uses_adapter()) {
        auto g_up = ops::matmul_vjp(activated, s.adapter.w_up, ops::scale(dy, s.adapter.alpha));
        const Tensor dhidden = ops::relu_vjp(hidden, g_up.da);
        out.grads.push_back({"adapter.W_down", ops::matmul(ops::transpose(x), dhidden)});
        out.grads.push_back({"adapter.W_up", std::move(g_up.db)});
    }
    if (cfg.uses_context()) {
        const std::size_t m = s.prompts.context_len();
        if (m > 0) {
            Tensor dctx({m, bb.config.text_width});
            for (std::size_t c = 0; c < e.dim(0); ++c) {
                Tensor dec({bb.config.embed_dim});
                for (std::size_t j = 0; j < dec.size(); ++j) dec[j] = de(c, j);
                const Tensor dseq = text_encode_vjp(bb, build_prompt(bb, s.prompts, c), dec);
                for (std::size_t t = 0; t < m; ++t)
                    for (std::size_t j = 0; j < dctx.dim(1); ++j) dctx(t, j) += dseq(1 + t, j);
            }
            out.grads.push_back({"prompt.context", std::move(dctx)});
        }
        out.grads.push_back({"head.log_inv_tau", Tensor::scalar(dlit)});
    }
    if (dw_out) out.grads.push_back({"head.W_out", std::move(*dw_out)});
    for (const auto& [name, g] : out.grads) require_finite(g, name.c_str());
    return out;
}

// ---------------------------------------------------------------------------
// state construction and the optimizer

/// Fresh, seeded state for the given classes. Class names must be vocabulary tokens.
inline AdaptState init_state(const TrainConfig& cfg, const BackboneParams& bb, const Vocab& vocab,
                             const std::vector<std::string>& class_names) {
    const auto& bc = bb.config;
    cfg.validate(bc);
    if (class_names.size() < 2) throw std::invalid_argument("at least two classes are required");
    AdaptState s;
    s.config = cfg;
    s.class_names = class_names;
    Rng rng = Rng::derive(cfg.seed, 1);
    const std::size_t d_in = bc.feature_width(cfg.variant);

    for (const auto& name : class_names) {
        const std::size_t id = tokenize_class(vocab, name);
        if (std::find(s.prompts.class_token_ids.begin(), s.prompts.class_token_ids.end(), id) !=
            s.prompts.class_token_ids.end()) {
            throw std::invalid_argument("duplicate class '" + name + "'");
        }
        s.prompts.class_token_ids.push_back(id);
    }
    s.prompts.bos_id = vocab.id(kBosToken);
    s.prompts.eos_id = vocab.id(kEosToken);

    if (cfg.mode == TrainMode::linear_probe) {
        LinearHead h;
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
        h.weight = Tensor({class_names.size(), d_in});
        for (double& v : h.weight.data()) v = rng.uniform(-bound, bound);
        h.bias = Tensor({class_names.size()});
        s.probe = std::move(h);
    } else {
        if (cfg.uses_adapter()) {
            const std::size_t mid = cfg.resolved_d_mid(bc);
            s.adapter.w_down = Tensor({d_in, mid});
            s.adapter.w_up = Tensor({mid, d_in});
            const double b_down = 1.0 / std::sqrt(static_cast<double>(d_in));
            const double b_up = 1.0 / std::sqrt(static_cast<double>(mid));
            for (double& v : s.adapter.w_down.data()) v = rng.uniform(-b_down, b_down);
            for (double& v : s.adapter.w_up.data()) v = rng.uniform(-b_up, b_up);
        }
        s.adapter.alpha = cfg.alpha;
        if (cfg.uses_context()) {
            s.prompts.context = Tensor({cfg.context_len, bc.text_width});
            for (double& v : s.prompts.context.data()) v = rng.normal(0.0, 0.02);
        } else {
            for (const char* w : {"a", "photo", "of", "a"}) s.prompts.static_prefix_ids.push_back(vocab.id(w));
            s.prompts.static_suffix_ids.push_back(vocab.id("image"));
        }
        if (cfg.has_output_projection(bc)) {
            Tensor w({d_in, bc.embed_dim});
            const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
            for (double& v : w.data()) v = rng.uniform(-bound, bound);
            s.head.w_out = std::move(w);
        }
    }
    for (auto& [name, t] : trainable_tensors(s)) s.moments.push_back({name, {Tensor(t->shape()), Tensor(t->shape())}});
    return s;
}

struct AdamSettings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam step over every trainable, followed by the logit-scale clamp.
inline void adam_step(AdaptState& s, const LossAndGrads& g, const AdamSettings& adam = {}) {
    ++s.step;
    const double t = static_cast<double>(s.step);
    const double c1 = 1.0 - std::pow(adam.beta1, t);
    const double c2 = 1.0 - std::pow(adam.beta2, t);
    const double lr = s.config.learning_rate;
    auto params = trainable_tensors(s);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& [name, p] = params[k];
        const Tensor& grad = g.grad(name);
        auto& mom = s.moments.at(k).second;
        for (std::size_t i = 0; i < p->size(); ++i) {
            mom.first[i] = adam.beta1 * mom.first[i] + (1.0 - adam.beta1) * grad[i];
            mom.second[i] = adam.beta2 * mom.second[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
            (*p)[i] -= lr * (mom.first[i] / c1) / (std::sqrt(mom.second[i] / c2) + adam.eps);
        }
    }
    if (s.head.log_inv_tau[0] > kMaxLogInvTau) s.head.log_inv_tau[0] = kMaxLogInvTau;
}

// ---------------------------------------------------------------------------
// training

struct LabeledFeatures {
    Tensor features;                  // N x w
    std::vector<std::size_t> labels;  // N
};

struct TrainLog {
    double initial_loss = 0.0;
    std::vector<double> epoch_losses;
    std::vector<std::string> updated;  // trainable tensor names
    std::size_t steps = 0;
    std::uint64_t backbone_hash = 0;
    bool converged = true;  // meaningful for the linear probe only
    std::size_t stopped_epoch = 0;

    double final_loss() const { return epoch_losses.empty() ? initial_loss : epoch_losses.back(); }

    std::string summary() const {
        std::ostringstream os;
        os.precision(6);
        os << std::fixed;
        os << "initial_loss\t" << initial_loss << '\n';
        for (std::size_t e = 0; e < epoch_losses.size(); ++e) os << "epoch\t" << e + 1 << '\t' << epoch_losses[e] << '\n';
        os << "updated";
        for (const auto& n : updated) os << '\t' << n;
        os << '\n' << "steps\t" << steps << '\n' << "converged\t" << (converged ? "yes" : "no") << '\n';
        os << "backbone_hash\t" << hex64(backbone_hash) << '\n';
        return os.str();
    }
};

struct TrainResult {
    AdaptState state;
    TrainLog log;
};

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
    const std::size_t w = x.dim(1);
    Tensor out({idx.size(), w});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < w; ++j) out(i, j) = x(idx[i], j);
    return out;
}

namespace detail {

inline double dataset_loss(const AdaptState& s, const BackboneParams& bb, const LabeledFeatures& data,
                           const Tensor* fixed) {
    return loss_and_grads(s, bb, data.features, data.labels, fixed).loss;
}

}  // namespace detail

/// Minibatch Adam on cross-entropy. Deterministic given (config, data): the batch
/// order is a seeded shuffle per epoch. The backbone is only read.
inline TrainResult train(const TrainConfig& cfg, const BackboneParams& bb, const Vocab& vocab,
                         const LabeledFeatures& data, const std::vector<std::string>& class_names) {
    if (data.labels.empty()) throw std::invalid_argument("empty manifest: no training samples");
    require_rank(data.features, 2, "train");
    if (data.features.dim(0) != data.labels.size()) throw DimensionError("train: feature rows differ from label count");
    if (data.features.dim(1) != bb.config.feature_width(cfg.variant)) {
        throw DimensionError("train: feature width " + std::to_string(data.features.dim(1)) + " does not match variant " +
                             std::string(variant_name(cfg.variant)));
    }
    check_labels(data.labels, class_names.size());
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        if (std::find(data.labels.begin(), data.labels.end(), c) == data.labels.end()) {
            throw std::invalid_argument("no training sample for class '" + class_names[c] + "'");
        }
    }

    TrainResult r{init_state(cfg, bb, vocab, class_names), {}};
    AdaptState& s = r.state;
    TrainLog& log = r.log;
    log.backbone_hash = content_hash(bb);
    for (auto& [name, t] : trainable_tensors(s)) log.updated.push_back(name);

    std::optional<Tensor> fixed;
    if (cfg.mode == TrainMode::adapter_only) fixed = class_embeddings(bb, s);
    const Tensor* fixed_ptr = fixed ? &*fixed : nullptr;

    log.initial_loss = detail::dataset_loss(s, bb, data, fixed_ptr);
    Rng order_rng = Rng::derive(cfg.seed, 2);
    std::vector<std::size_t> order(data.labels.size());
    double best = log.initial_loss;
    std::size_t stall = 0;
    const bool probe = cfg.mode == TrainMode::linear_probe;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(std::span<std::size_t>(order));
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<std::size_t> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];
            const LossAndGrads g = loss_and_grads(s, bb, gather_rows(data.features, idx), labels, fixed_ptr);
            if (!std::isfinite(g.loss)) {
                throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", step " + std::to_string(s.step + 1));
            }
            adam_step(s, g);
            total += g.loss * static_cast<double>(idx.size());
            ++log.steps;
        }
        log.epoch_losses.push_back(total / static_cast<double>(order.size()));
        log.stopped_epoch = epoch + 1;
        if (probe) {
            const double cur = log.epoch_losses.back();
            if (cur < best - 1e-4) {
                best = cur;
                stall = 0;
            } else if (++stall >= cfg.patience) {
                break;
            }
        }
    }
    if (probe) log.converged = best < log.initial_loss - 1e-3;
    if (content_hash(bb) != log.backbone_hash) throw std::logic_error("backbone parameters changed during training");
    return r;
}

/// Logistic-regression head on frozen features with the same optimizer.
/// Non-convergence is reported through TrainLog::converged rather than thrown.
inline TrainResult linear_probe_train(TrainConfig cfg, const BackboneParams& bb, const Vocab& vocab,
                                      const LabeledFeatures& data, const std::vector<std::string>& class_names) {
    cfg.mode = TrainMode::linear_probe;
    return train(cfg, bb, vocab, data, class_names);
}

// ---------------------------------------------------------------------------
// prediction

/// Per-class probabilities for each feature row.
inline Tensor predict_probabilities(const AdaptState& s, const Tensor& class_emb, const Tensor& x) {
    if (s.config.mode == TrainMode::linear_probe) {
        const Tensor logits = ops::add_row(ops::matmul(x, ops::transpose(s.probe->weight)), s.probe->bias);
        return ops::softmax(logits, 1);
    }
    const Tensor y = s.config.uses_adapter() ? adapter_forward(s.adapter, x) : x;
    return class_probabilities(y, class_emb, s.head);
}

inline Tensor predict_probabilities(const AdaptState& s, const BackboneParams& bb, const Tensor& x) {
    const Tensor e = s.config.mode == TrainMode::linear_probe ? Tensor() : class_embeddings(bb, s);
    return predict_probabilities(s, e, x);
}

/// P(fake) per feature row, in [0, 1].
inline std::vector<double> predict_scores(const AdaptState& s, const BackboneParams& bb, const Tensor& x) {
    const Tensor p = predict_probabilities(s, bb, x);
    std::vector<double> scores(p.dim(0));
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = std::clamp(p(i, kFakeClass), 0.0, 1.0);
    return scores;
}

inline std::vector<std::size_t> predict_classes(const AdaptState& s, const BackboneParams& bb, const Tensor& x) {
    const Tensor p = predict_probabilities(s, bb, x);
    std::vector<std::size_t> out(p.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(p.row(i));
    return out;
}

/// Features after the adapter and output projection, i.e. in the classifier space.
inline Tensor adapted_features(const AdaptState& s, const Tensor& x) {
    Tensor y = s.config.uses_adapter() ? adapter_forward(s.adapter, x) : x;
    if (s.head.w_out) y = ops::matmul(y, *s.head.w_out);
    return y;
}

// ---------------------------------------------------------------------------
// persistence: tensors in the APWT container, settings in a key=value sidecar

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string train_config_lines(const TrainConfig& c, const std::vector<std::string>& classes) {
    std::ostringstream os;
    os << "mode = " << mode_name(c.mode) << '\n'
       << "variant = " << variant_name(c.variant) << '\n'
       << "learning_rate = " << format_double(c.learning_rate) << '\n'
       << "batch_size = " << c.batch_size << '\n'
       << "epochs = " << c.epochs << '\n'
       << "seed = " << c.seed << '\n'
       << "d_mid = " << c.d_mid << '\n'
       << "context_len = " << c.context_len << '\n'
       << "alpha = " << format_double(c.alpha) << '\n'
       << "output_projection = " << output_projection_name(c.output_projection) << '\n'
       << "patience = " << c.patience << '\n'
       << "classes = ";
    for (std::size_t i = 0; i < classes.size(); ++i) os << (i ? "," : "") << classes[i];
    os << '\n';
    return os.str();
}

inline std::vector<NamedTensor> state_tensors(const AdaptState& s) {
    std::vector<NamedTensor> out;
    if (s.config.mode == TrainMode::linear_probe) {
        out.push_back({"probe.W", s.probe->weight});
        out.push_back({"probe.b", s.probe->bias});
        return out;
    }
    if (s.config.uses_adapter()) {
        out.push_back({"adapter.W_down", s.adapter.w_down});
        out.push_back({"adapter.W_up", s.adapter.w_up});
    }
    if (s.config.uses_context()) out.push_back({"prompt.context", s.prompts.context});
    out.push_back({"head.log_inv_tau", s.head.log_inv_tau});
    if (s.head.w_out) out.push_back({"head.W_out", *s.head.w_out});
    return out;
}

inline void save_state(const AdaptState& s, const fs::path& path, std::string_view header = {}) {
    save_container(path, state_tensors(s));
    fs::path sidecar = path;
    sidecar += ".cfg";
    std::string text(header);
    text += train_config_lines(s.config, s.class_names);
    write_file_atomic(sidecar, text);
}

}  // namespace adaptprompt

#endif
