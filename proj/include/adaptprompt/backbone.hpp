// SPDX-License-Identifier: Apache-2.0
//
// Frozen CLIP-style dual encoder: a ViT-like vision tower with three tap points
// and a small text tower that back-propagates to its input embedding sequence.

#ifndef ADAPTPROMPT_BACKBONE_HPP
#define ADAPTPROMPT_BACKBONE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/attention.hpp"
#include "adaptprompt/io.hpp"
#include "adaptprompt/ops.hpp"
#include "adaptprompt/rng.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

/// Where vision features are read out.
///   v0: all blocks, final norm, projection (width = embed_dim)
///   v1: all blocks, final norm, no projection (width = vision_width)
///   v2: all but the last block, final norm, no projection (width = vision_width)
enum class Variant { v0, v1, v2 };

inline Variant parse_variant(std::string_view s) {
    if (s == "v0") return Variant::v0;
    if (s == "v1") return Variant::v1;
    if (s == "v2") return Variant::v2;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected v0, v1 or v2)");
}

inline std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::v0: return "v0";
        case Variant::v1: return "v1";
        case Variant::v2: return "v2";
    }
    return "?";
}

struct BackboneConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t vision_width = 64;
    std::size_t vision_layers = 4;
    std::size_t vision_heads = 4;
    std::size_t text_width = 48;
    std::size_t text_layers = 2;
    std::size_t text_heads = 4;
    std::size_t embed_dim = 32;
    std::size_t vocab_size = 64;
    std::size_t max_seq_len = 24;
    Variant variant = Variant::v0;

    std::size_t patches_per_side() const { return image_size / patch_size; }
    std::size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    std::size_t vision_tokens() const { return num_patches() + 1; }

    /// Width of vision_encode output for a variant.
    std::size_t feature_width(Variant v) const { return v == Variant::v0 ? embed_dim : vision_width; }
    std::size_t feature_width() const { return feature_width(variant); }

    void validate() const {
        auto fail = [](const std::string& why) { throw std::invalid_argument("invalid backbone config: " + why); };
        if (image_size == 0 || patch_size == 0) fail("image_size and patch_size must be positive");
        if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
        if (vision_width == 0 || text_width == 0 || embed_dim == 0) fail("widths must be positive");
        if (vision_heads == 0 || vision_width % vision_heads != 0) fail("vision_width not divisible by vision_heads");
        if (text_heads == 0 || text_width % text_heads != 0) fail("text_width not divisible by text_heads");
        if (vision_layers == 0) fail("vision_layers must be at least 1");
        if (vocab_size < 2) fail("vocab_size must be at least 2");
        if (max_seq_len < 3) fail("max_seq_len must be at least 3");
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct TransformerBlock {
    Tensor ln1_gamma, ln1_beta;
    AttentionParams attn;
    Tensor ln2_gamma, ln2_beta;
    Tensor fc1, fc1_bias;  // width x 4 width
    Tensor fc2, fc2_bias;  // 4 width x width
};

struct VisionTower {
    Tensor patch_embed;  // patch_size^2 x width
    Tensor class_token;  // width
    Tensor pos_embed;    // (patches + 1) x width
    std::vector<TransformerBlock> blocks;
    Tensor ln_final_gamma, ln_final_beta;
    Tensor proj;  // width x embed_dim
};

struct TextTower {
    Tensor token_embed;  // vocab x width
    Tensor pos_embed;    // max_seq_len x width
    std::vector<TransformerBlock> blocks;
    Tensor ln_final_gamma, ln_final_beta;
    Tensor proj;  // width x embed_dim
};

struct BackboneParams {
    BackboneConfig config;
    VisionTower vision;
    TextTower text;
};

// ---------------------------------------------------------------------------
// transformer block

namespace detail {

struct BlockCache {
    Tensor x, ln1, x1, ln2, pre_act, act;
};

inline Tensor block_forward_cached(const TransformerBlock& b, const Tensor& x, BlockCache* cache) {
    Tensor ln1 = ops::layer_norm(x, b.ln1_gamma, b.ln1_beta);
    Tensor x1 = ops::add(x, ops::multi_head_attention(ln1, b.attn));
    Tensor ln2 = ops::layer_norm(x1, b.ln2_gamma, b.ln2_beta);
    Tensor pre = ops::add_row(ops::matmul(ln2, b.fc1), b.fc1_bias);
    Tensor act = ops::quick_gelu(pre);
    Tensor out = ops::add(x1, ops::add_row(ops::matmul(act, b.fc2), b.fc2_bias));
    if (cache) *cache = BlockCache{x, std::move(ln1), std::move(x1), std::move(ln2), std::move(pre), std::move(act)};
    return out;
}

/// Gradient with respect to the block input only; block weights are frozen.
inline Tensor block_backward(const TransformerBlock& b, const BlockCache& c, const Tensor& g) {
    Tensor g_act = ops::matmul(g, ops::transpose(b.fc2));
    Tensor g_pre = ops::quick_gelu_vjp(c.pre_act, g_act);
    Tensor g_ln2 = ops::matmul(g_pre, ops::transpose(b.fc1));
    Tensor g_x1 = ops::add(g, ops::layer_norm_vjp(c.x1, b.ln2_gamma, g_ln2).dx);
    Tensor g_ln1 = ops::multi_head_attention_vjp(c.ln1, b.attn, g_x1).dx;
    return ops::add(g_x1, ops::layer_norm_vjp(c.x, b.ln1_gamma, g_ln1).dx);
}

}  // namespace detail

/// Pre-norm residual block: x + attn(ln1 x), then + mlp(ln2 .).
inline Tensor block_forward(const TransformerBlock& b, const Tensor& x) {
    return detail::block_forward_cached(b, x, nullptr);
}

// ---------------------------------------------------------------------------
// initialization and serialization

namespace detail {

inline Tensor uniform_tensor(Rng& rng, Shape shape, double bound) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    round_to_f32(t);
    return t;
}

inline Tensor normal_tensor(Rng& rng, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    round_to_f32(t);
    return t;
}

inline Tensor linear_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    return uniform_tensor(rng, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

inline TransformerBlock init_block(Rng& rng, std::size_t width, std::size_t heads) {
    TransformerBlock b;
    b.ln1_gamma = Tensor::ones({width});
    b.ln1_beta = Tensor::zeros({width});
    b.attn.heads = heads;
    b.attn.wq = linear_weight(rng, width, width);
    b.attn.bq = Tensor::zeros({width});
    b.attn.wk = linear_weight(rng, width, width);
    b.attn.bk = Tensor::zeros({width});
    b.attn.wv = linear_weight(rng, width, width);
    b.attn.bv = Tensor::zeros({width});
    b.attn.wo = linear_weight(rng, width, width);
    b.attn.bo = Tensor::zeros({width});
    b.ln2_gamma = Tensor::ones({width});
    b.ln2_beta = Tensor::zeros({width});
    b.fc1 = linear_weight(rng, width, 4 * width);
    b.fc1_bias = Tensor::zeros({4 * width});
    b.fc2 = linear_weight(rng, 4 * width, width);
    b.fc2_bias = Tensor::zeros({width});
    return b;
}

}  // namespace detail

/// Seeded synthetic initialization. Values are rounded to single precision so
/// that a save/load round trip reproduces the in-memory parameters exactly.
inline BackboneParams init_random(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    BackboneParams p;
    p.config = cfg;
    const std::size_t pd = cfg.patch_size * cfg.patch_size;
    const double vscale = 1.0 / std::sqrt(static_cast<double>(cfg.vision_width));
    p.vision.patch_embed = detail::linear_weight(rng, pd, cfg.vision_width);
    p.vision.class_token = detail::normal_tensor(rng, {cfg.vision_width}, vscale);
    p.vision.pos_embed = detail::normal_tensor(rng, {cfg.vision_tokens(), cfg.vision_width}, vscale);
    for (std::size_t i = 0; i < cfg.vision_layers; ++i)
        p.vision.blocks.push_back(detail::init_block(rng, cfg.vision_width, cfg.vision_heads));
    p.vision.ln_final_gamma = Tensor::ones({cfg.vision_width});
    p.vision.ln_final_beta = Tensor::zeros({cfg.vision_width});
    p.vision.proj = detail::linear_weight(rng, cfg.vision_width, cfg.embed_dim);

    p.text.token_embed = detail::normal_tensor(rng, {cfg.vocab_size, cfg.text_width}, 0.02);
    p.text.pos_embed = detail::normal_tensor(rng, {cfg.max_seq_len, cfg.text_width}, 0.01);
    for (std::size_t i = 0; i < cfg.text_layers; ++i)
        p.text.blocks.push_back(detail::init_block(rng, cfg.text_width, cfg.text_heads));
    p.text.ln_final_gamma = Tensor::ones({cfg.text_width});
    p.text.ln_final_beta = Tensor::zeros({cfg.text_width});
    p.text.proj = detail::linear_weight(rng, cfg.text_width, cfg.embed_dim);
    return p;
}

namespace detail {

inline void append_block(std::vector<NamedTensor>& out, const std::string& prefix, const TransformerBlock& b) {
    out.push_back({prefix + ".ln1.gamma", b.ln1_gamma});
    out.push_back({prefix + ".ln1.beta", b.ln1_beta});
    out.push_back({prefix + ".attn.wq", b.attn.wq});
    out.push_back({prefix + ".attn.bq", b.attn.bq});
    out.push_back({prefix + ".attn.wk", b.attn.wk});
    out.push_back({prefix + ".attn.bk", b.attn.bk});
    out.push_back({prefix + ".attn.wv", b.attn.wv});
    out.push_back({prefix + ".attn.bv", b.attn.bv});
    out.push_back({prefix + ".attn.wo", b.attn.wo});
    out.push_back({prefix + ".attn.bo", b.attn.bo});
    out.push_back({prefix + ".ln2.gamma", b.ln2_gamma});
    out.push_back({prefix + ".ln2.beta", b.ln2_beta});
    out.push_back({prefix + ".mlp.fc1", b.fc1});
    out.push_back({prefix + ".mlp.fc1_bias", b.fc1_bias});
    out.push_back({prefix + ".mlp.fc2", b.fc2});
    out.push_back({prefix + ".mlp.fc2_bias", b.fc2_bias});
}

inline const std::vector<std::string_view>& config_fields() {
    static const std::vector<std::string_view> fields{
        "image_size", "patch_size", "vision_width", "vision_layers", "vision_heads", "text_width",
        "text_layers", "text_heads", "embed_dim", "vocab_size", "max_seq_len"};
    return fields;
}

inline Tensor config_tensor(const BackboneConfig& c) {
    return Tensor({11}, std::vector<double>{
        double(c.image_size), double(c.patch_size), double(c.vision_width), double(c.vision_layers),
        double(c.vision_heads), double(c.text_width), double(c.text_layers), double(c.text_heads),
        double(c.embed_dim), double(c.vocab_size), double(c.max_seq_len)});
}

inline BackboneConfig config_from_tensor(const Tensor& t) {
    if (t.shape() != Shape{11}) throw FormatError("backbone.config tensor must have 11 entries");
    std::vector<std::size_t> v(11);
    for (std::size_t i = 0; i < 11; ++i) {
        if (t[i] < 0.0 || t[i] != std::floor(t[i]) || t[i] > 1e7) {
            throw FormatError("backbone.config field " + std::string(config_fields()[i]) + " is not a valid extent");
        }
        v[i] = static_cast<std::size_t>(t[i]);
    }
    BackboneConfig c;
    c.image_size = v[0];
    c.patch_size = v[1];
    c.vision_width = v[2];
    c.vision_layers = v[3];
    c.vision_heads = v[4];
    c.text_width = v[5];
    c.text_layers = v[6];
    c.text_heads = v[7];
    c.embed_dim = v[8];
    c.vocab_size = v[9];
    c.max_seq_len = v[10];
    return c;
}

}  // namespace detail

/// Flattened, ordered (name, tensor) view; the first entry is the embedded config.
inline std::vector<NamedTensor> to_named_tensors(const BackboneParams& p) {
    std::vector<NamedTensor> out;
    out.push_back({"backbone.config", detail::config_tensor(p.config)});
    out.push_back({"vision.patch_embed", p.vision.patch_embed});
    out.push_back({"vision.class_token", p.vision.class_token});
    out.push_back({"vision.pos_embed", p.vision.pos_embed});
    for (std::size_t i = 0; i < p.vision.blocks.size(); ++i)
        detail::append_block(out, "vision.blocks." + std::to_string(i), p.vision.blocks[i]);
    out.push_back({"vision.ln_final.gamma", p.vision.ln_final_gamma});
    out.push_back({"vision.ln_final.beta", p.vision.ln_final_beta});
    out.push_back({"vision.proj", p.vision.proj});
    out.push_back({"text.token_embed", p.text.token_embed});
    out.push_back({"text.pos_embed", p.text.pos_embed});
    for (std::size_t i = 0; i < p.text.blocks.size(); ++i)
        detail::append_block(out, "text.blocks." + std::to_string(i), p.text.blocks[i]);
    out.push_back({"text.ln_final.gamma", p.text.ln_final_gamma});
    out.push_back({"text.ln_final.beta", p.text.ln_final_beta});
    out.push_back({"text.proj", p.text.proj});
    return out;
}

/// Rebuilds parameters and checks every tensor against the shapes implied by the embedded config.
inline BackboneParams from_named_tensors(const std::vector<NamedTensor>& tensors) {
    BackboneParams p;
    p.config = detail::config_from_tensor(find_tensor(tensors, "backbone.config"));
    try {
        p.config.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("embedded ") + e.what());
    }
    // Build a same-shaped template and copy tensors over by name, checking shapes.
    BackboneParams shape_template = init_random(p.config, 0);
    auto expected = to_named_tensors(shape_template);
    if (expected.size() != tensors.size()) {
        throw FormatError("backbone weights hold " + std::to_string(tensors.size()) + " tensors, config implies " +
                          std::to_string(expected.size()));
    }
    for (auto& [name, value] : expected) {
        const Tensor& got = find_tensor(tensors, name);
        if (got.shape() != value.shape()) {
            throw FormatError("shape mismatch for '" + name + "': file has " + shape_string(got.shape()) +
                              ", config implies " + shape_string(value.shape()));
        }
        value = got;
        if (!value.all_finite()) throw FormatError("non-finite values in '" + name + "'");
    }
    std::size_t i = 1;
    auto next = [&]() -> Tensor { return std::move(expected[i++].value); };
    auto read_block = [&](std::size_t heads) {
        TransformerBlock b;
        b.ln1_gamma = next();
        b.ln1_beta = next();
        b.attn.heads = heads;
        b.attn.wq = next();
        b.attn.bq = next();
        b.attn.wk = next();
        b.attn.bk = next();
        b.attn.wv = next();
        b.attn.bv = next();
        b.attn.wo = next();
        b.attn.bo = next();
        b.ln2_gamma = next();
        b.ln2_beta = next();
        b.fc1 = next();
        b.fc1_bias = next();
        b.fc2 = next();
        b.fc2_bias = next();
        return b;
    };
    p.vision.patch_embed = next();
    p.vision.class_token = next();
    p.vision.pos_embed = next();
    for (std::size_t l = 0; l < p.config.vision_layers; ++l) p.vision.blocks.push_back(read_block(p.config.vision_heads));
    p.vision.ln_final_gamma = next();
    p.vision.ln_final_beta = next();
    p.vision.proj = next();
    p.text.token_embed = next();
    p.text.pos_embed = next();
    for (std::size_t l = 0; l < p.config.text_layers; ++l) p.text.blocks.push_back(read_block(p.config.text_heads));
    p.text.ln_final_gamma = next();
    p.text.ln_final_beta = next();
    p.text.proj = next();
    return p;
}

inline void save_weights(const BackboneParams& p, const fs::path& path) { save_container(path, to_named_tensors(p)); }

inline BackboneParams load_weights(const fs::path& path) { return from_named_tensors(load_container(path)); }

/// Changes if any frozen value changes; compared before and after training.
inline std::uint64_t content_hash(const BackboneParams& p) { return content_hash(to_named_tensors(p)); }

/// Exact number of scalars in the backbone (the config entry excluded).
inline std::size_t parameter_count(const BackboneConfig& c) {
    auto block = [](std::size_t w) { return 2 * w + 4 * (w * w + w) + 2 * w + (w * 4 * w + 4 * w) + (4 * w * w + w); };
    const std::size_t vision = c.patch_size * c.patch_size * c.vision_width + c.vision_width +
                               c.vision_tokens() * c.vision_width + c.vision_layers * block(c.vision_width) +
                               2 * c.vision_width + c.vision_width * c.embed_dim;
    const std::size_t text = c.vocab_size * c.text_width + c.max_seq_len * c.text_width +
                             c.text_layers * block(c.text_width) + 2 * c.text_width + c.text_width * c.embed_dim;
    return vision + text;
}

// ---------------------------------------------------------------------------
// vision tower

/// Patchify, embed, prepend the class token and add positions; returns (patches + 1) x width.
inline Tensor vision_tokens(const BackboneParams& p, const Tensor& image) {
    const auto& c = p.config;
    if (image.size() != c.image_size * c.image_size) {
        throw DimensionError("vision_encode: expected a " + std::to_string(c.image_size) + "x" +
                             std::to_string(c.image_size) + " image, got " + shape_string(image.shape()));
    }
    const std::size_t ps = c.patch_size, side = c.patches_per_side();
    Tensor patches({c.num_patches(), ps * ps});
    for (std::size_t py = 0; py < side; ++py)
        for (std::size_t px = 0; px < side; ++px)
            for (std::size_t y = 0; y < ps; ++y)
                for (std::size_t x = 0; x < ps; ++x)
                    patches(py * side + px, y * ps + x) = image[(py * ps + y) * c.image_size + px * ps + x];
    const Tensor embedded = ops::matmul(patches, p.vision.patch_embed);
    Tensor tokens({c.vision_tokens(), c.vision_width});
    for (std::size_t j = 0; j < c.vision_width; ++j) tokens(0, j) = p.vision.class_token[j];
    for (std::size_t t = 0; t < c.num_patches(); ++t)
        for (std::size_t j = 0; j < c.vision_width; ++j) tokens(t + 1, j) = embedded(t, j);
    return ops::add(tokens, p.vision.pos_embed);
}

/// Feature vector at the class-token position for the given tap point.
inline Tensor vision_encode(const BackboneParams& p, const Tensor& image, Variant variant) {
    Tensor x = vision_tokens(p, image);
    const std::size_t depth = variant == Variant::v2 ? p.vision.blocks.size() - 1 : p.vision.blocks.size();
    for (std::size_t l = 0; l < depth; ++l) x = block_forward(p.vision.blocks[l], x);
    Tensor cls({1, p.config.vision_width});
    for (std::size_t j = 0; j < p.config.vision_width; ++j) cls(0, j) = x(0, j);
    Tensor feat = ops::layer_norm(cls, p.vision.ln_final_gamma, p.vision.ln_final_beta);
    if (variant == Variant::v0) feat = ops::matmul(feat, p.vision.proj);
    return feat.reshaped({feat.size()});
}

/// Stacks vision_encode over a list of images into an N x width matrix.
inline Tensor vision_features(const BackboneParams& p, const std::vector<Tensor>& images, Variant variant) {
    const std::size_t w = p.config.feature_width(variant);
    Tensor out({images.size(), w});
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Tensor f = vision_encode(p, images[i], variant);
        for (std::size_t j = 0; j < w; ++j) out(i, j) = f[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// text tower

namespace detail {

struct TextCache {
    std::vector<BlockCache> blocks;
    Tensor final_in;  // 1 x width, EOS row before the final norm
};

inline Tensor text_forward(const BackboneParams& p, const Tensor& seq, TextCache* cache) {
    const auto& c = p.config;
    require_rank(seq, 2, "text_encode");
    if (seq.dim(1) != c.text_width) {
        throw DimensionError("text_encode: embedding width " + std::to_string(seq.dim(1)) + " != " +
                             std::to_string(c.text_width));
    }
    const std::size_t len = seq.dim(0);
    if (len == 0) throw DimensionError("text_encode: empty sequence");
    if (len > c.max_seq_len) {
        throw DimensionError("text_encode: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                             std::to_string(c.max_seq_len));
    }
    Tensor x = seq;
    for (std::size_t t = 0; t < len; ++t)
        for (std::size_t j = 0; j < c.text_width; ++j) x(t, j) += p.text.pos_embed(t, j);
    if (cache) cache->blocks.resize(p.text.blocks.size());
    for (std::size_t l = 0; l < p.text.blocks.size(); ++l)
        x = block_forward_cached(p.text.blocks[l], x, cache ? &cache->blocks[l] : nullptr);
    Tensor eos({1, c.text_width});
    for (std::size_t j = 0; j < c.text_width; ++j) eos(0, j) = x(len - 1, j);
    Tensor out = ops::matmul(ops::layer_norm(eos, p.text.ln_final_gamma, p.text.ln_final_beta), p.text.proj);
    if (cache) cache->final_in = std::move(eos);
    return out.reshaped({c.embed_dim});
}

}  // namespace detail

/// Encodes a T x text_width embedding sequence to an embed_dim vector read at the last position.
inline Tensor text_encode(const BackboneParams& p, const Tensor& seq) { return detail::text_forward(p, seq, nullptr); }

/// Gradient of <upstream, text_encode(seq)> with respect to seq.
inline Tensor text_encode_vjp(const BackboneParams& p, const Tensor& seq, const Tensor& upstream) {
    const auto& c = p.config;
    if (upstream.size() != c.embed_dim) throw DimensionError("text_encode_vjp: upstream must have embed_dim entries");
    detail::TextCache cache;
    detail::text_forward(p, seq, &cache);
    const Tensor g_out = upstream.reshaped({1, c.embed_dim});
    const Tensor g_norm = ops::matmul(g_out, ops::transpose(p.text.proj));
    const Tensor g_eos = ops::layer_norm_vjp(cache.final_in, p.text.ln_final_gamma, g_norm).dx;
    const std::size_t len = seq.dim(0);
    Tensor g({len, c.text_width});
    for (std::size_t j = 0; j < c.text_width; ++j) g(len - 1, j) = g_eos(0, j);
    for (std::size_t l = p.text.blocks.size(); l-- > 0;) g = detail::block_backward(p.text.blocks[l], cache.blocks[l], g);
    return g;  // positional embeddings are additive, so they pass the gradient through unchanged
}

// ---------------------------------------------------------------------------
// vocabulary

/// Whole-word vocabulary: one token per line, id = zero-based line index.
class Vocab {
  public:
    Vocab() = default;

    explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) throw FormatError("vocab: empty token on line " + std::to_string(i + 1));
            if (!ids_.emplace(tokens_[i], i).second) {
                throw FormatError("vocab: duplicate token '" + tokens_[i] + "' on line " + std::to_string(i + 1));
            }
        }
    }

    static Vocab parse(std::string_view text) {
        std::vector<std::string> tokens;
        std::size_t start = 0;
        while (start < text.size()) {
            std::size_t end = text.find('\n', start);
            if (end == std::string_view::npos) end = text.size();
            std::string_view line = text.substr(start, end - start);
            if (!line.empty() && line.back() == '\r') throw FormatError("vocab: CRLF line endings are not accepted");
            tokens.emplace_back(line);
            start = end + 1;
        }
        return Vocab(std::move(tokens));
    }

    static Vocab load(const fs::path& path) { return parse(read_file_text(path)); }

    std::string serialize() const {
        std::string s;
        for (const auto& t : tokens_) {
            s += t;
            s += '\n';
        }
        return s;
    }

    void save(const fs::path& path) const { write_file_atomic(path, serialize()); }

    std::size_t id(std::string_view name) const {
        auto it = ids_.find(std::string(name));
        if (it == ids_.end()) throw FormatError("token '" + std::string(name) + "' is not in the vocabulary");
        return it->second;
    }

    bool contains(std::string_view name) const { return ids_.count(std::string(name)) != 0; }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t> ids_;
};

inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";

/// Special tokens, the hand-written prompt words, the two binary class names, then extras.
inline Vocab default_vocab(const std::vector<std::string>& extra = {}) {
    std::vector<std::string> tokens{std::string(kBosToken), std::string(kEosToken), "a", "photo", "of", "image",
                                    "real", "fake"};
    for (const auto& e : extra)
        if (std::find(tokens.begin(), tokens.end(), e) == tokens.end()) tokens.push_back(e);
    return Vocab(std::move(tokens));
}

inline std::size_t tokenize_class(const Vocab& vocab, std::string_view name) { return vocab.id(name); }

/// Rows of the token-embedding table, one per id.
inline Tensor embed_tokens(const BackboneParams& p, const std::vector<std::size_t>& ids) {
    const std::size_t w = p.config.text_width;
    Tensor out({ids.size(), w});
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] >= p.text.token_embed.dim(0)) {
            throw FormatError("token id " + std::to_string(ids[t]) + " outside the embedding table");
        }
        for (std::size_t j = 0; j < w; ++j) out(t, j) = p.text.token_embed(ids[t], j);
    }
    return out;
}

}  // namespace adaptprompt

#endif
