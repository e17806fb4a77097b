// SPDX-License-Identifier: Apache-2.0
//
// "key = value" configuration: parsing, merging with command-line overrides,
// typed access, and a stable hash of the resolved settings.

#ifndef ADAPTPROMPT_CONFIG_HPP
#define ADAPTPROMPT_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/adaptation.hpp"
#include "adaptprompt/backbone.hpp"
#include "adaptprompt/io.hpp"

namespace adaptprompt {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Parses "key = value" lines; '#' starts a comment line. Later keys override earlier ones.
inline std::map<std::string, std::string> parse_key_values(std::string_view text, std::string_view origin = "config") {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        const std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw FormatError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
        out[key] = std::string(trim(line.substr(eq + 1)));
    }
    return out;
}

inline std::uint64_t parse_u64(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw std::invalid_argument("'" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

inline double parse_double(std::string_view key, std::string_view v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(std::string(v), &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("'" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
    }
}

inline std::vector<double> parse_double_list(std::string_view key, std::string_view v) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    for (const auto& item : split(v, ',')) out.push_back(parse_double(key, trim(item)));
    return out;
}

inline TrainConfig train_config_from(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    for (const auto& [k, v] : kv) {
        if (k == "mode") c.mode = parse_mode(v);
        else if (k == "variant") c.variant = parse_variant(v);
        else if (k == "learning_rate") c.learning_rate = parse_double(k, v);
        else if (k == "batch_size") c.batch_size = parse_u64(k, v);
        else if (k == "epochs") c.epochs = parse_u64(k, v);
        else if (k == "seed") c.seed = parse_u64(k, v);
        else if (k == "d_mid") c.d_mid = parse_u64(k, v);
        else if (k == "context_len") c.context_len = parse_u64(k, v);
        else if (k == "alpha") c.alpha = parse_double(k, v);
        else if (k == "output_projection") c.output_projection = parse_output_projection(v);
        else if (k == "patience") c.patience = parse_u64(k, v);
    }
    return c;
}

/// Reads a state container and its sidecar, checking shapes against a fresh state.
inline AdaptState load_state(const fs::path& path, const BackboneParams& bb, const Vocab& vocab) {
    fs::path sidecar = path;
    sidecar += ".cfg";
    const auto kv = parse_key_values(read_file_text(sidecar), sidecar.string());
    const TrainConfig cfg = train_config_from(kv);
    const auto it = kv.find("classes");
    if (it == kv.end()) throw FormatError(sidecar.string() + ": missing 'classes'");
    AdaptState s = init_state(cfg, bb, vocab, split(it->second, ','));
    const auto tensors = load_container(path);
    auto assign = [&](const std::string& name, Tensor& into) {
        const Tensor& got = find_tensor(tensors, name);
        if (got.shape() != into.shape()) {
            throw FormatError("state tensor '" + name + "' has shape " + shape_string(got.shape()) + ", expected " +
                              shape_string(into.shape()));
        }
        into = got;
    };
    for (const auto& [name, t] : state_tensors(s)) {
        if (name == "head.log_inv_tau") assign(name, s.head.log_inv_tau);
        else if (name == "head.W_out") assign(name, *s.head.w_out);
        else if (name == "adapter.W_down") assign(name, s.adapter.w_down);
        else if (name == "adapter.W_up") assign(name, s.adapter.w_up);
        else if (name == "prompt.context") assign(name, s.prompts.context);
        else if (name == "probe.W") assign(name, s.probe->weight);
        else if (name == "probe.b") assign(name, s.probe->bias);
    }
    return s;
}

// ---------------------------------------------------------------------------

/// Every accepted key with its default. Unknown keys are rejected.
inline const std::map<std::string, std::string>& default_settings() {
    static const std::map<std::string, std::string> d{
        // universal
        {"seed", "0"},
        {"out", "out"},
        // backbone
        {"image_size", "32"},
        {"patch_size", "8"},
        {"vision_width", "64"},
        {"vision_layers", "4"},
        {"vision_heads", "4"},
        {"text_width", "48"},
        {"text_layers", "2"},
        {"text_heads", "4"},
        {"embed_dim", "32"},
        {"vocab_size", "64"},
        {"max_seq_len", "24"},
        {"weights", ""},
        {"vocab", ""},
        // training
        {"mode", "adaptprompt"},
        {"variant", "v0"},
        {"learning_rate", "0.001"},
        {"batch_size", "32"},
        {"epochs", "10"},
        {"d_mid", "0"},
        {"context_len", "16"},
        {"alpha", "0.2"},
        {"output_projection", "auto"},
        {"patience", "5"},
        {"manifest", ""},
        {"eval_manifest", ""},
        {"state", ""},
        {"fewshot_per_class", "0"},
        {"train_generators", ""},
        // synthetic corpus
        {"synth_side", "32"},
        {"synth_train_real", "1000"},
        {"synth_train_fake", "500"},
        {"synth_test_real", "250"},
        {"synth_test_fake", "250"},
        {"synth_base_sigma", "1.5"},
        {"synth_generators", "gan_a:periodic:5:0.2,gan_b:periodic:11:0.25,diff_a:broadband:0.15,diff_b:broadband:0.25"},
        {"synth_tag_prob", "0.5"},
        // evaluation
        {"tag", ""},
        {"tag_mode", "has"},
        {"subconfig_groups", ""},
        {"family_overrides", ""},
        // analysis
        {"blur_grid", "0,0.5,1,2"},
        {"jpeg_grid", "95,85,75,50"},
        {"stage", "post_adapter"},
        {"subset", "generator"},
    };
    return d;
}

class RunConfig {
  public:
    RunConfig() : values_(default_settings()) {}

    /// Applies settings in order; later calls win. Unknown keys throw.
    void merge(const std::map<std::string, std::string>& kv, std::string_view origin) {
        const auto& known = default_settings();
        for (const auto& [k, v] : kv) {
            if (!known.count(k)) throw std::invalid_argument("unknown key '" + k + "' in " + std::string(origin));
            values_[k] = v;
        }
    }

    void merge_file(const fs::path& path) { merge(parse_key_values(read_file_text(path), path.string()), path.string()); }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::invalid_argument("unknown key '" + key + "'");
        return it->second;
    }
    std::uint64_t get_u64(const std::string& key) const { return parse_u64(key, get(key)); }
    double get_double(const std::string& key) const { return parse_double(key, get(key)); }

    /// Resolved settings, one "key = value" per line in key order.
    std::string serialize() const {
        std::string s;
        for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
        return s;
    }

    std::uint64_t hash() const {
        const std::string s = serialize();
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    /// First line of every output file.
    std::string header_line() const { return "# config_hash=" + hex64(hash()) + "\n"; }

    BackboneConfig backbone_config() const {
        BackboneConfig c;
        c.image_size = get_u64("image_size");
        c.patch_size = get_u64("patch_size");
        c.vision_width = get_u64("vision_width");
        c.vision_layers = get_u64("vision_layers");
        c.vision_heads = get_u64("vision_heads");
        c.text_width = get_u64("text_width");
        c.text_layers = get_u64("text_layers");
        c.text_heads = get_u64("text_heads");
        c.embed_dim = get_u64("embed_dim");
        c.vocab_size = get_u64("vocab_size");
        c.max_seq_len = get_u64("max_seq_len");
        c.variant = parse_variant(get("variant"));
        return c;
    }

    TrainConfig train_config() const {
        std::map<std::string, std::string> kv;
        for (const char* k : {"mode", "variant", "learning_rate", "batch_size", "epochs", "seed", "d_mid",
                              "context_len", "alpha", "output_projection", "patience"})
            kv[k] = get(k);
        return train_config_from(kv);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace adaptprompt

#endif
