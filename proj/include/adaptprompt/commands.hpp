// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations. Each takes a resolved RunConfig, writes its
// outputs under `out` (every text file starts with the config-hash line),
// prints a short summary, and throws on failure.

#ifndef ADAPTPROMPT_COMMANDS_HPP
#define ADAPTPROMPT_COMMANDS_HPP

#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "adaptprompt/adaptation.hpp"
#include "adaptprompt/analysis.hpp"
#include "adaptprompt/backbone.hpp"
#include "adaptprompt/config.hpp"
#include "adaptprompt/data.hpp"
#include "adaptprompt/metrics.hpp"

namespace adaptprompt {

inline fs::path out_dir(const RunConfig& cfg) { return fs::path(cfg.get("out")); }

/// The configured path for `key`, or `out/<fallback>` when unset.
inline fs::path path_setting(const RunConfig& cfg, const std::string& key, const std::string& fallback) {
    const std::string& v = cfg.get(key);
    return v.empty() ? out_dir(cfg) / fallback : fs::path(v);
}

/// "a:b,c:d" -> {a: b, c: d}.
inline std::map<std::string, std::string> parse_pairs(const std::string& key, const std::string& text) {
    std::map<std::string, std::string> out;
    if (trim(text).empty()) return out;
    for (const auto& item : split(text, ',')) {
        const auto parts = split(trim(item), ':');
        if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
            throw std::invalid_argument("'" + key + "' expects name:value pairs, got '" + item + "'");
        }
        out[parts[0]] = parts[1];
    }
    return out;
}

inline std::vector<std::string> parse_names(const std::string& text) {
    std::vector<std::string> out;
    if (trim(text).empty()) return out;
    for (const auto& item : split(text, ',')) out.emplace_back(trim(item));
    return out;
}

inline SyntheticSpec synthetic_spec(const RunConfig& cfg) {
    SyntheticSpec s;
    s.side = cfg.get_u64("synth_side");
    s.train_real = cfg.get_u64("synth_train_real");
    s.train_fake = cfg.get_u64("synth_train_fake");
    s.test_real = cfg.get_u64("synth_test_real");
    s.test_fake = cfg.get_u64("synth_test_fake");
    s.base_sigma = cfg.get_double("synth_base_sigma");
    s.tag_probability = cfg.get_double("synth_tag_prob");
    s.generators = parse_generators(cfg.get("synth_generators"));
    s.seed = cfg.get_u64("seed");
    return s;
}

/// Writes the resolved configuration next to the outputs of `command`.
inline void log_run_config(const RunConfig& cfg, const std::string& command) {
    write_file_atomic(out_dir(cfg) / ("run_" + command + ".cfg"), cfg.header_line() + cfg.serialize());
}

inline Manifest load_nonempty_manifest(const fs::path& path) {
    Manifest m = load_manifest(path);
    if (m.empty()) throw std::invalid_argument("empty manifest: " + path.string());
    return m;
}

inline Tensor manifest_features(const BackboneParams& bb, const Manifest& m, Variant variant) {
    return vision_features(bb, load_images(m), variant);
}

inline std::vector<ScoredSample> scored_samples(const Manifest& m, const std::vector<double>& scores) {
    std::vector<ScoredSample> out;
    out.reserve(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& r = m.records[i];
        out.push_back({scores.empty() ? 0.0 : scores[i], r.label == Label::fake, r.generator, r.family, r.tags});
    }
    return out;
}

/// One dataset per generator: every real sample plus that generator's fakes.
inline std::vector<DatasetMetrics> per_generator_metrics(const std::vector<ScoredSample>& samples) {
    std::vector<std::string> gens;
    for (const auto& s : samples)
        if (s.fake && std::find(gens.begin(), gens.end(), s.generator) == gens.end()) gens.push_back(s.generator);
    std::vector<DatasetMetrics> rows;
    for (const auto& g : gens) {
        std::vector<ScoredSample> subset;
        std::string family;
        for (const auto& s : samples) {
            if (!s.fake || s.generator == g) subset.push_back(s);
            if (s.fake && s.generator == g) family = s.family;
        }
        rows.push_back(evaluate_dataset(g, family, subset));
    }
    return rows;
}

struct Resources {
    BackboneParams backbone;
    Vocab vocab;
};

inline Resources load_resources(const RunConfig& cfg) {
    return {load_weights(path_setting(cfg, "weights", "backbone.apwt")), Vocab::load(path_setting(cfg, "vocab", "vocab.txt"))};
}

// ---------------------------------------------------------------------------

inline void cmd_synth(const RunConfig& cfg, std::ostream& os) {
    const SyntheticSpec spec = synthetic_spec(cfg);
    const SyntheticCorpus c = synth_generate(spec, out_dir(cfg), cfg.header_line());
    log_run_config(cfg, "synth");
    os << "train\t" << c.train.size() << "\ntest\t" << c.test.size() << '\n';
}

inline void cmd_init_backbone(const RunConfig& cfg, std::ostream& os) {
    const BackboneConfig bc = cfg.backbone_config();
    bc.validate();
    std::vector<std::string> names;
    for (const auto& g : parse_generators(cfg.get("synth_generators"))) names.push_back(g.name);
    const Vocab vocab = default_vocab(names);
    if (vocab.size() > bc.vocab_size) {
        throw std::invalid_argument("vocabulary needs " + std::to_string(vocab.size()) + " tokens but vocab_size is " +
                                    std::to_string(bc.vocab_size));
    }
    const BackboneParams p = init_random(bc, cfg.get_u64("seed"));
    const fs::path weights = path_setting(cfg, "weights", "backbone.apwt");
    save_weights(p, weights);
    vocab.save(path_setting(cfg, "vocab", "vocab.txt"));
    log_run_config(cfg, "init_backbone");
    os << "parameters\t" << parameter_count(bc) << "\ncontent_hash\t" << hex64(content_hash(p)) << '\n';
}

inline void cmd_train(const RunConfig& cfg, std::ostream& os) {
    const TrainConfig tc = cfg.train_config();
    const Resources res = load_resources(cfg);
    Manifest m = load_nonempty_manifest(path_setting(cfg, "manifest", "train.tsv"));
    const auto keep = parse_names(cfg.get("train_generators"));
    if (!keep.empty()) {
        m = filter(m, [&](const Record& r) {
            return r.label == Label::real || std::find(keep.begin(), keep.end(), r.generator) != keep.end();
        });
    }
    if (const std::uint64_t n = cfg.get_u64("fewshot_per_class")) m = fewshot_sample(m, n, tc.seed);
    if (m.empty()) throw std::invalid_argument("empty manifest after filtering");

    LabeledFeatures data{manifest_features(res.backbone, m, tc.variant), {}};
    for (const auto& r : m.records) data.labels.push_back(r.label == Label::fake ? kFakeClass : kRealClass);
    const TrainResult r = train(tc, res.backbone, res.vocab, data, {"real", "fake"});

    save_state(r.state, path_setting(cfg, "state", "state.apwt"), cfg.header_line());
    write_file_atomic(out_dir(cfg) / "train_log.tsv", cfg.header_line() + r.log.summary());
    log_run_config(cfg, "train");
    os << "samples\t" << m.size() << '\n' << r.log.summary();
}

inline EvalReport evaluate_manifest(const RunConfig& cfg, const AdaptState& state, const BackboneParams& bb,
                                    const Manifest& m, std::vector<ScoredSample>* samples_out = nullptr) {
    const auto scores = predict_scores(state, bb, manifest_features(bb, m, state.config.variant));
    auto samples = scored_samples(m, scores);
    auto families = m.family_map();
    for (const auto& [name, fam] : parse_pairs("family_overrides", cfg.get("family_overrides"))) families[name] = fam;
    EvalReport rep = aggregate(per_generator_metrics(samples), families, parse_pairs("subconfig_groups", cfg.get("subconfig_groups")));
    if (samples_out) *samples_out = std::move(samples);
    return rep;
}

inline void cmd_eval(const RunConfig& cfg, std::ostream& os) {
    const Manifest m = load_nonempty_manifest(path_setting(cfg, "eval_manifest", "test.tsv"));
    const Resources res = load_resources(cfg);
    const AdaptState state = load_state(path_setting(cfg, "state", "state.apwt"), res.backbone, res.vocab);
    std::vector<ScoredSample> samples;
    const EvalReport rep = evaluate_manifest(cfg, state, res.backbone, m, &samples);
    std::string text = cfg.header_line() + format_report(rep);
    if (const std::string& tag = cfg.get("tag"); !tag.empty()) {
        const std::string& mode = cfg.get("tag_mode");
        if (mode != "has" && mode != "lacks") throw std::invalid_argument("tag_mode must be 'has' or 'lacks', got '" + mode + "'");
        const SubsetMetrics sm = tag_subset_eval(samples, tag, mode == "has");
        text += "tag:" + tag + ":" + mode + '\t' + format6(sm.ap) + '\t' + format6(sm.acc) + '\t' + std::to_string(sm.count) + '\n';
    }
    write_file_atomic(out_dir(cfg) / "report.tsv", text);
    log_run_config(cfg, "eval");
    os << text.substr(text.find('\n') + 1);
}

inline void cmd_attribute(const RunConfig& cfg, std::ostream& os) {
    const TrainConfig tc = cfg.train_config();
    if (tc.mode == TrainMode::linear_probe) throw std::invalid_argument("attribution uses the prompt classifier; mode linear_probe is not supported");
    const Resources res = load_resources(cfg);
    const auto fakes = [](const Record& r) { return r.label == Label::fake; };
    const Manifest train_m = filter(load_nonempty_manifest(path_setting(cfg, "manifest", "train.tsv")), fakes);
    const Manifest test_m = filter(load_nonempty_manifest(path_setting(cfg, "eval_manifest", "test.tsv")), fakes);
    if (train_m.empty() || test_m.empty()) throw std::invalid_argument("empty manifest: attribution needs fake records");
    const std::vector<std::string> classes = train_m.generators();

    auto labels_of = [&](const Manifest& m) {
        std::vector<std::size_t> labels;
        for (const auto& r : m.records) {
            const auto it = std::find(classes.begin(), classes.end(), r.generator);
            if (it == classes.end()) throw std::invalid_argument("generator '" + r.generator + "' is absent from the training manifest");
            labels.push_back(static_cast<std::size_t>(it - classes.begin()));
        }
        return labels;
    };
    LabeledFeatures data{manifest_features(res.backbone, train_m, tc.variant), labels_of(train_m)};
    const TrainResult r = train(tc, res.backbone, res.vocab, data, classes);

    const auto truth = labels_of(test_m);
    const auto pred = predict_classes(r.state, res.backbone, manifest_features(res.backbone, test_m, tc.variant));
    const ConfusionMatrix cm = confusion_matrix(classes, truth, pred);
    auto families = train_m.family_map();
    for (const auto& [name, fam] : parse_pairs("family_overrides", cfg.get("family_overrides"))) families[name] = fam;
    const AttributionMetrics am = attribution_metrics(cm, families);

    const std::string summary = "exact\t" + format6(am.exact) + "\nfamily\t" + format6(am.family) + '\n';
    write_file_atomic(out_dir(cfg) / "confusion.tsv", cfg.header_line() + format_confusion(cm));
    write_file_atomic(out_dir(cfg) / "attribution.tsv", cfg.header_line() + summary);
    write_file_atomic(out_dir(cfg) / "attribution_train_log.tsv", cfg.header_line() + r.log.summary());
    log_run_config(cfg, "attribute");
    os << r.log.summary() << format_confusion(cm) << summary;
}

inline void cmd_spectrum(const RunConfig& cfg, std::ostream& os) {
    const Manifest m = load_nonempty_manifest(path_setting(cfg, "manifest", "train.tsv"));
    const std::string& subset = cfg.get("subset");
    if (subset != "generator" && subset != "family") {
        throw std::invalid_argument("subset must be 'generator' or 'family', got '" + subset + "'");
    }
    std::vector<std::string> names{"real"};
    std::map<std::string, std::vector<Tensor>> images;
    for (const auto& r : m.records) {
        const std::string key = r.label == Label::real ? "real" : (subset == "generator" ? r.generator : r.family);
        if (!images.count(key) && key != "real") names.push_back(key);
        images[key].push_back(load_image(m.resolve(r)));
    }
    if (!images.count("real")) throw std::invalid_argument("spectrum analysis needs real images as the reference");
    const RadialSpectrum reference = dataset_mean_spectrum(images["real"]);
    std::string spikes = cfg.header_line() + "# subset\tspike_bins\thigh_frequency_ratio\n";
    for (const auto& name : names) {
        const RadialSpectrum s = name == "real" ? reference : dataset_mean_spectrum(images[name]);
        write_file_atomic(out_dir(cfg) / ("spectrum_" + name + ".tsv"), cfg.header_line() + format_spectrum(s));
        const auto bins = detect_spikes(s);
        std::string list;
        for (std::size_t i = 0; i < bins.size(); ++i) list += (i ? "," : "") + std::to_string(bins[i]);
        spikes += name + '\t' + (list.empty() ? "-" : list) + '\t' + format6(high_frequency_ratio(s, reference)) + '\n';
    }
    write_file_atomic(out_dir(cfg) / "spikes.tsv", spikes);
    log_run_config(cfg, "spectrum");
    os << spikes.substr(spikes.find('\n') + 1);
}

inline void cmd_robust(const RunConfig& cfg, std::ostream& os) {
    const Manifest m = load_nonempty_manifest(path_setting(cfg, "eval_manifest", "test.tsv"));
    const Resources res = load_resources(cfg);
    const AdaptState state = load_state(path_setting(cfg, "state", "state.apwt"), res.backbone, res.vocab);
    const auto specs = perturbation_grid(parse_double_list("blur_grid", cfg.get("blur_grid")),
                                         parse_double_list("jpeg_grid", cfg.get("jpeg_grid")));
    const auto rows = robustness_sweep(state, res.backbone, load_images(m), scored_samples(m, {}), specs);
    const std::string text = cfg.header_line() + "# kind\tparameter\tAP\tACC\n" + format_curve(rows);
    write_file_atomic(out_dir(cfg) / "robustness.tsv", text);
    log_run_config(cfg, "robust");
    os << format_curve(rows);
}

inline void cmd_export(const RunConfig& cfg, std::ostream& os) {
    const Manifest m = load_nonempty_manifest(path_setting(cfg, "eval_manifest", "test.tsv"));
    const Resources res = load_resources(cfg);
    const EmbeddingStage stage = parse_stage(cfg.get("stage"));
    std::optional<AdaptState> state;
    Variant variant = cfg.train_config().variant;
    if (stage == EmbeddingStage::post_adapter) {
        state = load_state(path_setting(cfg, "state", "state.apwt"), res.backbone, res.vocab);
        variant = state->config.variant;
    }
    const Tensor raw = manifest_features(res.backbone, m, variant);
    const std::string name = "embeddings_" + cfg.get("stage") + ".tsv";
    write_file_atomic(out_dir(cfg) / name, cfg.header_line() + export_embeddings(state ? &*state : nullptr, m, raw, stage));
    log_run_config(cfg, "export");
    os << "records\t" << m.size() << "\nfile\t" << (out_dir(cfg) / name).string() << '\n';
}

inline std::string format_param_count(const ParamCount& pc) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "trainable\t%zu\ntotal\t%zu\nratio\t%.6e\n", pc.trainable, pc.total, pc.ratio);
    return buf;
}

inline void cmd_count(const RunConfig& cfg, std::ostream& os) {
    const TrainConfig tc = cfg.train_config();
    const BackboneConfig bc = cfg.backbone_config();
    bc.validate();
    tc.validate(bc);
    const std::string text = format_param_count(count_params(tc, bc));
    write_file_atomic(out_dir(cfg) / "params.tsv", cfg.header_line() + text);
    log_run_config(cfg, "count");
    os << text;
}

}  // namespace adaptprompt

#endif
