// SPDX-License-Identifier: Apache-2.0
//
// Dataset manifests, PGM/PPM image I/O, stratified sampling, and the seeded
// synthetic corpus that stands in for GAN-style and diffusion-style data.
//
// Manifest: UTF-8, LF. Lines starting with '#' are comments. Data lines are
//   relative_path <TAB> label <TAB> generator <TAB> family <TAB> tags
// with tags comma-separated (possibly empty). Paths resolve against the
// directory holding the manifest.

#ifndef ADAPTPROMPT_DATA_HPP
#define ADAPTPROMPT_DATA_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adaptprompt/image_ops.hpp"
#include "adaptprompt/io.hpp"
#include "adaptprompt/rng.hpp"
#include "adaptprompt/tensor.hpp"

namespace adaptprompt {

enum class Label { real = 0, fake = 1 };

inline std::string_view label_name(Label l) { return l == Label::real ? "real" : "fake"; }

inline constexpr std::string_view kNoGenerator = "none";

struct Record {
    std::string path;
    Label label = Label::real;
    std::string generator{kNoGenerator};
    std::string family{kNoGenerator};
    std::vector<std::string> tags;

    bool has_tag(std::string_view t) const { return std::find(tags.begin(), tags.end(), t) != tags.end(); }
    friend bool operator==(const Record&, const Record&) = default;
};

struct Manifest {
    fs::path root;
    std::vector<std::string> header;  // leading comment lines, verbatim
    std::vector<Record> records;

    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }
    fs::path resolve(const Record& r) const { return root / r.path; }

    std::size_t count(Label l) const {
        return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [l](const Record& r) { return r.label == l; }));
    }

    /// Distinct generators in first-appearance order.
    std::vector<std::string> generators(bool fakes_only = true) const {
        std::vector<std::string> out;
        for (const auto& r : records) {
            if (fakes_only && r.label == Label::real) continue;
            if (std::find(out.begin(), out.end(), r.generator) == out.end()) out.push_back(r.generator);
        }
        return out;
    }

    /// generator -> family for every fake record.
    std::map<std::string, std::string> family_map() const {
        std::map<std::string, std::string> m;
        for (const auto& r : records)
            if (r.label == Label::fake) m.emplace(r.generator, r.family);
        return m;
    }
};

// ---------------------------------------------------------------------------
// manifest I/O

inline void validate_records(const std::vector<Record>& records) {
    std::set<std::string> paths;
    std::map<std::string, std::string> families;
    for (const auto& r : records) {
        if (!paths.insert(r.path).second) throw FormatError("manifest: duplicate path '" + r.path + "'");
        const bool none = r.generator == kNoGenerator;
        if ((r.label == Label::real) != none) {
            throw FormatError("manifest: '" + r.path + "': generator must be 'none' exactly for real images");
        }
        auto [it, fresh] = families.emplace(r.generator, r.family);
        if (!fresh && it->second != r.family) {
            throw FormatError("manifest: generator '" + r.generator + "' assigned to families '" + it->second +
                              "' and '" + r.family + "'");
        }
    }
}

inline Manifest parse_manifest(std::string_view text, const fs::path& root) {
    Manifest m;
    m.root = root;
    std::size_t line_no = 0, start = 0;
    bool in_header = true;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        const std::string where = "manifest line " + std::to_string(line_no);
        if (!line.empty() && line.front() == '#') {
            if (!in_header) throw FormatError(where + ": comment lines are only allowed before the first record");
            m.header.emplace_back(line);
            continue;
        }
        in_header = false;
        std::vector<std::string> fields;
        std::size_t fs = 0;
        while (true) {
            const std::size_t tab = line.find('\t', fs);
            fields.emplace_back(line.substr(fs, tab == std::string_view::npos ? std::string_view::npos : tab - fs));
            if (tab == std::string_view::npos) break;
            fs = tab + 1;
        }
        if (fields.size() != 5) {
            throw FormatError(where + ": expected 5 tab-separated fields, found " + std::to_string(fields.size()));
        }
        Record r;
        r.path = fields[0];
        if (r.path.empty()) throw FormatError(where + ": empty path");
        if (fields[1] == "real") r.label = Label::real;
        else if (fields[1] == "fake") r.label = Label::fake;
        else throw FormatError(where + ": unknown label '" + fields[1] + "'");
        r.generator = fields[2];
        r.family = fields[3];
        if (r.generator.empty() || r.family.empty()) throw FormatError(where + ": empty generator or family");
        if (!fields[4].empty()) {
            std::size_t ts = 0;
            while (true) {
                const std::size_t comma = fields[4].find(',', ts);
                r.tags.push_back(fields[4].substr(ts, comma == std::string::npos ? std::string::npos : comma - ts));
                if (comma == std::string::npos) break;
                ts = comma + 1;
            }
        }
        m.records.push_back(std::move(r));
    }
    validate_records(m.records);
    return m;
}

inline std::string serialize_manifest(const Manifest& m) {
    std::string s;
    for (const auto& h : m.header) s += h + '\n';
    for (const auto& r : m.records) {
        s += r.path;
        s += '\t';
        s += label_name(r.label);
        s += '\t' + r.generator + '\t' + r.family + '\t';
        for (std::size_t i = 0; i < r.tags.size(); ++i) s += (i ? "," : "") + r.tags[i];
        s += '\n';
    }
    return s;
}

inline Manifest load_manifest(const fs::path& path) {
    return parse_manifest(read_file_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

inline void save_manifest(const Manifest& m, const fs::path& path) {
    validate_records(m.records);
    write_file_atomic(path, serialize_manifest(m));
}

// ---------------------------------------------------------------------------
// images

/// Binary PGM (P5) or PPM (P6, reduced with 0.299/0.587/0.114 luma), maxval 255, values v / 255.
inline Tensor decode_image(std::span<const std::uint8_t> bytes, std::string_view origin = "image") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) { throw FormatError(std::string(origin) + ": " + why); };
    auto next_token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') tok += static_cast<char>(bytes[pos++]);
        if (tok.empty()) fail("truncated header");
        return tok;
    };
    auto number = [&](const char* what) {
        const std::string t = next_token();
        if (t.find_first_not_of("0123456789") != std::string::npos || t.size() > 9) fail(std::string("bad ") + what);
        return static_cast<std::size_t>(std::stoul(t));
    };
    const std::string magic = next_token();
    if (magic != "P5" && magic != "P6") fail("unsupported magic '" + magic + "' (expected P5 or P6)");
    const std::size_t w = number("width"), h = number("height"), maxval = number("maxval");
    if (maxval != 255) fail("maxval must be 255, got " + std::to_string(maxval));
    if (w == 0 || h == 0) fail("empty image");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("truncated header");
    ++pos;
    const std::size_t channels = magic == "P6" ? 3 : 1;
    if (bytes.size() - pos < w * h * channels) fail("truncated payload");
    Tensor img({h, w});
    for (std::size_t i = 0; i < w * h; ++i) {
        if (channels == 1) {
            img[i] = bytes[pos + i] / 255.0;
        } else {
            const auto* px = &bytes[pos + 3 * i];
            img[i] = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
        }
    }
    return img;
}

inline Tensor load_image(const fs::path& path) { return decode_image(read_file_bytes(path), path.string()); }

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<std::uint8_t> encode_pgm(const Tensor& img) {
    require_rank(img, 2, "encode_pgm");
    const std::string header = "P5\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (double v : img.data()) out.push_back(to_byte(v));
    return out;
}

inline void save_pgm(const Tensor& img, const fs::path& path) { write_file_atomic(path, encode_pgm(img)); }

/// Rounds to the 8-bit grid a PGM round trip would produce.
inline Tensor quantize8(const Tensor& img) {
    Tensor out = img;
    for (double& v : out.data()) v = to_byte(v) / 255.0;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus

enum class ArtifactKind { periodic, broadband };

struct PseudoGenerator {
    std::string name;
    ArtifactKind kind = ArtifactKind::periodic;
    double frequency = 0.0;  // periodic: f0 in cycles per image
    double amplitude = 0.0;  // periodic: a
    double noise_std = 0.0;  // broadband: s

    std::string family() const { return kind == ArtifactKind::periodic ? "GAN" : "Diffusion"; }
};

/// "name:periodic:f0:a" or "name:broadband:s", comma-separated.
inline std::vector<PseudoGenerator> parse_generators(std::string_view text) {
    std::vector<PseudoGenerator> out;
    if (text.empty()) return out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        const std::string item(text.substr(start, end - start));
        start = end + 1;
        std::vector<std::string> parts;
        std::stringstream ss(item);
        for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
        PseudoGenerator g;
        if (parts.size() == 4 && parts[1] == "periodic") {
            g.name = parts[0];
            g.kind = ArtifactKind::periodic;
            g.frequency = std::stod(parts[2]);
            g.amplitude = std::stod(parts[3]);
        } else if (parts.size() == 3 && parts[1] == "broadband") {
            g.name = parts[0];
            g.kind = ArtifactKind::broadband;
            g.noise_std = std::stod(parts[2]);
        } else {
            throw std::invalid_argument("bad generator spec '" + item + "' (expected name:periodic:f0:a or name:broadband:s)");
        }
        out.push_back(std::move(g));
        if (end == text.size()) break;
    }
    return out;
}

struct SyntheticSpec {
    std::size_t side = 32;
    std::size_t train_real = 1000;
    std::size_t train_fake = 500;  // per generator
    std::size_t test_real = 250;
    std::size_t test_fake = 250;   // per generator
    double base_sigma = 1.5;
    double tag_probability = 0.5;
    std::vector<PseudoGenerator> generators;
    std::uint64_t seed = 0;

    void validate() const {
        auto fail = [](const std::string& why) { throw std::invalid_argument("invalid synthetic spec: " + why); };
        if (side < 4) fail("side must be at least 4");
        if (!(base_sigma >= 0.0)) fail("base_sigma must be >= 0");
        if (!(tag_probability >= 0.0 && tag_probability <= 1.0)) fail("tag probability must lie in [0, 1]");
        std::set<std::string> names;
        for (const auto& g : generators) {
            if (g.name.empty() || g.name == kNoGenerator) fail("generator names must be non-empty and not 'none'");
            if (!names.insert(g.name).second) fail("duplicate generator '" + g.name + "'");
            if (g.kind == ArtifactKind::periodic) {
                if (!(g.frequency >= 2.0 && g.frequency < static_cast<double>(side) / 2.0)) {
                    fail(g.name + ": f0 must lie in [2, side/2)");
                }
                if (!(g.amplitude > 0.0)) fail(g.name + ": amplitude must be positive");
            } else if (!(g.noise_std > 0.0)) {
                fail(g.name + ": noise std must be positive");
            }
        }
    }
};

inline SyntheticSpec default_synthetic_spec() {
    SyntheticSpec s;
    s.generators = parse_generators("gan_a:periodic:5:0.2,gan_b:periodic:11:0.25,diff_a:broadband:0.15,diff_b:broadband:0.25");
    return s;
}

/// Blurred white noise, rescaled affinely to [0.1, 0.9].
inline Tensor synth_base(std::size_t side, double sigma, Rng& rng) {
    Tensor noise({side, side});
    for (double& v : noise.data()) v = rng.normal();
    Tensor img = gaussian_blur(noise, sigma);
    const auto [lo_it, hi_it] = std::minmax_element(img.data().begin(), img.data().end());
    const double lo = *lo_it, span = *hi_it - *lo_it;
    for (double& v : img.data()) v = span > 0.0 ? 0.1 + 0.8 * (v - lo) / span : 0.5;
    return img;
}

struct SynthSample {
    Tensor base;
    Tensor image;  // before 8-bit quantization
};

/// a cos(2 pi f0 x / N) cos(2 pi f0 y / N) on an N x N grid.
inline Tensor periodic_pattern(std::size_t side, double f0, double amplitude) {
    Tensor p({side, side});
    const double n = static_cast<double>(side);
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
            p(y, x) = amplitude * std::cos(2.0 * std::numbers::pi * f0 * static_cast<double>(x) / n) *
                      std::cos(2.0 * std::numbers::pi * f0 * static_cast<double>(y) / n);
    return p;
}

/// One image; `generator == nullptr` yields a real image.
inline SynthSample synth_sample(const SyntheticSpec& spec, const PseudoGenerator* generator, Rng& rng) {
    SynthSample s;
    s.base = synth_base(spec.side, spec.base_sigma, rng);
    s.image = s.base;
    if (generator) {
        if (generator->kind == ArtifactKind::periodic) {
            const Tensor p = periodic_pattern(spec.side, generator->frequency, generator->amplitude);
            for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] += p[i];
        } else {
            for (double& v : s.image.data()) v += rng.normal(0.0, generator->noise_std);
        }
        for (double& v : s.image.data()) v = std::clamp(v, 0.0, 1.0);
    }
    return s;
}

struct SyntheticCorpus {
    Manifest train;
    Manifest test;
};

namespace detail {

inline std::string zero_pad(std::size_t i, int width = 6) {
    std::string s = std::to_string(i);
    return std::string(s.size() < static_cast<std::size_t>(width) ? width - s.size() : 0, '0') + s;
}

inline std::vector<std::string> synth_tags(Rng& rng, double p) {
    std::vector<std::string> tags;
    tags.emplace_back(rng.uniform() < 0.5 ? "indoor" : "outdoor");
    if (rng.uniform() < p) tags.emplace_back("person");
    return tags;
}

}  // namespace detail

/// Writes <root>/<split>/<generator|real>/<index>.pgm plus train.tsv and test.tsv.
/// Each image draws from its own stream derived from (seed, split, generator, index).
inline SyntheticCorpus synth_generate(const SyntheticSpec& spec, const fs::path& root, std::string_view header = {}) {
    spec.validate();
    SyntheticCorpus corpus;
    const std::array<std::pair<std::string, Manifest*>, 2> splits{{{"train", &corpus.train}, {"test", &corpus.test}}};
    for (std::size_t si = 0; si < 2; ++si) {
        const auto& [split_name, manifest] = splits[si];
        manifest->root = root;
        if (!header.empty()) {
            std::string_view h = header;
            while (!h.empty() && h.back() == '\n') h.remove_suffix(1);
            manifest->header.emplace_back(h);
        }
        const std::size_t n_real = si == 0 ? spec.train_real : spec.test_real;
        const std::size_t n_fake = si == 0 ? spec.train_fake : spec.test_fake;
        for (std::size_t g = 0; g <= spec.generators.size(); ++g) {
            const PseudoGenerator* gen = g == 0 ? nullptr : &spec.generators[g - 1];
            const std::size_t count = gen ? n_fake : n_real;
            const std::string dir = split_name + "/" + (gen ? gen->name : std::string("real"));
            for (std::size_t i = 0; i < count; ++i) {
                Rng rng = Rng::derive(spec.seed, (si << 56) ^ (static_cast<std::uint64_t>(g) << 40) ^ i);
                const SynthSample s = synth_sample(spec, gen, rng);
                Record r;
                r.path = dir + "/" + detail::zero_pad(i) + ".pgm";
                r.label = gen ? Label::fake : Label::real;
                r.generator = gen ? gen->name : std::string(kNoGenerator);
                r.family = gen ? gen->family() : std::string(kNoGenerator);
                r.tags = detail::synth_tags(rng, spec.tag_probability);
                save_pgm(s.image, root / r.path);
                manifest->records.push_back(std::move(r));
            }
        }
        save_manifest(*manifest, root / (split_name + ".tsv"));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// sampling

/// Seeded, stratified by label, without replacement; selected records keep manifest order.
inline Manifest fewshot_sample(const Manifest& m, std::size_t n_per_class, std::uint64_t seed) {
    Manifest out;
    out.root = m.root;
    out.header = m.header;
    std::vector<bool> keep(m.size(), false);
    Rng rng = Rng::derive(seed, 11);
    for (Label l : {Label::real, Label::fake}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.records[i].label == l) idx.push_back(i);
        if (idx.size() < n_per_class) {
            throw std::invalid_argument("fewshot_sample: class '" + std::string(label_name(l)) + "' has " +
                                        std::to_string(idx.size()) + " records, " + std::to_string(n_per_class) +
                                        " requested");
        }
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < n_per_class; ++k) keep[idx[k]] = true;
    }
    for (std::size_t i = 0; i < m.size(); ++i)
        if (keep[i]) out.records.push_back(m.records[i]);
    return out;
}

struct SplitResult {
    Manifest train;
    Manifest test;
};

/// Seeded split of every (label, generator) stratum; each stratum must land on both sides.
inline SplitResult split(const Manifest& m, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < m.size(); ++i)
        strata[{static_cast<int>(m.records[i].label), m.records[i].generator}].push_back(i);
    std::vector<bool> to_train(m.size(), false);
    Rng rng = Rng::derive(seed, 12);
    for (auto& [key, idx] : strata) {
        const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
        if (n_train == 0 || n_train == idx.size()) {
            throw std::invalid_argument("split: stratum (" + std::string(label_name(static_cast<Label>(key.first))) + ", " +
                                        key.second + ") with " + std::to_string(idx.size()) +
                                        " records leaves one side empty");
        }
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = true;
    }
    SplitResult r;
    r.train.root = r.test.root = m.root;
    r.train.header = r.test.header = m.header;
    for (std::size_t i = 0; i < m.size(); ++i) (to_train[i] ? r.train : r.test).records.push_back(m.records[i]);
    return r;
}

/// Keeps records matching `pred`.
template <typename Pred>
Manifest filter(const Manifest& m, Pred pred) {
    Manifest out;
    out.root = m.root;
    out.header = m.header;
    for (const auto& r : m.records)
        if (pred(r)) out.records.push_back(r);
    return out;
}

inline std::vector<Tensor> load_images(const Manifest& m) {
    std::vector<Tensor> out;
    out.reserve(m.size());
    for (const auto& r : m.records) out.push_back(load_image(m.resolve(r)));
    return out;
}

}  // namespace adaptprompt

#endif
