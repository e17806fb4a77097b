// SPDX-License-Identifier: Apache-2.0
//
// Detection and attribution metrics: non-interpolated average precision,
// thresholded accuracy, family aggregation with sub-config pre-averaging,
// confusion matrices, and tag-restricted evaluation.

#ifndef ADAPTPROMPT_METRICS_HPP
#define ADAPTPROMPT_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace adaptprompt {

/// Raised when a metric is undefined for its input (e.g. AP without negatives).
class UndefinedMetric : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

inline const std::string kFamilyOther = "Other";

struct ScoredSample {
    double score = 0.0;  // P(fake)
    bool fake = false;
    std::string generator;
    std::string family;
    std::vector<std::string> tags;

    bool has_tag(std::string_view t) const { return std::find(tags.begin(), tags.end(), t) != tags.end(); }
};

/// Mean of precision@k over the ranks k holding positives, ranking by descending
/// score with equal scores kept in input order.
inline double average_precision(std::span<const double> scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw std::invalid_argument("average_precision: length mismatch");
    const std::size_t n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
    if (n_pos == 0 || n_pos == positive.size()) {
        throw UndefinedMetric("average precision needs at least one positive and one negative sample");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (positive[order[k]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(n_pos);
}

inline double average_precision(const std::vector<ScoredSample>& samples) {
    std::vector<double> scores;
    std::vector<bool> positive;
    for (const auto& x : samples) {
        scores.push_back(x.score);
        positive.push_back(x.fake);
    }
    return average_precision(scores, positive);
}

/// Fraction correct with prediction "fake" iff score > threshold (a score equal to the threshold is real).
inline double accuracy(const std::vector<ScoredSample>& samples, double threshold = 0.5) {
    if (samples.empty()) throw UndefinedMetric("accuracy of an empty sample set");
    std::size_t correct = 0;
    for (const auto& s : samples) correct += (s.score > threshold) == s.fake;
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

struct DatasetMetrics {
    std::string name;
    std::string family;
    double ap = 0.0;
    double acc = 0.0;
    std::size_t count = 0;
};

struct FamilyMetrics {
    std::string family;
    double ap = 0.0;
    double acc = 0.0;
    std::size_t datasets = 0;
};

struct EvalReport {
    std::vector<DatasetMetrics> datasets;  // as measured, sorted by name
    std::vector<DatasetMetrics> grouped;   // after sub-config averaging, sorted by name
    std::vector<FamilyMetrics> families;   // sorted by family name; "Other" excluded
    double map = 0.0;
    double overall_acc = 0.0;
    std::size_t samples = 0;
};

inline DatasetMetrics evaluate_dataset(std::string name, std::string family, const std::vector<ScoredSample>& samples) {
    return {std::move(name), std::move(family), average_precision(samples), accuracy(samples), samples.size()};
}

/// Sub-config groups map dataset -> group name (e.g. glide_100_10 -> glide). Metrics are
/// averaged within each group first, then per family, then over all groups for mAP.
inline EvalReport aggregate(std::vector<DatasetMetrics> rows, const std::map<std::string, std::string>& family_map,
                            const std::map<std::string, std::string>& subconfig_groups = {}) {
    if (rows.empty()) throw UndefinedMetric("aggregate: no datasets");
    for (auto& r : rows) {
        const auto it = family_map.find(r.name);
        if (it == family_map.end() || it->second.empty()) {
            throw std::invalid_argument("aggregate: dataset '" + r.name + "' has no family assignment");
        }
        r.family = it->second;
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].name == rows[i - 1].name) throw std::invalid_argument("aggregate: duplicate dataset '" + rows[i].name + "'");

    EvalReport rep;
    rep.datasets = rows;

    std::map<std::string, std::vector<const DatasetMetrics*>> groups;
    for (const auto& r : rows) {
        const auto g = subconfig_groups.find(r.name);
        groups[g == subconfig_groups.end() ? r.name : g->second].push_back(&r);
    }
    for (const auto& [name, members] : groups) {
        DatasetMetrics d;
        d.name = name;
        d.family = members.front()->family;
        for (const auto* m : members) {
            if (m->family != d.family) {
                throw std::invalid_argument("aggregate: group '" + name + "' mixes families " + d.family + " and " + m->family);
            }
            d.ap += m->ap;
            d.acc += m->acc;
            d.count += m->count;
        }
        d.ap /= static_cast<double>(members.size());
        d.acc /= static_cast<double>(members.size());
        rep.grouped.push_back(std::move(d));
    }

    std::map<std::string, FamilyMetrics> fam;
    for (const auto& g : rep.grouped) {
        rep.map += g.ap;
        rep.overall_acc += g.acc;
        rep.samples += g.count;
        if (g.family == kFamilyOther) continue;
        auto& f = fam[g.family];
        f.family = g.family;
        f.ap += g.ap;
        f.acc += g.acc;
        ++f.datasets;
    }
    rep.map /= static_cast<double>(rep.grouped.size());
    rep.overall_acc /= static_cast<double>(rep.grouped.size());
    for (auto& [name, f] : fam) {
        f.ap /= static_cast<double>(f.datasets);
        f.acc /= static_cast<double>(f.datasets);
        rep.families.push_back(f);
    }
    return rep;
}

inline std::string format6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

/// "dataset<TAB>AP<TAB>ACC" rows, then "family:<name>" rows, then mAP and overall_acc.
inline std::string format_report(const EvalReport& rep) {
    std::string s;
    for (const auto& d : rep.datasets) s += d.name + '\t' + format6(d.ap) + '\t' + format6(d.acc) + '\n';
    for (const auto& f : rep.families) s += "family:" + f.family + '\t' + format6(f.ap) + '\t' + format6(f.acc) + '\n';
    s += "mAP\t" + format6(rep.map) + '\n';
    s += "overall_acc\t" + format6(rep.overall_acc) + '\n';
    return s;
}

// ---------------------------------------------------------------------------
// attribution

struct ConfusionMatrix {
    std::vector<std::string> classes;
    std::vector<std::vector<std::size_t>> counts;  // [true][predicted]

    explicit ConfusionMatrix(std::vector<std::string> names)
        : classes(std::move(names)), counts(classes.size(), std::vector<std::size_t>(classes.size(), 0)) {}

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& r : counts) t += std::accumulate(r.begin(), r.end(), std::size_t{0});
        return t;
    }
    std::size_t trace() const {
        std::size_t t = 0;
        for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::string>& classes, std::span<const std::size_t> truth,
                                        std::span<const std::size_t> predicted) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
    ConfusionMatrix m(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= classes.size() || predicted[i] >= classes.size()) {
            throw std::invalid_argument("confusion_matrix: unknown class index at sample " + std::to_string(i));
        }
        ++m.counts[truth[i]][predicted[i]];
    }
    return m;
}

struct AttributionMetrics {
    double exact = 0.0;
    double family = 0.0;
};

/// A prediction counts at family level iff predicted and true classes share a family.
inline AttributionMetrics attribution_metrics(const ConfusionMatrix& m, const std::map<std::string, std::string>& family_of) {
    const std::size_t total = m.total();
    if (total == 0) throw UndefinedMetric("attribution metrics of an empty confusion matrix");
    std::vector<std::string> fam;
    for (const auto& c : m.classes) {
        const auto it = family_of.find(c);
        if (it == family_of.end()) throw std::invalid_argument("attribution_metrics: unknown class '" + c + "'");
        fam.push_back(it->second);
    }
    std::size_t same_family = 0;
    for (std::size_t i = 0; i < m.classes.size(); ++i)
        for (std::size_t j = 0; j < m.classes.size(); ++j)
            if (fam[i] == fam[j]) same_family += m.counts[i][j];
    return {static_cast<double>(m.trace()) / static_cast<double>(total),
            static_cast<double>(same_family) / static_cast<double>(total)};
}

/// Header line of class names, then one line of integer counts per true class.
inline std::string format_confusion(const ConfusionMatrix& m) {
    std::string s;
    for (std::size_t i = 0; i < m.classes.size(); ++i) s += (i ? "\t" : "") + m.classes[i];
    s += '\n';
    for (const auto& row : m.counts) {
        for (std::size_t j = 0; j < row.size(); ++j) s += (j ? "\t" : "") + std::to_string(row[j]);
        s += '\n';
    }
    return s;
}

// ---------------------------------------------------------------------------

struct SubsetMetrics {
    double ap = 0.0;
    double acc = 0.0;
    std::size_t count = 0;
};

/// Metrics on the samples that carry (`present` = true) or lack the tag.
inline SubsetMetrics tag_subset_eval(const std::vector<ScoredSample>& samples, std::string_view tag, bool present = true) {
    std::vector<ScoredSample> subset;
    for (const auto& s : samples)
        if (s.has_tag(tag) == present) subset.push_back(s);
    if (subset.empty()) throw UndefinedMetric("tag subset '" + std::string(tag) + "' is empty");
    return {average_precision(subset), accuracy(subset), subset.size()};
}

}  // namespace adaptprompt

#endif
