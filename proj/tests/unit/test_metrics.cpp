// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace ap = adaptprompt;

namespace {

std::vector<ap::ScoredSample> samples(const std::vector<double>& scores, const std::vector<bool>& fake) {
    std::vector<ap::ScoredSample> out;
    for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({scores[i], fake[i], "g", "F", {}});
    return out;
}

ap::DatasetMetrics row(std::string name, double ap_value, double acc = 0.5) { return {std::move(name), "", ap_value, acc, 10}; }

}  // namespace

TEST(AveragePrecision, HandCase) {
    const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
    EXPECT_NEAR(ap::average_precision(s, {true, false, true, false}), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
    EXPECT_NEAR(ap::average_precision(s, {true, false, true, false}), 0.833333, 1e-6);
}

TEST(AveragePrecision, PerfectRankingIsOne) {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
    EXPECT_DOUBLE_EQ(ap::average_precision(s, {true, true, false, false}), 1.0);
}

TEST(AveragePrecision, SinglePositiveLastIsOneOverN) {
    for (std::size_t n : {2u, 5u, 17u}) {
        std::vector<double> s(n);
        std::vector<bool> pos(n, false);
        for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(n - i);
        pos[n - 1] = true;
        EXPECT_NEAR(ap::average_precision(s, pos), 1.0 / static_cast<double>(n), 1e-15);
    }
}

TEST(AveragePrecision, TiesKeepInputOrder) {
    const std::vector<double> s{0.5, 0.5};
    EXPECT_DOUBLE_EQ(ap::average_precision(s, {true, false}), 1.0);
    EXPECT_DOUBLE_EQ(ap::average_precision(s, {false, true}), 0.5);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
    ap::Rng rng(51);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<bool> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Coarse grid so that ties occur.
            s[i] = static_cast<double>(rng.below(10)) / 10.0;
            pos[i] = rng.uniform() < 0.5;
        }
        pos[0] = true;
        pos[1] = false;
        EXPECT_NEAR(ap::average_precision(s, pos), oracle::brute_force_ap(s, pos), 1e-9) << "trial " << trial;
    }
}

TEST(AveragePrecision, InvariantUnderIncreasingTransform) {
    ap::Rng rng(52);
    std::vector<double> s(40), t(40);
    std::vector<bool> pos(40);
    for (std::size_t i = 0; i < 40; ++i) {
        s[i] = rng.uniform();
        t[i] = std::exp(3.0 * s[i]) - 7.0;
        pos[i] = i % 3 == 0;
    }
    EXPECT_DOUBLE_EQ(ap::average_precision(s, pos), ap::average_precision(t, pos));
}

TEST(AveragePrecision, SingleClassIsUndefined) {
    const std::vector<double> s{0.1, 0.2};
    EXPECT_THROW((void)ap::average_precision(s, {true, true}), ap::UndefinedMetric);
    EXPECT_THROW((void)ap::average_precision(s, {false, false}), ap::UndefinedMetric);
    EXPECT_THROW((void)ap::average_precision(s, {true}), std::invalid_argument);
}

TEST(Accuracy, Examples) {
    EXPECT_DOUBLE_EQ(ap::accuracy(samples({1.0, 1.0}, {true, true})), 1.0);
    EXPECT_DOUBLE_EQ(ap::accuracy(samples({0.5, 0.5}, {true, true})), 0.0);
    EXPECT_DOUBLE_EQ(ap::accuracy(samples({0.6, 0.4}, {true, true})), 0.5);
    EXPECT_DOUBLE_EQ(ap::accuracy(samples({0.5}, {false})), 1.0);
    EXPECT_THROW((void)ap::accuracy({}), ap::UndefinedMetric);
}

TEST(Aggregate, SubconfigGroupContributesOnce) {
    const std::map<std::string, std::string> fam{
        {"glide_50_27", "Diffusion"}, {"glide_100_10", "Diffusion"}, {"glide_100_27", "Diffusion"}, {"biggan", "GAN"}};
    const std::map<std::string, std::string> groups{
        {"glide_50_27", "glide"}, {"glide_100_10", "glide"}, {"glide_100_27", "glide"}};
    const auto rep = ap::aggregate({row("glide_50_27", 0.9), row("glide_100_10", 0.8), row("glide_100_27", 0.7),
                                    row("biggan", 0.6)},
                                   fam, groups);
    ASSERT_EQ(rep.grouped.size(), 2u);
    EXPECT_EQ(rep.grouped[1].name, "glide");
    EXPECT_NEAR(rep.grouped[1].ap, 0.8, 1e-12);
    EXPECT_NEAR(rep.map, 0.7, 1e-12);
    ASSERT_EQ(rep.families.size(), 2u);
    EXPECT_EQ(rep.families[0].family, "Diffusion");
    EXPECT_NEAR(rep.families[0].ap, 0.8, 1e-12);
    EXPECT_NEAR(rep.families[1].ap, 0.6, 1e-12);
}

TEST(Aggregate, OneDatasetPerFamilyPassesThrough) {
    const auto rep = ap::aggregate({row("a", 0.7, 0.6), row("b", 0.9, 0.8)}, {{"a", "GAN"}, {"b", "Diffusion"}});
    EXPECT_DOUBLE_EQ(rep.families[0].ap, 0.9);
    EXPECT_DOUBLE_EQ(rep.families[1].ap, 0.7);
    EXPECT_DOUBLE_EQ(rep.families[1].acc, 0.6);
}

TEST(Aggregate, OtherFamilyExcludedFromFamiliesButInMap) {
    const auto rep = ap::aggregate({row("a", 0.6), row("b", 1.0)}, {{"a", "GAN"}, {"b", ap::kFamilyOther}});
    ASSERT_EQ(rep.families.size(), 1u);
    EXPECT_EQ(rep.families[0].family, "GAN");
    EXPECT_DOUBLE_EQ(rep.map, 0.8);
}

TEST(Aggregate, PermutationInvariant) {
    std::vector<ap::DatasetMetrics> rows{row("a", 0.91, 0.8), row("b", 0.62, 0.55), row("c", 0.77, 0.7),
                                         row("d", 0.85, 0.9)};
    const std::map<std::string, std::string> fam{{"a", "GAN"}, {"b", "GAN"}, {"c", "Diffusion"}, {"d", "Other"}};
    const std::string ref = ap::format_report(ap::aggregate(rows, fam));
    std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.name > y.name; });
    do {
        EXPECT_EQ(ap::format_report(ap::aggregate(rows, fam)), ref);
    } while (std::next_permutation(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.name < y.name; }));
}

TEST(Aggregate, UnassignedDatasetRejected) {
    EXPECT_THROW((void)ap::aggregate({row("a", 0.5)}, {}), std::invalid_argument);
    EXPECT_THROW((void)ap::aggregate({}, {}), ap::UndefinedMetric);
}

TEST(Attribution, ToyMatrix) {
    const std::vector<std::string> classes{"x", "y", "z"};
    std::vector<std::size_t> truth, pred;
    const std::size_t m[3][3] = {{2, 1, 0}, {0, 3, 0}, {1, 0, 3}};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < m[i][j]; ++k) {
                truth.push_back(i);
                pred.push_back(j);
            }
    const auto cm = ap::confusion_matrix(classes, truth, pred);
    EXPECT_EQ(cm.total(), 10u);
    EXPECT_EQ(cm.trace(), 8u);
    const auto am = ap::attribution_metrics(cm, {{"x", "A"}, {"y", "A"}, {"z", "B"}});
    EXPECT_DOUBLE_EQ(am.exact, 0.8);
    EXPECT_DOUBLE_EQ(am.family, 0.9);
    EXPECT_EQ(ap::format_confusion(cm), "x\ty\tz\n2\t1\t0\n0\t3\t0\n1\t0\t3\n");
}

TEST(Attribution, IntraFamilyErrorsAndIdentity) {
    const std::vector<std::string> classes{"x", "y"};
    const std::map<std::string, std::string> fam{{"x", "A"}, {"y", "A"}};
    const std::vector<std::size_t> truth{0, 1, 0};
    const std::vector<std::size_t> swapped{1, 0, 1};
    auto am = ap::attribution_metrics(ap::confusion_matrix(classes, truth, swapped), fam);
    EXPECT_DOUBLE_EQ(am.exact, 0.0);
    EXPECT_DOUBLE_EQ(am.family, 1.0);
    am = ap::attribution_metrics(ap::confusion_matrix(classes, truth, truth), fam);
    EXPECT_DOUBLE_EQ(am.exact, 1.0);
    EXPECT_DOUBLE_EQ(am.family, 1.0);
}

TEST(Attribution, ExactNeverExceedsFamily) {
    ap::Rng rng(53);
    const std::vector<std::string> classes{"a", "b", "c", "d"};
    const std::map<std::string, std::string> fam{{"a", "P"}, {"b", "P"}, {"c", "Q"}, {"d", "Q"}};
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::size_t> t(30), p(30);
        for (std::size_t i = 0; i < 30; ++i) {
            t[i] = rng.below(4);
            p[i] = rng.below(4);
        }
        const auto am = ap::attribution_metrics(ap::confusion_matrix(classes, t, p), fam);
        EXPECT_LE(am.exact, am.family);
    }
}

TEST(Attribution, UnknownClassRejected) {
    const std::vector<std::size_t> t{0}, p{2};
    EXPECT_THROW((void)ap::confusion_matrix({"a", "b"}, t, p), std::invalid_argument);
    const std::vector<std::size_t> ok{0};
    EXPECT_THROW((void)ap::attribution_metrics(ap::confusion_matrix({"a", "b"}, ok, ok), {{"a", "P"}}), std::invalid_argument);
}

TEST(TagSubset, MatchesFilteredRecomputation) {
    ap::Rng rng(54);
    std::vector<ap::ScoredSample> all;
    for (std::size_t i = 0; i < 60; ++i) {
        ap::ScoredSample s{rng.uniform(), i % 2 == 0, "g", "F", {}};
        if (i % 3 == 0) s.tags.push_back("person");
        all.push_back(s);
    }
    for (bool present : {true, false}) {
        std::vector<ap::ScoredSample> manual;
        for (const auto& s : all)
            if (s.has_tag("person") == present) manual.push_back(s);
        const auto m = ap::tag_subset_eval(all, "person", present);
        EXPECT_DOUBLE_EQ(m.ap, ap::average_precision(manual));
        EXPECT_DOUBLE_EQ(m.acc, ap::accuracy(manual));
        EXPECT_EQ(m.count, manual.size());
    }
}

TEST(TagSubset, TagOnEverySampleEqualsGlobal) {
    auto all = samples({0.9, 0.2, 0.7, 0.4}, {true, false, false, true});
    for (auto& s : all) s.tags = {"indoor"};
    const auto m = ap::tag_subset_eval(all, "indoor");
    EXPECT_DOUBLE_EQ(m.ap, ap::average_precision(all));
    EXPECT_DOUBLE_EQ(m.acc, ap::accuracy(all));
}

TEST(TagSubset, EmptyOrSingleClassSubsetIsUndefined) {
    auto all = samples({0.9, 0.2}, {true, false});
    EXPECT_THROW((void)ap::tag_subset_eval(all, "indoor"), ap::UndefinedMetric);
    all[0].tags = {"indoor"};
    EXPECT_THROW((void)ap::tag_subset_eval(all, "indoor"), ap::UndefinedMetric);
}
