// SPDX-License-Identifier: Apache-2.0

#include <functional>
#include <regex>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace ap = adaptprompt;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(KeyValues, ParsesCommentsBlankLinesAndWhitespace) {
    const auto kv = ap::parse_key_values("# header\n\n  seed = 7 \nout=dir\r\n\tlearning_rate =0.5\n# tail\n");
    EXPECT_EQ(kv, (std::map<std::string, std::string>{{"seed", "7"}, {"out", "dir"}, {"learning_rate", "0.5"}}));
}

TEST(KeyValues, LaterKeyWinsAndValuesKeepInnerText) {
    const auto kv = ap::parse_key_values("a = 1\na = 2\nb = x = y\nc =\n");
    EXPECT_EQ(kv.at("a"), "2");
    EXPECT_EQ(kv.at("b"), "x = y");
    EXPECT_EQ(kv.at("c"), "");
}

TEST(KeyValues, MalformedLinesReportOriginAndLine) {
    EXPECT_THROW(ap::parse_key_values("a = 1\nnot a pair\n"), ap::FormatError);
    EXPECT_NE(error_of([] { ap::parse_key_values("a = 1\nnot a pair\n", "run.cfg"); }).find("run.cfg:2"), std::string::npos);
    EXPECT_NE(error_of([] { ap::parse_key_values("\n\n = 3\n", "x"); }).find("x:3"), std::string::npos);
}

TEST(Split, KeepsEmptyFields) {
    EXPECT_EQ(ap::split("a,,b,", ','), (std::vector<std::string>{"a", "", "b", ""}));
    EXPECT_EQ(ap::split("", ','), (std::vector<std::string>{""}));
}

TEST(TypedValues, RejectMalformedNumbers) {
    EXPECT_EQ(ap::parse_u64("k", "42"), 42u);
    EXPECT_THROW(ap::parse_u64("k", "-1"), std::invalid_argument);
    EXPECT_THROW(ap::parse_u64("k", "4x"), std::invalid_argument);
    EXPECT_THROW(ap::parse_u64("k", ""), std::invalid_argument);
    EXPECT_DOUBLE_EQ(ap::parse_double("k", "1e-3"), 1e-3);
    EXPECT_THROW(ap::parse_double("k", "0.1.2"), std::invalid_argument);
    EXPECT_THROW(ap::parse_double("k", "abc"), std::invalid_argument);
    EXPECT_EQ(ap::parse_double_list("k", "0, 0.5,2"), (std::vector<double>{0.0, 0.5, 2.0}));
    EXPECT_TRUE(ap::parse_double_list("k", " ").empty());
    EXPECT_THROW(ap::parse_double_list("k", "1,,2"), std::invalid_argument);
    EXPECT_NE(error_of([] { ap::parse_u64("epochs", "ten"); }).find("epochs"), std::string::npos);
}

TEST(RunConfig, DefaultsMatchLibraryDefaults) {
    const ap::RunConfig cfg;
    const ap::BackboneConfig bc = cfg.backbone_config();
    const ap::BackboneConfig lib;
    EXPECT_EQ(bc.image_size, 32u);
    EXPECT_EQ(bc.patch_size, 8u);
    EXPECT_EQ(bc.vision_width, 64u);
    EXPECT_EQ(bc.vision_layers, 4u);
    EXPECT_EQ(bc.vision_heads, 4u);
    EXPECT_EQ(bc.text_width, 48u);
    EXPECT_EQ(bc.text_layers, 2u);
    EXPECT_EQ(bc.embed_dim, 32u);
    EXPECT_EQ(bc.max_seq_len, 24u);
    EXPECT_EQ(bc.variant, ap::Variant::v0);
    EXPECT_EQ(lib.variant, ap::Variant::v0);

    const ap::TrainConfig tc = cfg.train_config();
    const ap::TrainConfig tlib;
    EXPECT_EQ(tc.mode, ap::TrainMode::adaptprompt);
    EXPECT_EQ(tc.variant, tlib.variant);
    EXPECT_DOUBLE_EQ(tc.learning_rate, 1e-3);
    EXPECT_DOUBLE_EQ(tc.alpha, 0.2);
    EXPECT_EQ(tc.context_len, 16u);
    EXPECT_EQ(tc.batch_size, 32u);
    EXPECT_EQ(tc.resolved_d_mid(bc), 8u);
    EXPECT_EQ(tc.output_projection, ap::OutputProjection::automatic);
}

TEST(RunConfig, MergeOverridesInOrderAndRejectsUnknownKeys) {
    ap::RunConfig cfg;
    cfg.merge({{"seed", "3"}, {"variant", "v2"}}, "file");
    cfg.merge({{"seed", "9"}}, "command line");
    EXPECT_EQ(cfg.get_u64("seed"), 9u);
    EXPECT_EQ(cfg.train_config().variant, ap::Variant::v2);
    EXPECT_EQ(cfg.backbone_config().variant, ap::Variant::v2);
    const std::string msg = error_of([&] { cfg.merge({{"sed", "1"}}, "command line"); });
    EXPECT_NE(msg.find("unknown key 'sed'"), std::string::npos);
    EXPECT_THROW(cfg.get("nope"), std::invalid_argument);
}

TEST(RunConfig, MergeFileThenFlags) {
    oracle::TempDir dir;
    ap::write_file_atomic(dir / "a.cfg", "# settings\nepochs = 4\nalpha = 0.5\n");
    ap::RunConfig cfg;
    cfg.merge_file(dir / "a.cfg");
    cfg.merge({{"alpha", "0.1"}}, "command line");
    EXPECT_EQ(cfg.train_config().epochs, 4u);
    EXPECT_DOUBLE_EQ(cfg.train_config().alpha, 0.1);

    ap::write_file_atomic(dir / "b.cfg", "epochs = 4\nbogus = 1\n");
    EXPECT_THROW(cfg.merge_file(dir / "b.cfg"), std::invalid_argument);
    EXPECT_THROW(cfg.merge_file(dir / "missing.cfg"), std::exception);
}

TEST(RunConfig, TypedGettersReportBadValues) {
    ap::RunConfig cfg;
    cfg.merge({{"epochs", "many"}, {"variant", "v7"}, {"mode", "full"}}, "t");
    EXPECT_THROW(cfg.get_u64("epochs"), std::invalid_argument);
    EXPECT_THROW(cfg.backbone_config(), std::invalid_argument);
    ap::RunConfig c2;
    c2.merge({{"mode", "full"}}, "t");
    EXPECT_THROW(c2.train_config(), std::invalid_argument);
}

TEST(RunConfig, SerializeListsEveryKeyOnceInOrder) {
    const ap::RunConfig cfg;
    const std::string s = cfg.serialize();
    const auto kv = ap::parse_key_values(s);
    EXPECT_EQ(kv.size(), ap::default_settings().size());
    for (const auto& [k, v] : ap::default_settings()) EXPECT_EQ(kv.at(k), v) << k;
}

TEST(RunConfig, HashIsFnv1aOfSerializedSettings) {
    ap::RunConfig cfg;
    EXPECT_EQ(cfg.hash(), fnv1a(cfg.serialize()));
    const std::uint64_t before = cfg.hash();
    EXPECT_EQ(ap::RunConfig().hash(), before);
    cfg.merge({{"seed", "1"}}, "t");
    EXPECT_NE(cfg.hash(), before);
    cfg.merge({{"seed", "0"}}, "t");
    EXPECT_EQ(cfg.hash(), before);
}

TEST(RunConfig, HeaderLineFormat) {
    const std::string h = ap::RunConfig().header_line();
    EXPECT_TRUE(std::regex_match(h, std::regex("# config_hash=[0-9a-f]{16}\n")));
}

TEST(RunConfig, TrainConfigRejectsProjectionConflicts) {
    ap::RunConfig cfg;
    cfg.merge({{"variant", "v0"}, {"output_projection", "on"}}, "t");
    const ap::TrainConfig tc = cfg.train_config();
    EXPECT_THROW(tc.validate(cfg.backbone_config()), std::invalid_argument);
    ap::RunConfig c2;
    c2.merge({{"variant", "v2"}, {"output_projection", "off"}}, "t");
    EXPECT_THROW(c2.train_config().validate(c2.backbone_config()), std::invalid_argument);
}
