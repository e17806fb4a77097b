// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace ap = adaptprompt;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int status = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunResult run_cli(const oracle::TempDir& dir, const std::string& args) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string("\"") + ADAPTPROMPT_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

const char* kSmallCorpus =
    " --synth_train_real 40 --synth_train_fake 20 --synth_test_real 20 --synth_test_fake 10 --synth_side 32";

/// Writes a small corpus, backbone and vocabulary under dir/out.
void prepare(const oracle::TempDir& dir) {
    const std::string out = " --out \"" + (dir / "out").string() + "\"";
    ASSERT_EQ(run_cli(dir, "synth" + out + kSmallCorpus).status, 0);
    ASSERT_EQ(run_cli(dir, "init_backbone" + out).status, 0);
}

}  // namespace

TEST(Cli, EvalOnEmptyManifestFailsWithOneLineDiagnostic) {
    oracle::TempDir dir;
    ap::write_file_atomic(dir / "empty.tsv", "# nothing here\n");
    const RunResult r = run_cli(dir, "eval --out \"" + (dir / "out").string() + "\" --eval_manifest \"" +
                                         (dir / "empty.tsv").string() + "\"");
    EXPECT_NE(r.status, 0);
    EXPECT_EQ(count_lines(r.err), 1u);
    EXPECT_NE(r.err.find("empty manifest"), std::string::npos) << r.err;
}

TEST(Cli, UnknownKeysAreRejected) {
    oracle::TempDir dir;
    ap::write_file_atomic(dir / "bad.cfg", "seed = 1\nlearning_rat = 0.1\n");
    const RunResult from_file = run_cli(dir, "count --config \"" + (dir / "bad.cfg").string() + "\" --out \"" +
                                                 (dir / "out").string() + "\"");
    EXPECT_NE(from_file.status, 0);
    EXPECT_EQ(count_lines(from_file.err), 1u);
    EXPECT_NE(from_file.err.find("unknown key 'learning_rat'"), std::string::npos) << from_file.err;

    EXPECT_NE(run_cli(dir, "count --learning_rat 0.1").status, 0);
    EXPECT_NE(run_cli(dir, "frobnicate").status, 0);
}

TEST(Cli, ConflictsAndMissingFilesFail) {
    oracle::TempDir dir;
    const std::string out = " --out \"" + (dir / "out").string() + "\"";
    const RunResult conflict = run_cli(dir, "count --variant v0 --output_projection on" + out);
    EXPECT_NE(conflict.status, 0);
    EXPECT_EQ(count_lines(conflict.err), 1u);
    EXPECT_NE(conflict.err.find("v0"), std::string::npos);

    const RunResult missing = run_cli(dir, "train --manifest \"" + (dir / "none.tsv").string() + "\"" + out);
    EXPECT_NE(missing.status, 0);
    EXPECT_EQ(count_lines(missing.err), 1u);
}

TEST(Cli, CountAtDefaultsIsBelowHalfPercent) {
    oracle::TempDir dir;
    const RunResult r = run_cli(dir, "count --out \"" + (dir / "out").string() + "\"");
    ASSERT_EQ(r.status, 0) << r.err;

    const ap::RunConfig defaults;
    const ap::BackboneConfig bc = defaults.backbone_config();
    const std::size_t d_in = bc.embed_dim, d_mid = d_in / 4, m = 16, d_e = bc.text_width;
    const std::size_t trainable = 2 * d_in * d_mid + m * d_e + 1;
    const std::size_t total = ap::parameter_count(bc) + trainable;
    EXPECT_EQ(trainable, 1281u);

    const auto kv = ap::parse_key_values([&] {
        std::string s = slurp(dir / "out" / "params.tsv");
        for (char& c : s)
            if (c == '\t') c = '=';
        return s;
    }());
    EXPECT_EQ(std::stoull(kv.at("trainable")), trainable);
    EXPECT_EQ(std::stoull(kv.at("total")), total);
    const double ratio = std::stod(kv.at("ratio"));
    EXPECT_NEAR(ratio, static_cast<double>(trainable) / static_cast<double>(total), 1e-9);
    EXPECT_LT(ratio, 0.005);
}

TEST(Cli, TrainTwiceGivesIdenticalStateFiles) {
    oracle::TempDir dir;
    prepare(dir);
    const fs::path out = dir / "out";
    const fs::path state = out / "state.apwt";
    std::string bytes[2], sidecar[2];
    for (int i = 0; i < 2; ++i) {
        fs::remove(state);
        const RunResult r = run_cli(dir, "train --out \"" + out.string() + "\" --variant v2 --epochs 2 --batch_size 16");
        ASSERT_EQ(r.status, 0) << r.err;
        bytes[i] = slurp(state);
        sidecar[i] = slurp(state.string() + ".cfg");
    }
    EXPECT_FALSE(bytes[0].empty());
    EXPECT_EQ(bytes[0], bytes[1]);
    EXPECT_EQ(sidecar[0], sidecar[1]);
}

TEST(Cli, EveryTextOutputStartsWithTheConfigHash) {
    oracle::TempDir dir;
    prepare(dir);
    const std::string out = " --out \"" + (dir / "out").string() + "\"";
    const std::string small = " --epochs 1 --batch_size 16 --blur_grid 0,1 --jpeg_grid 90";
    for (const char* cmd : {"train", "eval --tag outdoor", "attribute", "spectrum", "robust", "export",
                            "export --stage raw_feature", "count"}) {
        const RunResult r = run_cli(dir, std::string(cmd) + out + small);
        ASSERT_EQ(r.status, 0) << cmd << ": " << r.err;
    }

    std::size_t checked = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir / "out")) {
        if (!entry.is_regular_file()) continue;
        const fs::path& p = entry.path();
        if (p.extension() == ".pgm" || p.extension() == ".apwt" || p.filename() == "vocab.txt") continue;
        const std::string text = slurp(p);
        EXPECT_EQ(text.rfind("# config_hash=", 0), 0u) << p;
        ++checked;
    }
    EXPECT_GE(checked, 15u);

    const std::string report = slurp(dir / "out" / "report.tsv");
    EXPECT_NE(report.find("tag:outdoor:has\t"), std::string::npos);
    const std::string spikes = slurp(dir / "out" / "spikes.tsv");
    for (const char* name : {"real\t", "gan_a\t", "gan_b\t", "diff_a\t", "diff_b\t"})
        EXPECT_NE(spikes.find(name), std::string::npos) << name;
}

TEST(Cli, RunConfigLogMatchesResolvedSettings) {
    oracle::TempDir dir;
    const RunResult r = run_cli(dir, "count --seed 5 --out \"" + (dir / "out").string() + "\"");
    ASSERT_EQ(r.status, 0) << r.err;
    ap::RunConfig expect;
    expect.merge({{"seed", "5"}, {"out", (dir / "out").string()}}, "t");
    EXPECT_EQ(slurp(dir / "out" / "run_count.cfg"), expect.header_line() + expect.serialize());
    EXPECT_EQ(slurp(dir / "out" / "params.tsv").rfind(expect.header_line(), 0), 0u);
}
