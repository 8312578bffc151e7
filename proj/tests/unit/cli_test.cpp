// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include <json.hpp>

#include "cli.hpp"
#include "fixtures.hpp"
#include "taskmerge/merge_methods.hpp"
#include "taskmerge/reports.hpp"
#include "taskmerge/task_vector.hpp"

using namespace taskmerge;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

Checkpoint ckpt(std::vector<double> w, std::vector<double> b, Dtype dt = Dtype::F32) {
    Checkpoint c;
    c.entries.emplace("w", Tensor::from_values(dt, {w.size()}, w));
    c.entries.emplace("b", Tensor::from_values(dt, {b.size()}, b));
    return c;
}

class CliTest : public ::testing::Test {
protected:
    fixtures::TempDir dir{"cli"};
    std::string base, ft1, ft2;

    void SetUp() override {
        base = (dir / "base.safetensors").string();
        ft1 = (dir / "cars.safetensors").string();
        ft2 = (dir / "dtd.safetensors").string();
        save_checkpoint(ckpt({0, 0, 0}, {1, 1}), base);
        save_checkpoint(ckpt({1, 2, 3}, {1, 1.5}), ft1);
        save_checkpoint(ckpt({3, -2, 0}, {1, 0}), ft2);
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }
};

} // namespace

TEST(Cli, HScorePrintsOneDecimal) {
    const auto r = run({"hscore", "69.1", "51.3"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "58.9\n");
    EXPECT_EQ(run({"hscore", "0", "51.3"}).code, cli::kInvalidArguments);
    EXPECT_EQ(run({"hscore", "abc", "51.3"}).code, cli::kInvalidArguments);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, cli::kInvalidArguments);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kInvalidArguments);
    const auto help = run({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("merge"), std::string::npos);
}

TEST(Cli, Prop1Report) {
    const auto r = run({"prop1", "--seed", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("K"), 8);
    EXPECT_TRUE(j.at("passed").get<bool>());
    const auto many = nlohmann::json::parse(run({"prop1", "--trials", "20"}).out);
    EXPECT_EQ(many.at("trials"), 20);
    EXPECT_GE(many.at("pass_count").get<int>(), 19);
}

TEST_F(CliTest, UnknownMethodShowsUsage) {
    const auto r = run({"merge", "--method", "fisher", "--base", base, "--finetuned", ft1, "--out", path("m.st")});
    EXPECT_EQ(r.code, cli::kInvalidArguments);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_FALSE(std::filesystem::exists(path("m.st")));
}

TEST_F(CliTest, ExitCodes) {
    EXPECT_EQ(run({"merge", "--method", "task-arithmetic", "--base", path("missing.st"), "--finetuned", ft1, "--out",
                   path("m.st")})
                  .code,
              cli::kIoError);
    {
        std::ofstream(path("bad.st")) << "not a safetensors file";
    }
    EXPECT_EQ(run({"diff", "--base", base, "--finetuned", path("bad.st"), "--out", path("t.st")}).code,
              cli::kIoError);
    save_checkpoint(ckpt({0, 0}, {1, 1}), path("other.st"));
    EXPECT_EQ(run({"diff", "--base", base, "--finetuned", path("other.st"), "--out", path("t.st")}).code,
              cli::kIncompatible);
    EXPECT_EQ(run({"merge", "--method", "ties", "--base", base, "--finetuned", ft1, "--out", path("m.st"), "--eta",
                   "2"})
                  .code,
              cli::kInvalidArguments);
    EXPECT_EQ(run({"merge", "--method", "ties", "--base", base, "--finetuned", ft1, "--out", ft1}).code,
              cli::kInvalidArguments);
}

TEST_F(CliTest, DiffWritesTaskVector) {
    const auto r = run({"diff", "--base", base, "--finetuned", ft1, "--out", path("cars.tv")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    const TaskVector tv = load_task_vector(path("cars.tv"));
    EXPECT_EQ(tv.id, "cars");
    EXPECT_EQ(tv.deltas.entries.at("w").to_doubles(), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(tv.deltas.entries.at("b").to_doubles(), (std::vector<double>{0, 0.5}));
}

TEST_F(CliTest, TaskArithmeticMatchesLibraryBitwise) {
    const auto r = run({"merge", "--method", "task-arithmetic", "--base", base, "--finetuned", ft1, "--finetuned", ft2,
                        "--lambda", "0.3", "--mask", "lwptv", "--eta", "0.5", "--out", path("m.st"), "--report",
                        path("m.json")});
    ASSERT_EQ(r.code, 0) << r.err;

    const Checkpoint b = load_checkpoint(base);
    const std::vector<TaskVector> tvs{diff(load_checkpoint(ft1), b, "cars"), diff(load_checkpoint(ft2), b, "dtd")};
    const SharedMask mask = or_masks(threshold_mask(compute_saliency(tvs), 0.5));
    const Checkpoint want = task_arithmetic(b, tvs, 0.3, mask);
    const Checkpoint got = load_checkpoint(path("m.st"));
    EXPECT_EQ(got.entries, want.entries);
    ASSERT_TRUE(got.metadata.has_value());
    const auto recipe = nlohmann::json::parse(got.metadata->at(kRecipeKey));
    EXPECT_EQ(recipe.at("method"), "task-arithmetic");
    EXPECT_EQ(recipe.at("task_ids"), (std::vector<std::string>{"cars", "dtd"}));

    const auto report = read_json_file(path("m.json"));
    EXPECT_EQ(report.at("mask_ones"), mask.ones());
    EXPECT_EQ(report.at("pruned").size(), 2u);
}

TEST_F(CliTest, ConfigFileWithFlagPrecedence) {
    const nlohmann::json cfg = {{"method", "task-arithmetic"}, {"base", base},       {"finetuned", {ft1, ft2}},
                                {"lambda", 0.3},               {"out", path("a.st")}};
    write_json_file(cfg, path("cfg.json"));
    ASSERT_EQ(run({"merge", "--config", path("cfg.json")}).code, 0);
    ASSERT_EQ(run({"merge", "--config", path("cfg.json"), "--lambda", "0.5", "--out", path("b.st")}).code, 0);
    const Checkpoint b = load_checkpoint(base);
    const std::vector<TaskVector> tvs{diff(load_checkpoint(ft1), b), diff(load_checkpoint(ft2), b)};
    EXPECT_EQ(load_checkpoint(path("a.st")).entries, task_arithmetic(b, tvs, 0.3).entries);
    EXPECT_EQ(load_checkpoint(path("b.st")).entries, task_arithmetic(b, tvs, 0.5).entries);

    write_json_file({{"no_such_key", 1}}, path("bad.json"));
    EXPECT_EQ(run({"merge", "--config", path("bad.json")}).code, cli::kInvalidArguments);
}

TEST_F(CliTest, TaskVectorInputsCheckProvenance) {
    ASSERT_EQ(run({"diff", "--base", base, "--finetuned", ft1, "--out", path("cars.tv")}).code, 0);
    EXPECT_EQ(run({"merge", "--method", "ties", "--base", base, "--taskvec", path("cars.tv"), "--out", path("m.st")})
                  .code,
              0);
    // The fingerprint covers the header, so a base differing only in values passes;
    // one whose header differs is rejected.
    Checkpoint other = ckpt({0, 0, 0}, {1, 1});
    other.metadata = Metadata{{"revision", "2"}};
    save_checkpoint(other, path("base2.st"));
    EXPECT_EQ(run({"merge", "--method", "ties", "--base", path("base2.st"), "--taskvec", path("cars.tv"), "--out",
                   path("m2.st")})
                  .code,
              cli::kIncompatible);
}

TEST_F(CliTest, MaskCommandRoundTripsThroughMerge) {
    const auto r = run({"mask", "--base", base, "--finetuned", ft1, "--finetuned", ft2, "--eta", "0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("shared_mask").at("layer_names"), (std::vector<std::string>{"b", "w"}));
    {
        std::ofstream(path("mask.json")) << r.out;
    }
    ASSERT_EQ(run({"merge", "--method", "ties", "--base", base, "--finetuned", ft1, "--finetuned", ft2, "--mask",
                   path("mask.json"), "--out", path("x.st")})
                  .code,
              0);
    ASSERT_EQ(run({"merge", "--method", "ties", "--base", base, "--finetuned", ft1, "--finetuned", ft2, "--mask",
                   "lwptv", "--eta", "0.5", "--out", path("y.st")})
                  .code,
              0);
    EXPECT_EQ(load_checkpoint(path("x.st")).entries, load_checkpoint(path("y.st")).entries);
    EXPECT_EQ(run({"merge", "--method", "ties", "--base", base, "--finetuned", ft1, "--mask", "bogus", "--out",
                   path("z.st")})
                  .code,
              cli::kInvalidArguments);
}

TEST_F(CliTest, SaliencyCommand) {
    const auto r = run({"saliency", "--base", base, "--finetuned", ft1, "--finetuned", ft2});
    ASSERT_EQ(r.code, 0) << r.err;
    const SaliencyMatrix s = saliency_from_json(nlohmann::json::parse(r.out));
    EXPECT_EQ(s.task_ids, (std::vector<std::string>{"cars", "dtd"}));
    EXPECT_EQ(s.scores[0], s.scores[1]);
    EXPECT_EQ(run({"saliency", "--base", base, "--finetuned", ft1, "--score", "weird"}).code,
              cli::kInvalidArguments);
}
