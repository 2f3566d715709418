#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rada_cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    args.insert(args.begin(), "rada");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = rada::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("rada_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> small_synth(const fs::path& out) {
    return {"gen-synth", "--k", "4", "--d", "8", "--shots", "4", "--test-per-class", "5", "--stream", "6",
            "--seed", "3", "--out", out.string()};
}

}  // namespace

TEST(Cli, GenSynthIsByteIdenticalOnRerun) {
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    ASSERT_EQ(run(small_synth(a)).code, 0);
    ASSERT_EQ(run(small_synth(b)).code, 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
        EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
        ++files;
    }
    EXPECT_GE(files, 6u);
}

TEST(Cli, TrainEvalAndMaskStatsRoundTrip) {
    const fs::path bundle = scratch("pipe_bundle"), model = scratch("pipe_model"), stats = scratch("pipe_stats");
    ASSERT_EQ(run(small_synth(bundle)).code, 0);
    const Result t = run({"train-eft", "--bundle", bundle.string(), "--out", model.string(), "--epochs", "1",
                          "--inner", "4"});
    ASSERT_EQ(t.code, 0) << t.err;
    EXPECT_NE(t.out.find("zero_shot_base_acc="), std::string::npos);
    EXPECT_TRUE(fs::exists(model / "adapter.rdam"));
    EXPECT_EQ(slurp(model / "history.csv").substr(0, 31), "epoch,loss,reg,base_acc,new_acc");
    EXPECT_EQ(slurp(model / "report.txt").find("nan"), std::string::npos);

    const Result e = run({"eval", "--bundle", bundle.string(), "--checkpoint", (model / "adapter.rdam").string()});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("harmonic_mean="), std::string::npos);

    const Result m = run({"mask-stats", "--bundle", bundle.string(), "--checkpoint", (model / "adapter.rdam").string(),
                          "--out", stats.string(), "--bins", "16"});
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_NE(m.out.find("count=640"), std::string::npos) << m.out;  // 20 samples x 4 x 8
    for (const char* f : {"histogram.csv", "sample_M.csv", "sample_R.csv", "sample_MR.csv"})
        EXPECT_TRUE(fs::exists(stats / f)) << f;
}

TEST(Cli, TttPrintsSummary) {
    const fs::path bundle = scratch("ttt_bundle");
    ASSERT_EQ(run(small_synth(bundle)).code, 0);
    const Result r = run({"ttt", "--bundle", bundle.string(), "--views", "7", "--inner", "4", "--log",
                          (bundle / "log.csv").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("samples=6"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("entropy_decreased="), std::string::npos);
    EXPECT_TRUE(fs::exists(bundle / "log.csv"));
}

TEST(Cli, ExitCodesDistinguishContractAndIo) {
    EXPECT_EQ(run({"eval", "--bundle", scratch("missing").string()}).code, 2);
    EXPECT_EQ(run({"gen-synth", "--out", scratch("bad").string(), "--sigma", "-1"}).code, 1);
    EXPECT_EQ(run({}).code, 1);
    const fs::path bundle = scratch("trunc");
    ASSERT_EQ(run(small_synth(bundle)).code, 0);
    fs::resize_file(bundle / "base_test.rda", 20);
    const Result r = run({"eval", "--bundle", bundle.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("format error"), std::string::npos) << r.err;
}

TEST(Cli, UnknownFlagPrintsUsage) {
    const Result r = run({"eval", "--bogus", "1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--bundle"), std::string::npos) << r.err;
}

TEST(Cli, HelpListsDefaults) {
    const Result r = run({"train-eft", "--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("0.0009"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("1.5"), std::string::npos);
    EXPECT_NE(r.out.find("13"), std::string::npos);
}

TEST(Cli, GradcheckPassesAndStepFlagIsFree) {
    const Result r = run({"gradcheck", "--variant", "all", "--reg-norm", "L1", "--h", "1e-5"});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, MiVerifyFixtures) {
    const Result c = run({"mi-verify", "--fixture", "collision"});
    EXPECT_EQ(c.code, 0) << c.out;
    EXPECT_NE(c.out.find("collision=yes"), std::string::npos);
    const Result s = run({"mi-verify", "--fixture", "strict"});
    EXPECT_EQ(s.code, 0);
    EXPECT_NE(s.out.find("verdict=holds"), std::string::npos);
    const Result e = run({"mi-verify", "--ensembles", "5"});
    EXPECT_EQ(e.code, 0);
    EXPECT_NE(e.out.find("ensembles=5 failed=0"), std::string::npos) << e.out;
}
