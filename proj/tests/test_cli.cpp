#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(LSLP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lslp_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const std::string& name, const std::string& body) {
    const fs::path p = scratch(name);
    std::ofstream(p) << body;
    return p;
}

const std::string kTiny = R"({"phantom": {"image_size": {"width": 32, "height": 32}, "n_images": 12, "n_test_images": 4},
  "train": {"total_iterations": 2, "batch_size": 1, "checkpoint_every": 0,
            "encoder": {"input_channels": 1, "layers": [{"channels": 4, "pool": true}, {"channels": 8, "pool": true}]}},
  "eval": {"n_episodes": 2}})";

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run("--help"), 0);
    EXPECT_EQ(run("--bogus"), 2);
    EXPECT_EQ(run("eval"), 2);
    EXPECT_EQ(run("train -c " + write_config("bad.json", R"({"train": {"alhpa": 1}})").string()), 2);
    EXPECT_EQ(run("train -c " + write_config("broken.json", "{").string()), 2);
}

TEST(Cli, InvalidPhantomSpecLeavesNothingBehind) {
    const fs::path out = scratch("nodata");
    const fs::path cfg = write_config("badspec.json", R"({"phantom": {"n_images": 10, "n_test_images": 50}})");
    EXPECT_EQ(run("gen-data -c " + cfg.string() + " -o " + out.string()), 2);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, GenDataIsByteIdentical) {
    const fs::path cfg = write_config("tiny.json", kTiny);
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    ASSERT_EQ(run("gen-data -c " + cfg.string() + " -o " + a.string()), 0);
    ASSERT_EQ(run("gen-data -c " + cfg.string() + " -o " + b.string()), 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file() || e.path().filename() == "run.log") continue;
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
    }
    EXPECT_GT(files, 12u);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Cli, TrainEvalMisalignPipeline) {
    const fs::path cfg = write_config("tiny.json", kTiny);
    const fs::path tr = scratch("train"), ev = scratch("eval"), mis = scratch("mis");
    ASSERT_EQ(run("train -c " + cfg.string() + " -o " + tr.string()), 0);
    EXPECT_TRUE(fs::exists(tr / "loss.csv"));
    EXPECT_TRUE(fs::exists(tr / "final" / "manifest.json"));
    ASSERT_EQ(run("eval --checkpoint " + (tr / "final").string() + " -o " + ev.string() + " --overlays 1"), 0);
    EXPECT_TRUE(fs::exists(ev / "summary.json"));
    ASSERT_EQ(run("misalign --report " + (ev / "report.csv").string() + " -o " + mis.string()), 0);
    EXPECT_TRUE(fs::exists(mis / "scatter.png"));

    EXPECT_EQ(run("eval --checkpoint " + (tr / "final").string() + " --dataset /nonexistent"), 2);
    const fs::path other = write_config("other.json", R"({"phantom": {"image_size": {"width": 32, "height": 32}, "n_images": 12, "n_test_images": 4},
      "train": {"alpha": 0.5}})");
    EXPECT_EQ(run("eval --checkpoint " + (tr / "final").string() + " -c " + other.string() + " -o " + ev.string()), 2);
    for (const auto& p : {tr, ev, mis}) fs::remove_all(p);
}
