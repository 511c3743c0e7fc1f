#include <cstdlib>
#include <fstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "histofuse/eval.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" HISTOFUSE_CLI "' " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig =
    "[dataset]\n"
    "magnification = 40\n"
    "[patch]\n"
    "size = 32\n"
    "stride = 32\n"
    "[hash]\n"
    "dwt_bits = 16\n"
    "[manifold]\n"
    "landmarks = 12\n"
    "k = 5\n"
    "dim = 4\n"
    "downsample = 16\n"
    "[ssae]\n"
    "hidden1 = 24\n"
    "hidden2 = 12\n"
    "max_epochs = 10\n"
    "lr = 0.002\n"
    "[synth]\n"
    "images_per_class = 6\n"
    "magnifications = 40\n"
    "size = 64\n";

}  // namespace

TEST(Cli, SynthIsByteIdentical) {
    TempDir a("cli-a"), b("cli-b");
    write_file(a / "c.cfg", kTinyConfig);
    ASSERT_EQ(run_cli("--config " + (a / "c.cfg").string() + " --out " + a.path().string() + " synth"), 0);
    ASSERT_EQ(run_cli("--config " + (a / "c.cfg").string() + " --out " + b.path().string() + " synth"), 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a / "synth")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const fs::path other = b.path() / fs::relative(e.path(), a.path());
        ASSERT_TRUE(fs::exists(other)) << other;
        EXPECT_EQ(oracle::slurp(e.path()), oracle::slurp(other)) << e.path();
    }
    EXPECT_EQ(files, 48u);
}

TEST(Cli, ExitCodes) {
    TempDir dir("cli-exit");
    EXPECT_EQ(run_cli("--out " + dir.path().string() + " evaluate"), 2);
    EXPECT_EQ(run_cli("--out " + dir.path().string() + " train"), 2);
    write_file(dir / "bad.cfg", "[ssae]\nbogus = 1\n");
    EXPECT_EQ(run_cli("--config " + (dir / "bad.cfg").string() + " evaluate"), 1);
    EXPECT_EQ(run_cli("--config " + (dir / "missing.cfg").string() + " evaluate"), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("--print-config synth"), 0);
}

TEST(Cli, EnvironmentOverridesOutput) {
    TempDir flag("cli-flag"), env("cli-env");
    write_file(flag / "c.cfg", kTinyConfig);
    ASSERT_EQ(run_cli("--config " + (flag / "c.cfg").string() + " --out " + flag.path().string() + " synth",
                      "HISTOFUSE_OUT='" + env.path().string() + "'"),
              0);
    EXPECT_TRUE(fs::exists(env / "synth"));
    EXPECT_TRUE(fs::exists(env / "run_synth.json"));
    EXPECT_FALSE(fs::exists(flag / "synth"));
}

TEST(Cli, TinyEndToEnd) {
    TempDir dir("cli-e2e");
    write_file(dir / "c.cfg", kTinyConfig);
    const std::string base = "--config " + (dir / "c.cfg").string() + " --out " + dir.path().string() + " --threads 1 ";
    for (const char* stage : {"synth", "ingest", "hash", "manifold", "fuse", "train", "evaluate"}) {
        ASSERT_EQ(run_cli(base + stage), 0) << stage;
        EXPECT_TRUE(fs::exists(dir / (std::string("run_") + stage + ".json"))) << stage;
    }
    const auto report = histofuse::parse_report_csv(oracle::slurp(dir / "report.csv"));
    ASSERT_EQ(report.cells.size(), 2u);
    EXPECT_EQ(report.cells[0].task, histofuse::Task::Binary);
    EXPECT_EQ(report.cells[0].rows.size(), 3u);
    std::size_t recalls = 0;
    for (const auto& row : report.cells[1].rows) recalls += row.metric == "recall";
    EXPECT_EQ(recalls, 8u);

    fs::path png;
    for (const auto& e : fs::recursive_directory_iterator(dir / "synth")) {
        if (e.path().extension() == ".png") {
            png = e.path();
            break;
        }
    }
    ASSERT_FALSE(png.empty());
    EXPECT_EQ(run_cli(base + "predict " + png.string()), 0);
}
