#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "aapool/io.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(AAPOOL_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("aapool_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, BuildFilterWritesUnitSumKernel) {
  const auto dir = scratch("filter");
  fs::create_directories(dir);
  ASSERT_EQ(run("build-filter --size 5 --out " + (dir / "k.aapt").string()), 0);
  const auto k = aapool::io::load_tensor(dir / "k.aapt");
  ASSERT_EQ(k.numel(), 25u);
  double total = 0;
  for (float v : k.data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(k[12], 36.0f / 256.0f);
  ASSERT_EQ(run("build-filter --size 3 --out " + (dir / "k3.aapt").string()), 0);
  EXPECT_EQ(aapool::io::load_tensor(dir / "k3.aapt").numel(), 9u);
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("build-filter --size 1"), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train --data /nonexistent/dir --out /tmp/aapool_cli_never"), 2);
  EXPECT_EQ(run("oracle --suite nope"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, OracleSuitesAndNegativeControl) {
  EXPECT_EQ(run("oracle --suite aps"), 0);
  EXPECT_EQ(run("oracle --suite binomial"), 0);
  EXPECT_EQ(run("oracle --suite binomial --perturb-kernel-normalization"), 1);
  EXPECT_EQ(run("oracle"), 0);
}

TEST(Cli, EndToEndSmallRunIsReproducible) {
  const auto dir = scratch("e2e");
  const std::string d = (dir / "data").string();
  ASSERT_EQ(run("--seed 3 gen-data --out " + d + " --clips-per-class 10 --features"), 0);
  for (const char* run_dir : {"a", "b"}) {
    const std::string out = (dir / run_dir).string();
    ASSERT_EQ(run("--seed 1 train --data " + d + " --out " + out + "/train --epochs 1 --quiet"), 0);
    ASSERT_EQ(run("--seed 1 shift-eval --data " + d + " --checkpoint " + out + "/train/checkpoint --name base --out " +
                  out + "/shift --magnitudes 0,1 --svg"),
              0);
    ASSERT_EQ(run("eval-map --data " + d + " --checkpoint " + out + "/train/checkpoint --out " + out + "/map.csv"), 0);
  }
  for (const char* f : {"train/history.csv", "shift/summary.csv", "shift/base_time-1.csv", "shift/base_freq-0.csv",
                        "map.csv"}) {
    const auto a = aapool::io::read_text(dir / "a" / f), b = aapool::io::read_text(dir / "b" / f);
    EXPECT_EQ(a, b) << f;
    EXPECT_EQ(a.rfind("# manifest ", 0), 0u) << f;
  }
  EXPECT_TRUE(fs::exists(dir / "a/shift/eligible_clips.txt"));
  EXPECT_TRUE(fs::exists(dir / "a/shift/base_time.svg"));
  EXPECT_EQ(run("shift-eval --data " + d + " --checkpoint " + (dir / "a/train/checkpoint").string() +
                " --out " + (dir / "c").string() + " --protocols pitch"),
            2);
  fs::remove_all(dir);
}
