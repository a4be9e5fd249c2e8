#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "lensformer/cli.hpp"
#include "support/tempdir.hpp"

using namespace lensformer;
using lensformer::testing::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result lf(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) { return io::read_file(p); }

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    unsetenv("LENSFORMER_SEED");
    // 16 px stamps and a matching model keep the end-to-end runs quick.
    io::write_file(dir / "small.json", R"({"model": {"input_size": 16}, "simulator": {"size": 16}})");
  }
  void TearDown() override { unsetenv("LENSFORMER_SEED"); }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }

  TempDir dir;
};

}  // namespace

TEST_F(Cli, SimulateCountsAndIdempotence) {
  auto r = lf({"simulate", "--n", "100", "--lens-fraction", "0.5", "--seed", "7", "-c", p("small.json"), "-o", p("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("100 stamps (50 lenses, 50 non-lenses"), std::string::npos) << r.out;
  const auto rows = read_manifest(p("a/manifest.jsonl"));
  EXPECT_EQ(rows.size(), 100u);
  ASSERT_EQ(lf({"simulate", "--n", "100", "--lens-fraction", "0.5", "--seed", "7", "-c", p("small.json"), "-o", p("b")}).code, 0);
  EXPECT_EQ(slurp(p("a/manifest.jsonl")), slurp(p("b/manifest.jsonl")));
  auto effective = [&](const std::string& out) {
    auto j = json::parse(slurp(dir / out / "effective_config.json"));
    j.erase("paths");
    return j;
  };
  EXPECT_EQ(effective("a"), effective("b"));
  EXPECT_EQ(slurp(p("a/stamps/stamp_000042.lfs")), slurp(p("b/stamps/stamp_000042.lfs")));
  // Timestamps live only in run.log.
  EXPECT_EQ(slurp(p("a/effective_config.json")).find("T2"), std::string::npos);
  EXPECT_NE(slurp(p("a/run.log")).find("Z "), std::string::npos);
}

TEST_F(Cli, SingleBandMode) {
  ASSERT_EQ(lf({"simulate", "--n", "6", "--bands", "1", "-c", p("small.json"), "-o", p("one")}).code, 0);
  const auto data = load_dataset(p("one/manifest.jsonl"));
  EXPECT_EQ(data[0].pixels.shape(), (Shape{1, 16, 16}));
  EXPECT_EQ(lf({"simulate", "--n", "6", "--bands", "3", "-o", p("three")}).code, 1);
}

TEST_F(Cli, UnknownConfigKeyIsAUsageError) {
  io::write_file(dir / "bad.json", R"({"train": {"stages": "1e-4:3", "momentum": 0.9}})");
  auto r = lf({"simulate", "-c", p("bad.json"), "-o", p("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/train/momentum"), std::string::npos) << r.err;
  io::write_file(dir / "bad2.json", R"({"model": {"backbone": [{"out_channels": 4, "dilation": 2}]}})");
  r = lf({"simulate", "-c", p("bad2.json"), "-o", p("x")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/model/backbone/0/dilation"), std::string::npos) << r.err;
  io::write_file(dir / "bad3.json", "{not json");
  EXPECT_EQ(lf({"simulate", "-c", p("bad3.json"), "-o", p("x")}).code, 1);
  EXPECT_EQ(lf({"simulate", "-c", p("missing.json"), "-o", p("x")}).code, 1);
  EXPECT_EQ(lf({"frobnicate"}).code, 1);
  EXPECT_EQ(lf({"simulate", "--n", "abc", "-o", p("x")}).code, 1);
  EXPECT_EQ(lf({"simulate"}).code, 1);  // no output directory
}

TEST_F(Cli, SeedPrecedence) {
  io::write_file(dir / "seeded.json", R"({"seed": 5, "simulator": {"size": 16}})");
  auto seed_of = [&](const std::string& out) { return json::parse(slurp(dir / out / "effective_config.json")).at("seed").get<std::uint64_t>(); };
  ASSERT_EQ(lf({"simulate", "--n", "4", "-c", p("seeded.json"), "-o", p("cfg")}).code, 0);
  EXPECT_EQ(seed_of("cfg"), 5u);
  setenv("LENSFORMER_SEED", "11", 1);
  ASSERT_EQ(lf({"simulate", "--n", "4", "-c", p("seeded.json"), "-o", p("env")}).code, 0);
  EXPECT_EQ(seed_of("env"), 11u);
  ASSERT_EQ(lf({"simulate", "--n", "4", "-c", p("seeded.json"), "--seed", "3", "-o", p("flag")}).code, 0);
  EXPECT_EQ(seed_of("flag"), 3u);
  setenv("LENSFORMER_SEED", "x1", 1);
  EXPECT_EQ(lf({"simulate", "--n", "4", "-o", p("bad")}).code, 1);
}

TEST_F(Cli, TrainEvalReportEndToEnd) {
  const auto cfg = p("small.json");
  ASSERT_EQ(lf({"simulate", "--n", "40", "--seed", "1", "-c", cfg, "-o", p("train_data")}).code, 0);
  ASSERT_EQ(lf({"simulate", "--n", "30", "--seed", "2", "-c", cfg, "-o", p("test_data")}).code, 0);

  auto r = lf({"train", "-c", cfg, "-d", p("train_data"), "-o", p("run"), "--stages", "1e-3:2", "--batch-size", "8", "--no-rotations"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(slurp(p("run/history.csv"))), 3u);
  EXPECT_TRUE(std::filesystem::exists(p("run/stage1_epoch2.ckpt")));
  EXPECT_TRUE(std::filesystem::exists(p("run/model.ckpt")));

  // Same invocation, same bytes.
  ASSERT_EQ(lf({"train", "-c", cfg, "-d", p("train_data"), "-o", p("run_again"), "--stages", "1e-3:2", "--batch-size", "8", "--no-rotations"}).code, 0);
  EXPECT_EQ(slurp(p("run/model.ckpt")), slurp(p("run_again/model.ckpt")));
  EXPECT_EQ(slurp(p("run/history.csv")), slurp(p("run_again/history.csv")));

  r = lf({"eval", "-m", p("run/model.ckpt"), "-d", p("test_data"), "-o", p("ev"), "--stratify", "theta_e"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"scores.csv", "report.json", "roc.csv", "roc.svg", "confusion.csv", "confusion.svg", "strata_theta_e.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / "ev" / f)) << f;
  const auto report = json::parse(slurp(p("ev/report.json")));
  const auto scores = read_scores_csv(p("ev/scores.csv"));
  EXPECT_EQ(scores.size(), 30u);
  EXPECT_EQ(accuracy(confusion(scores, 0.5)), report.at("accuracy").get<double>());
  EXPECT_EQ(roc_and_auroc(scores).auroc, report.at("auroc").get<double>());
  EXPECT_EQ(report.at("strata")[0].at("key"), "theta_e");
  EXPECT_EQ(report.at("confusion").size(), 4u);
  // Strata cover the lenses: three bins summing to the positives.
  std::size_t n = 0;
  for (const auto& b : report.at("strata")[0].at("bins")) n += b.at("n").get<std::size_t>();
  EXPECT_EQ(n, report.at("positives").get<std::size_t>());

  ASSERT_EQ(lf({"eval", "-m", p("run/model.ckpt"), "-d", p("test_data"), "-o", p("ev2"), "--threshold", "0.3"}).code, 0);
  r = lf({"report", p("ev"), p("ev2"), p("nothing"), "--sort", "accuracy", "-o", p("cmp")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("skipping"), std::string::npos);
  EXPECT_EQ(lines(r.out), 3u);
  EXPECT_EQ(lines(slurp(p("cmp/comparison.csv"))), 3u);
  r = lf({"report", p("ev")});
  EXPECT_EQ(lines(r.out), 2u);
  EXPECT_EQ(lf({"report", p("nothing")}).code, 2);
  EXPECT_EQ(lf({"report", p("ev"), "--sort", "f1"}).code, 1);

  // Resume continues the numbering and the history file.
  r = lf({"train", "-c", cfg, "-d", p("train_data"), "-o", p("run"), "--stages", "1e-4:1", "--batch-size", "8", "--no-rotations", "--resume",
          p("run/stage1_epoch2.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(p("run/stage2_epoch3.ckpt")));
  EXPECT_EQ(lines(slurp(p("run/history.csv"))), 4u);
}

TEST_F(Cli, TrainErrors) {
  const auto cfg = p("small.json");
  ASSERT_EQ(lf({"simulate", "--n", "20", "-c", cfg, "-o", p("d4")}).code, 0);
  ASSERT_EQ(lf({"simulate", "--n", "20", "--bands", "1", "-c", cfg, "-o", p("d1")}).code, 0);
  EXPECT_EQ(lf({"train", "-c", cfg, "-d", p("d4"), "-o", p("r"), "--stages", "1e-3"}).code, 1);
  EXPECT_EQ(lf({"train", "-c", cfg, "-d", p("d4"), "-o", p("r"), "--stages", "1e-3:0"}).code, 1);
  EXPECT_EQ(lf({"train", "-c", cfg, "-o", p("r")}).code, 1);  // no data
  EXPECT_EQ(lf({"train", "-c", cfg, "-d", p("nowhere"), "-o", p("r")}).code, 2);
  // 4-band model against 1-band stamps.
  EXPECT_EQ(lf({"train", "-c", cfg, "-d", p("d1"), "-o", p("r1"), "--stages", "1e-3:1"}).code, 2);

  ASSERT_EQ(lf({"train", "-c", cfg, "-d", p("d4"), "-o", p("ok"), "--stages", "1e-3:1", "--no-rotations"}).code, 0);
  EXPECT_EQ(lf({"eval", "-m", p("ok/model.ckpt"), "-d", p("d1"), "-o", p("e1")}).code, 2);
  EXPECT_EQ(lf({"eval", "-m", p("ok/model.ckpt"), "-d", p("d4"), "-o", p("e2"), "--stratify", "z"}).code, 1);

  // Corrupt stamps make the loss non-finite; the error names the checkpoint
  // training started from.
  auto data = load_dataset(p("d4/manifest.jsonl"));
  auto& px = data[3].pixels;
  px[5] = std::numeric_limits<float>::quiet_NaN();
  write_dataset(data, dir / "nan");
  auto r = lf({"train", "-c", cfg, "-d", p("nan"), "-o", p("rn"), "--stages", "1e-3:1", "--resume", p("ok/model.ckpt")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ok/model.ckpt"), std::string::npos) << r.err;
}
