#include "cli.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "dpl/errors.h"

namespace dpl::cli {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome RunDpl(std::initializer_list<std::string> args) {
  std::vector<std::string> owned = {"dpl"};
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : owned) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code =
      RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(testing::TempDir()) /
           ("dpl_cli_" + std::string(testing::UnitTest::GetInstance()
                                         ->current_test_info()
                                         ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    data_ = WriteData("ratings.tsv", 30, 40, 1);
  }

  fs::path WriteData(const std::string& name, int users, int items,
                     std::uint64_t seed) {
    const fs::path path = dir_ / name;
    std::ofstream os(path);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(0.2);
    for (int u = 0; u < users; ++u) {
      os << u << '\t' << u % items << "\t4\t0\n";
      for (int i = 0; i < items; ++i) {
        if (i != u % items && keep(rng)) os << u << '\t' << i << "\t3\t0\n";
      }
    }
    return path;
  }

  fs::path dir_;
  fs::path data_;
};

TEST(GridTest, ListsAndInclusiveRanges) {
  const auto axes = ParseGrid({"loss=dpl,bpr", "tau=0.0:0.5:0.05"});
  ASSERT_EQ(axes.size(), 2u);
  EXPECT_EQ(axes[0].values, (std::vector<std::string>{"dpl", "bpr"}));
  ASSERT_EQ(axes[1].values.size(), 11u);
  EXPECT_EQ(std::stod(axes[1].values.back()), 0.5);
  EXPECT_EQ(std::stod(axes[1].values[3]), 0.15);
  const auto cells = ExpandGrid(axes);
  ASSERT_EQ(cells.size(), 22u);
  EXPECT_EQ(cells[0].at("loss"), "dpl");
  EXPECT_EQ(cells[11].at("loss"), "bpr");
}

TEST(GridTest, RejectsBadSpecs) {
  EXPECT_THROW(ParseGrid({}), ConfigError);
  EXPECT_THROW(ParseGrid({"lr=0.1"}), ConfigError);
  EXPECT_THROW(ParseGrid({"m=1", "m=2"}), ConfigError);
  EXPECT_THROW(ParseGrid({"tau=0.5:0.1:0.1"}), ConfigError);
  EXPECT_THROW(ParseGrid({"tau=0:1:0"}), ConfigError);
  EXPECT_THROW(ParseGrid({"tau="}), ConfigError);
}

TEST_F(CliTest, HelpAndUsageErrors) {
  const auto help = RunDpl({"--help"});
  EXPECT_EQ(help.code, kOk);
  EXPECT_NE(help.out.find("--grid"), std::string::npos);
  EXPECT_EQ(RunDpl({"train", "--bogus"}).code, kConfigError);
  EXPECT_EQ(RunDpl({"sweep", "--data", data_.string()}).code, kConfigError);
  EXPECT_EQ(RunDpl({"verify", "--trials", "10"}).code, kConfigError);
  EXPECT_EQ(RunDpl({"train", "--data", data_.string(), "--m", "0", "--tau", "0.3",
                 "--quiet"})
                .code,
            kConfigError);
}

TEST_F(CliTest, MissingDataIsExitTwo) {
  const auto r = RunDpl({"train", "--data", (dir_ / "nope.tsv").string(),
                      "--quiet"});
  EXPECT_EQ(r.code, kDataError);
  EXPECT_NE(r.err.find("data error"), std::string::npos);
}

TEST_F(CliTest, TrainWritesRunAndEvaluateReadsIt) {
  const fs::path run = dir_ / "run";
  const auto t = RunDpl({"train", "--data", data_.string(), "--epochs", "2",
                      "--dim", "8", "--batch", "64", "--out", run.string(),
                      "--quiet"});
  ASSERT_EQ(t.code, kOk) << t.err;
  for (const char* f : {"checkpoint.bin", "split.manifest", "run.manifest",
                        "report.tsv", "report.json", "metrics.tsv"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  const auto e = RunDpl({"evaluate", "--run", run.string(), "--topk", "5"});
  ASSERT_EQ(e.code, kOk) << e.err;
  EXPECT_EQ(e.out.substr(0, e.out.find('\n')), "P@5\tR@5\tNDCG@5\tAUC");

  // Same checkpoint scored against a dataset with a different catalog.
  const fs::path other = WriteData("other.tsv", 12, 15, 2);
  const fs::path other_run = dir_ / "other_run";
  ASSERT_EQ(RunDpl({"train", "--data", other.string(), "--epochs", "1", "--dim",
                 "8", "--out", other_run.string(), "--quiet"})
                .code,
            kOk);
  const auto bad = RunDpl({"evaluate", "--checkpoint",
                        (run / "checkpoint.bin").string(), "--split",
                        (other_run / "split.manifest").string()});
  EXPECT_EQ(bad.code, kConfigError);
  EXPECT_NE(bad.err.find("incompatible checkpoint"), std::string::npos);
}

TEST_F(CliTest, ManifestReplayReproducesSgdCheckpoint) {
  const fs::path a = dir_ / "a", b = dir_ / "b";
  ASSERT_EQ(RunDpl({"train", "--data", data_.string(), "--epochs", "2", "--dim",
                 "8", "--optimizer", "sgd", "--loss", "hcl", "--seed", "5",
                 "--out", a.string(), "--quiet"})
                .code,
            kOk);
  const auto r = RunDpl({"train", "--config", (a / "run.manifest").string(),
                      "--out", b.string(), "--quiet"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(Slurp(a / "checkpoint.bin"), Slurp(b / "checkpoint.bin"));
}

TEST_F(CliTest, CommandLineOverridesConfigFile) {
  const fs::path cfg = dir_ / "run.cfg";
  {
    std::ofstream os(cfg);
    os << "data=" << data_.string() << "\nepochs=1\ndim=8\nunknown_key=1\n";
  }
  const fs::path run = dir_ / "run";
  ASSERT_EQ(RunDpl({"train", "--config", cfg.string(), "--epochs", "3", "--out",
                 run.string(), "--quiet"})
                .code,
            kOk);
  std::ifstream in(run / "report.tsv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST_F(CliTest, SweepWritesLongTable) {
  const fs::path out = dir_ / "sweep";
  const auto r = RunDpl({"sweep", "--data", data_.string(), "--epochs", "1",
                      "--dim", "4", "--grid", "loss=bpr,dpl", "--out",
                      out.string(), "--quiet"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')),
            "cell\tloss\tm\tn\ttau\tbeta\tmetric\tvalue");
  EXPECT_EQ(Slurp(out / "sweep.tsv"), r.out);
}

TEST_F(CliTest, VerifySingleBoundCell) {
  const auto r = RunDpl({"verify", "--lemma", "3", "--n", "100", "--m", "100",
                      "--tau", "0.5", "--trials", "1000", "--out",
                      (dir_ / "verify").string()});
  EXPECT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "verify" / "lemma3.tsv"));
  EXPECT_EQ(RunDpl({"verify", "--lemma", "4"}).code, kConfigError);
}

}  // namespace
}  // namespace dpl::cli
