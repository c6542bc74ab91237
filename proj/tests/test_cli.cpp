#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "lat/binary_io.hpp"
#include "lat/checkpoint.hpp"
#include "lat/cli.hpp"
#include "lat/data.hpp"

namespace fs = std::filesystem;
using namespace lat;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result latent(std::vector<std::string> args) {
  args.insert(args.begin(), "latent");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("lat_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string small_set() {
    const std::string p = path("set.late");
    EXPECT_EQ(latent({"gen", "--items", "24", "--dim", "8", "--tokens-a", "3", "--tokens-b", "5", "--seed", "4",
                      "--out", p})
                  .code,
              cli::kExitOk);
    return p;
  }

  std::vector<std::string> train_args(const std::string& data, const std::string& out) {
    return {"train", "--data", data, "--out", out, "--epochs", "2", "--heads", "2", "--depth", "1",
            "--batch", "4", "--holdout", "8", "--bank", "8"};
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(latent({}).code, cli::kExitUsage);
  EXPECT_EQ(latent({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(latent({"gen"}).code, cli::kExitUsage);
  EXPECT_EQ(latent({"gen", "--out", path("x.late"), "--mapping", "cubic"}).code, cli::kExitUsage);
  EXPECT_EQ(latent({"gen", "--out", path("x.late"), "--items", "lots"}).code, cli::kExitUsage);
  const auto zero = latent({"gen", "--out", path("x.late"), "--items", "0"});
  EXPECT_EQ(zero.code, cli::kExitUsage);
  EXPECT_NE(zero.err.find("item count"), std::string::npos);
  EXPECT_EQ(latent({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(latent({"--version"}).code, cli::kExitOk);
}

TEST_F(CliTest, DataErrorsExitThree) {
  EXPECT_EQ(latent({"export", "--data", path("missing.late"), "--out", path("x.csv")}).code, cli::kExitData);
  write_file(path("junk.late"), "JUNKJUNKJUNK");
  const auto r = latent({"export", "--data", path("junk.late"), "--out", path("x.csv")});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("magic"), std::string::npos);
}

TEST_F(CliTest, GenIsDeterministicAndWritesManifest) {
  const std::string a = path("a.late"), b = path("b.late");
  EXPECT_EQ(latent({"gen", "--items", "10", "--dim", "4", "--seed", "3", "--out", a, "--csv", path("a.csv")}).code,
            cli::kExitOk);
  EXPECT_EQ(latent({"gen", "--items", "10", "--dim", "4", "--seed", "3", "--out", b}).code, cli::kExitOk);
  EXPECT_EQ(read_file(a), read_file(b));
  EXPECT_TRUE(fs::exists(path("a.csv")));
  const std::string manifest = read_file(a + ".manifest");
  EXPECT_NE(manifest.find("subcommand=gen\n"), std::string::npos);
  EXPECT_NE(manifest.find("seed=3\n"), std::string::npos);
  EXPECT_NE(manifest.find("config.items=10\n"), std::string::npos);
  EXPECT_NE(manifest.find("duration_seconds="), std::string::npos);
}

TEST_F(CliTest, ConfigFileSuppliesDefaultsAndFlagsWin) {
  write_file(path("gen.cfg"), "# defaults\nitems = 12\ndim=6\nseed=99\n");
  const std::string out = path("c.late");
  EXPECT_EQ(latent({"gen", "--config", path("gen.cfg"), "--seed", "5", "--out", out}).code, cli::kExitOk);
  const auto set = load_set(out);
  EXPECT_EQ(set.count(), 12u);
  EXPECT_EQ(set.dim(), 6u);
  EXPECT_NE(read_file(out + ".manifest").find("seed=5\n"), std::string::npos);
  write_file(path("bad.cfg"), "items\n");
  EXPECT_EQ(latent({"gen", "--config", path("bad.cfg"), "--out", out}).code, cli::kExitUsage);
}

TEST_F(CliTest, TrainEvalDiagnoseProjectExport) {
  const std::string data = small_set();
  const std::string ck = path("model.latc");
  const auto trained = latent(train_args(data, ck));
  ASSERT_EQ(trained.code, cli::kExitOk) << trained.err;
  EXPECT_NE(trained.out.find("direction,R@1,R@5,R@10,MedR,gallery"), std::string::npos);
  EXPECT_TRUE(fs::exists(ck + ".history.csv"));
  const Checkpoint cp = load_checkpoint(ck);
  EXPECT_TRUE(cp.get("metric.cycle_mse").has_value());
  EXPECT_EQ(cp.require("epochs"), "2");

  const auto ev = latent({"eval", "--data", data, "--checkpoint", ck, "--out", path("report.csv")});
  ASSERT_EQ(ev.code, cli::kExitOk) << ev.err;
  const std::string report = read_file(path("report.csv"));
  EXPECT_NE(report.find("t2v_gallery,8\n"), std::string::npos);
  EXPECT_NE(report.find("t2v_r1," + cp.require("metric.t2v_r1") + "\n"), std::string::npos);

  const auto dg = latent({"diagnose", "--data", data, "--checkpoint", ck, "--count", "4", "--out", path("sim.csv")});
  ASSERT_EQ(dg.code, cli::kExitOk) << dg.err;
  EXPECT_NE(dg.out.find("FV-T,"), std::string::npos);
  EXPECT_EQ(read_file(path("sim.csv")).rfind("label,T:", 0), 0u);

  const auto pj = latent({"project", "--data", data, "--checkpoint", ck, "--groups", "T,V,GT,FV", "--count", "5",
                          "--out", path("mds.csv"), "--svg", path("mds.svg")});
  ASSERT_EQ(pj.code, cli::kExitOk) << pj.err;
  const std::string coords = read_file(path("mds.csv"));
  EXPECT_EQ(std::count(coords.begin(), coords.end(), '\n'), 1 + 20);
  for (const char* g : {",T,", ",V,", ",GT,", ",FV,"}) EXPECT_NE(coords.find(g), std::string::npos) << g;
  EXPECT_TRUE(fs::exists(path("mds.svg")));
  EXPECT_EQ(latent({"project", "--data", data, "--checkpoint", ck, "--groups", "X", "--out", path("m.csv")}).code,
            cli::kExitUsage);

  EXPECT_EQ(latent({"export", "--data", data, "--out", path("tokens.csv")}).code, cli::kExitOk);

  SyntheticConfig other;
  other.items = 10;
  other.dim = 6;
  other.visual_tokens = 3;
  other.text_tokens = 5;
  save_set(generate_synthetic(other), path("other.late"));
  EXPECT_EQ(latent({"eval", "--data", path("other.late"), "--checkpoint", ck}).code, cli::kExitData);
}

TEST_F(CliTest, ResumeEqualsUninterruptedTraining) {
  const std::string data = small_set();
  auto full = train_args(data, path("full.latc"));
  ASSERT_EQ(latent(full).code, cli::kExitOk);
  auto half = train_args(data, path("half.latc"));
  half[6] = "1";
  ASSERT_EQ(latent(half).code, cli::kExitOk);
  ASSERT_EQ(latent({"train", "--data", data, "--resume", path("half.latc"), "--epochs", "2", "--out",
                    path("resumed.latc")})
                .code,
            cli::kExitOk);
  EXPECT_EQ(read_file(path("resumed.latc")), read_file(path("full.latc")));
}

TEST_F(CliTest, NumericFailureExitsFour) {
  const std::string data = small_set();
  auto args = train_args(data, path("nan.latc"));
  args.insert(args.end(), {"--tau", "1e-300"});
  const auto r = latent(args);
  EXPECT_EQ(r.code, cli::kExitNumeric);
  EXPECT_FALSE(r.err.empty());
}

TEST_F(CliTest, GenEightItemsIsDeterministic) {
  ASSERT_EQ(latent({"gen", "--items", "8", "--dim", "4", "--seed", "1", "--out", path("a.late")}).code, cli::kExitOk);
  ASSERT_EQ(latent({"gen", "--items", "8", "--dim", "4", "--seed", "1", "--out", path("b.late")}).code, cli::kExitOk);
  EXPECT_EQ(load_set(path("a.late")).count(), 8u);
  EXPECT_EQ(read_file(path("a.late")), read_file(path("b.late")));
}

TEST_F(CliTest, DefaultSetDecoderSmoke) {
  ASSERT_EQ(latent({"gen", "--out", path("set.late")}).code, cli::kExitOk);
  const auto r = latent({"train", "--data", path("set.late"), "--out", path("m.latc"), "--method", "decoder",
                         "--depth", "3", "--epochs", "1"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(path("m.latc")));
  EXPECT_TRUE(fs::exists(path("m.latc.history.csv")));
}

TEST_F(CliTest, JointSpaceBaselineFlags) {
  const std::string data = small_set();
  auto args = train_args(data, path("none.latc"));
  args.insert(args.end(), {"--method", "none", "--lambda-intra", "0", "--lambda-token", "0"});
  ASSERT_EQ(latent(args).code, cli::kExitOk);
  const Checkpoint cp = load_checkpoint(path("none.latc"));
  EXPECT_EQ(cp.require("method"), "none");
  EXPECT_EQ(cp.require("lambda_intra"), "0");
  EXPECT_TRUE(cp.sections.empty());
  const std::string history = read_file(path("none.latc.history.csv"));
  EXPECT_NE(history.find("\n1,"), std::string::npos);
}

TEST_F(CliTest, EvalOnIdentityDataReportsBothDirections) {
  ASSERT_EQ(latent({"gen", "--items", "40", "--dim", "8", "--tokens-a", "3", "--tokens-b", "3", "--mapping",
                    "identity", "--noise", "0", "--out", path("id.late")})
                .code,
            cli::kExitOk);
  auto args = train_args(path("id.late"), path("id.latc"));
  args[6] = "15";
  ASSERT_EQ(latent(args).code, cli::kExitOk);
  const auto ev = latent({"eval", "--data", path("id.late"), "--checkpoint", path("id.latc")});
  ASSERT_EQ(ev.code, cli::kExitOk);
  EXPECT_NE(ev.out.find("t2v,"), std::string::npos);
  EXPECT_NE(ev.out.find("v2t,"), std::string::npos);
}
