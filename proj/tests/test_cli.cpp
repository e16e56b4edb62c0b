// Copyright 2026 The wmens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// End-to-end tests of the wmens command-line tool.

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("wmens_cli_" + std::string(info->name()) + "_" +
                                         std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // Runs the CLI with `args` (shell syntax) and an empty master-secret env.
  CliResult run(const std::string& args, const std::string& env = "") const {
    const fs::path out = path("stdout.txt");
    const fs::path err = path("stderr.txt");
    const std::string cmd = "env -u WMENS_MASTER_SECRET " + env + " " + std::string(WMENS_CLI_PATH) + " " +
                            args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path dir_;
};

const std::string kSmall = "--vocab 64 --length 40 --trials 20 --layers 4";
const std::string kSecret = std::string(64, 'c');

TEST_F(CliTest, HelpListsEveryKeyWithDefault) {
  const CliResult r = run("simulate --help");
  ASSERT_EQ(r.exit_code, 0);
  for (const char* key : {"family = tournament", "n_layers = 30 for tournament, 5 otherwise", "lambda = 1",
                          "alpha = 0.5", "l = 2", "context_width = 4", "vocab = 1000", "length = 250",
                          "trials = 500", "seed = 42", "threshold_mode = analytic", "threads = 1"}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  EXPECT_NE(run("detect --help").out.find("flags_out"), std::string::npos);
  EXPECT_NE(run("sweep --help").out.find("axis = lambda"), std::string::npos);
}

TEST_F(CliTest, MissingSubcommandIsUsageError) { EXPECT_EQ(run("").exit_code, 2); }

TEST_F(CliTest, UnknownConfigKeyIsRejectedByName) {
  spit(path("c.json"), R"({"lenght": 10})");
  const CliResult r = run("simulate --config " + path("c.json").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("lenght"), std::string::npos);
}

TEST_F(CliTest, MalformedJsonReportsBytePosition) {
  spit(path("c.json"), R"({"length": 10,,})");
  const CliResult r = run("simulate --config " + path("c.json").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("at byte 15"), std::string::npos) << r.err;
}

TEST_F(CliTest, WrongTypeInConfigIsRejected) {
  spit(path("c.json"), R"({"length": "ten"})");
  const CliResult r = run("simulate --config " + path("c.json").string());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("length"), std::string::npos);
}

TEST_F(CliTest, BadFlagValuesAreUsageErrors) {
  EXPECT_EQ(run("simulate --trials abc").exit_code, 2);
  EXPECT_EQ(run("simulate " + kSmall + " --lambda 1.5").exit_code, 2);
  EXPECT_EQ(run("simulate " + kSmall + " --threads 0").exit_code, 2);
  EXPECT_EQ(run("simulate " + kSmall + " --family nope").exit_code, 2);
  EXPECT_EQ(run("simulate " + kSmall + " --threshold-mode loose").exit_code, 2);
}

TEST_F(CliTest, SimulateWritesCommentedCsvAndSummary) {
  const CliResult r = run("simulate " + kSmall + " --out " + path("m.csv").string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("median_log10_p="), std::string::npos);
  EXPECT_NE(r.out.find("tpr@0.001="), std::string::npos);
  const std::string csv = slurp(path("m.csv"));
  EXPECT_EQ(csv.rfind("# wmens 0.3.0 command=simulate config_digest=", 0), 0u);
  EXPECT_NE(csv.find("seed=42\n"), std::string::npos);
  EXPECT_NE(csv.find("\nscheme,family,lambda,alpha,l,n_layers,T,epsilon,fpr,tpr,tpr_se,median_log10_p,trials\n"),
            std::string::npos);
  EXPECT_FALSE(fs::exists(path("m.csv.tmp")));
}

TEST_F(CliTest, OutputDoesNotDependOnThreadsOrOutputPath) {
  ASSERT_EQ(run("simulate " + kSmall + " --threads 1 --out " + path("a.csv").string()).exit_code, 0);
  ASSERT_EQ(run("simulate " + kSmall + " --threads 3 --out " + path("b.csv").string()).exit_code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
}

TEST_F(CliTest, DigestTracksResultRelevantSettings) {
  const CliResult a = run("simulate " + kSmall);
  const CliResult b = run("simulate " + kSmall + " --seed 7");
  ASSERT_EQ(a.exit_code, 0);
  ASSERT_EQ(b.exit_code, 0);
  EXPECT_NE(a.out.substr(0, a.out.find('\n')), b.out.substr(0, b.out.find('\n')));
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  spit(path("c.json"), R"({"vocab": 64, "length": 40, "trials": 20, "n_layers": 4, "lambda": 0.5})");
  const CliResult file_only = run("simulate --config " + path("c.json").string());
  ASSERT_EQ(file_only.exit_code, 0) << file_only.err;
  EXPECT_NE(file_only.out.find("tournament-n4-lambda0.5,"), std::string::npos);
  const CliResult overridden = run("simulate --config " + path("c.json").string() + " --lambda 0.25");
  ASSERT_EQ(overridden.exit_code, 0);
  EXPECT_NE(overridden.out.find("tournament-n4-lambda0.25,"), std::string::npos);
}

TEST_F(CliTest, LayerDefaultFollowsFamily) {
  const CliResult r = run("simulate --vocab 64 --length 20 --trials 5 --family dipmark");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("dipmark-n5-"), std::string::npos);
}

TEST_F(CliTest, DetectRoundTrip) {
  const std::string tokens = path("tokens.txt").string();
  const CliResult sim = run("simulate " + kSmall + " --secret " + kSecret + " --tokens-out " + tokens);
  ASSERT_EQ(sim.exit_code, 0) << sim.err;

  const CliResult hit = run("detect --vocab 64 --layers 4 --secret " + kSecret + " --flags-out " +
                      path("flags.csv").string() + " " + tokens);
  EXPECT_EQ(hit.exit_code, 0) << hit.err;
  const auto report = nlohmann::json::parse(hit.out);
  EXPECT_EQ(report.at("T").get<int>(), 40);
  EXPECT_EQ(report.at("n").get<int>(), 4);
  EXPECT_GT(report.at("z_multi").get<double>(), 4.0);
  EXPECT_EQ(slurp(path("flags.csv")).rfind("position,layer,flag\n", 0), 0u);

  // Secret from the environment.
  EXPECT_EQ(run("detect --vocab 64 --layers 4 --tokens " + tokens, "WMENS_MASTER_SECRET=" + kSecret).exit_code, 0);
  // A different secret sees no watermark.
  EXPECT_EQ(run("detect --vocab 64 --layers 4 --secret " + std::string(64, 'd') + " " + tokens).exit_code, 3);
  // No secret at all.
  const CliResult none = run("detect --vocab 64 --layers 4 " + tokens);
  EXPECT_EQ(none.exit_code, 2);
  EXPECT_NE(none.err.find("WMENS_MASTER_SECRET"), std::string::npos);
}

TEST_F(CliTest, DetectRejectsBadTokenFiles) {
  spit(path("empty.txt"), "\n\n");
  EXPECT_EQ(run("detect --secret " + kSecret + " " + path("empty.txt").string()).exit_code, 2);
  spit(path("junk.txt"), "12\nx7\n");
  const CliResult junk = run("detect --secret " + kSecret + " " + path("junk.txt").string());
  EXPECT_EQ(junk.exit_code, 2);
  EXPECT_NE(junk.err.find(":2:"), std::string::npos);
  spit(path("big.txt"), "5000\n");
  EXPECT_EQ(run("detect --vocab 64 --secret " + kSecret + " " + path("big.txt").string()).exit_code, 2);
  EXPECT_EQ(run("detect --secret " + kSecret + " " + path("missing.txt").string()).exit_code, 2);
  EXPECT_EQ(run("detect --secret 1234 " + path("junk.txt").string()).exit_code, 2);
}

TEST_F(CliTest, SweepEmitsOneBlockPerGridPoint) {
  const CliResult r = run("sweep " + kSmall + " --axis length --grid 10,20,30");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* t : {",10,0,0.001,", ",20,0,0.001,", ",30,0,0.001,"}) {
    EXPECT_NE(r.out.find(t), std::string::npos) << t;
  }
  EXPECT_EQ(run("sweep " + kSmall + " --axis alpha --grid 0.1").exit_code, 2);
  EXPECT_EQ(run("sweep " + kSmall + " --axis length --grid 2.5").exit_code, 2);
  EXPECT_EQ(run("sweep " + kSmall + " --axis width --grid 1").exit_code, 2);
}

TEST_F(CliTest, TraceReportsEntropyUnit) {
  const CliResult nats = run("trace --vocab 64 --length 5 --layers 3 --trace-trials 2");
  ASSERT_EQ(nats.exit_code, 0) << nats.err;
  EXPECT_NE(nats.out.find(" entropy_unit=nats\ntrial,position,layer,entropy_after,green_mass,flag\n"),
            std::string::npos);
  std::size_t rows = 0;
  std::istringstream lines(nats.out);
  for (std::string line; std::getline(lines, line);) rows += line.empty() || line[0] == '#' ? 0 : 1;
  EXPECT_EQ(rows, 1u + 2u * 5u * 3u);
  const CliResult bits = run("trace --vocab 64 --length 5 --layers 3 --trace-trials 2 --entropy-bits");
  EXPECT_NE(bits.out.find(" entropy_unit=bits\n"), std::string::npos);
}

TEST_F(CliTest, ExperimentalChannelsAreGated) {
  EXPECT_EQ(run("simulate " + kSmall + " --family channel --channels 4").exit_code, 2);
  const CliResult gated = run("simulate --vocab 63 --length 40 --trials 20 --layers 4 --family channel --channels 3 --experimental-channels");
  EXPECT_EQ(gated.exit_code, 2);
  EXPECT_NE(gated.err.find("bias"), std::string::npos) << gated.err;
}

TEST_F(CliTest, VerifyFailsWhenChannelThreeIsMandatory) {
  const CliResult r = run("verify --battery 2 --no-timing --mandatory-unbiased-l 2,3");
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("channel_unbiased.l3"), std::string::npos);
  EXPECT_NE(r.err.find("max_abs_bias="), std::string::npos);
  const auto report = nlohmann::json::parse(r.out);
  bool saw_l3 = false;
  for (const auto& c : report) {
    if (c.at("name") == "channel_unbiased.l3") {
      saw_l3 = true;
      EXPECT_EQ(c.at("status"), "fail");
      EXPECT_EQ(c.at("runtime_ms").get<double>(), 0.0);
    }
  }
  EXPECT_TRUE(saw_l3);
}

}  // namespace
