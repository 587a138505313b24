#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "ive/cli.hpp"
#include "ive/simulator.hpp"
#include "ive/trace_io.hpp"

namespace ive {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ive");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ive_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  // Writes a small simulator trace and returns its path.
  fs::path sim_trace(const std::string& name, double lambda = 0.0, std::uint64_t seed = 3) {
    SimConfig cfg;
    cfg.grid = {6, 6};
    cfg.steps = 15;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.lambda_inject = lambda;
    cfg.seed = seed;
    const fs::path p = path(name);
    write_trace(run_decode(cfg).trace, p);
    return p;
  }

  fs::path constant_trace(const std::string& name) {
    AttentionTrace trace;
    trace.layout.visual_start = 1;
    trace.layout.visual_end = 5;
    trace.layout.total_tokens = 6;
    trace.layout.grid = {2, 2};
    trace.layout.n_heads = 2;
    for (std::size_t t = 1; t <= 6; ++t) {
      trace.steps.emplace_back(t, 1, 2, 6,
                               std::vector<double>{0.1, 0.5, 0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2,
                                                   0.2, 0.1, 0.1});
    }
    const fs::path p = path(name);
    write_trace(trace, p);
    return p;
  }

  fs::path dir_;
};

TEST_F(CliTest, SimulateWritesTraceReportAndSummary) {
  const auto r = run_cli({"simulate", "--steps", "12", "--grid", "6x6", "--lambda", "0", "--seed",
                          "7", "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("trace_7.ivtr")));
  EXPECT_TRUE(fs::exists(path("report_7.json")));
  const auto summary = json::parse(slurp(path("summary.json")));
  ASSERT_EQ(summary.at("runs").size(), 1u);
  EXPECT_TRUE(summary.at("runs")[0].at("activeness_mean").is_number());
  EXPECT_EQ(summary.at("mode"), "closed-loop");
  EXPECT_EQ(summary.at("config").at("sim").at("grid"), "6x6");
  EXPECT_EQ(summary.at("config").at("sim").at("ive").at("trend").at("gamma"), 0.1);
  EXPECT_NE(r.out.find("seed 7 activeness"), std::string::npos);

  const auto trace = read_trace(path("trace_7.ivtr"));
  EXPECT_EQ(trace.steps.size(), 12u);
  EXPECT_EQ(trace.layout.grid, (GridShape{6, 6}));
}

TEST_F(CliTest, SimulateIsDeterministic) {
  const std::vector<std::string> args{"simulate", "--steps", "10", "--grid", "5x5", "--seeds-count",
                                      "3", "--ive", "on", "--seed", "11"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", path("a").string()});
  b.insert(b.end(), {"--out", path("b").string()});
  ASSERT_EQ(run_cli(a).code, 0);
  ASSERT_EQ(run_cli(b).code, 0);
  for (const char* name : {"summary.json", "trace_11.ivtr", "trace_13.ivtr", "report_12.json"}) {
    EXPECT_EQ(slurp(path("a") / name), slurp(path("b") / name)) << name;
  }
  const auto summary = json::parse(slurp(path("a") / "summary.json"));
  ASSERT_EQ(summary.at("runs").size(), 3u);
  EXPECT_EQ(summary.at("runs")[2].at("seed"), 13);
}

TEST_F(CliTest, SimulateCsvReport) {
  ASSERT_EQ(run_cli({"simulate", "--steps", "6", "--grid", "3x3", "--layers", "2", "--format", "csv",
                     "--out", dir_.string()})
                .code,
            0);
  std::istringstream csv(slurp(path("report_0.csv")));
  std::string line;
  std::size_t data = 0;
  while (std::getline(csv, line)) {
    if (!line.starts_with("#") && line != "layer,step,distance") ++data;
  }
  EXPECT_EQ(data, 2u * 5u);
}

TEST_F(CliTest, UsageErrorsNameTheFlag) {
  auto r = run_cli({"simulate", "--lambda", "-1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lambda"), std::string::npos) << r.err;

  for (const auto& [flag, value] :
       std::vector<std::pair<std::string, std::string>>{{"--grid", "3"},
                                                        {"--beta", "1.0"},
                                                        {"--amplify", "0.5"},
                                                        {"--gamma", "1.5"},
                                                        {"--alpha", "2"},
                                                        {"--epsilon", "0"},
                                                        {"--steps", "1"},
                                                        {"--seeds-count", "0"},
                                                        {"--reg", "-1"}}) {
    r = run_cli({"simulate", flag, value, "--out", dir_.string()});
    EXPECT_EQ(r.code, 2) << flag;
    EXPECT_NE(r.err.find(flag.substr(2)), std::string::npos) << r.err;
  }
  EXPECT_EQ(run_cli({"simulate", "--ive", "maybe"}).code, 2);
  EXPECT_EQ(run_cli({"simulate", "--ot", "emd"}).code, 2);
  EXPECT_EQ(run_cli({"--format", "xml", "simulate"}).code, 2);
  EXPECT_EQ(run_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"activeness"}).code, 2);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  // Nothing was simulated by the rejected invocations.
  EXPECT_FALSE(fs::exists(path("summary.json")));
}

TEST_F(CliTest, ActivenessOfConstantTraceIsZero) {
  const auto trace = constant_trace("const.ivtr");
  const auto r = run_cli({"activeness", trace.string(), "--out", dir_.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "0\n");
  const auto report = json::parse(slurp(path("activeness.json")));
  EXPECT_EQ(report.at("config").at("command"), "activeness");
  EXPECT_EQ(report.at("activeness").at("overall_mean"), 0.0);
}

TEST_F(CliTest, ActivenessCsvRowCount) {
  const auto trace = sim_trace("t.ivtr");
  ASSERT_EQ(run_cli({"activeness", trace.string(), "--format", "csv", "--out", dir_.string()}).code, 0);
  std::istringstream csv(slurp(path("activeness.csv")));
  std::string line;
  std::size_t data = 0;
  while (std::getline(csv, line)) {
    if (!line.starts_with("#") && line != "layer,step,distance") ++data;
  }
  EXPECT_EQ(data, 2u * 14u);
}

TEST_F(CliTest, ActivenessFallsWithInjectedInertia) {
  const auto plain = sim_trace("plain.ivtr", 0.0);
  const auto sticky = sim_trace("sticky.ivtr", 1.0);
  const auto a = run_cli({"activeness", plain.string(), "--out", path("a").string()});
  const auto b = run_cli({"activeness", sticky.string(), "--out", path("b").string()});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_LT(std::stod(b.out), std::stod(a.out));
}

TEST_F(CliTest, UnreadableTraceIsRuntimeError) {
  auto r = run_cli({"activeness", path("missing.ivtr").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("io error"), std::string::npos) << r.err;

  std::ofstream(path("junk.ivtr")) << "not a trace at all, definitely not";
  r = run_cli({"activeness", path("junk.ivtr").string(), "--out", dir_.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad magic"), std::string::npos) << r.err;

  r = run_cli({"modulate", path("junk.ivtr").string(), "--out", dir_.string()});
  EXPECT_EQ(r.code, 1);
  r = run_cli({"inject", path("junk.ivtr").string(), "--lambda", "1", "--out", dir_.string()});
  EXPECT_EQ(r.code, 1);
}

TEST_F(CliTest, ModulateConstantTraceIsIdentity) {
  const auto input = constant_trace("const.ivtr");
  ASSERT_EQ(run_cli({"modulate", input.string(), "--out", dir_.string()}).code, 0);
  const auto in = read_trace(input);
  const auto out = read_trace(path("modulated.ivtr"));
  EXPECT_EQ(out.steps, in.steps);
  EXPECT_EQ(out.layout, in.layout);
  EXPECT_EQ(out.meta.at("ive.mode"), "open-loop");
  const auto report = json::parse(slurp(path("modulation.json")));
  EXPECT_EQ(report.at("mode"), "open-loop");
  EXPECT_EQ(report.at("outcomes").size(), 6u);
  EXPECT_EQ(report.at("config").at("ive").at("penalty").at("alpha"), 0.1);
}

TEST_F(CliTest, ModulatePreservesRowSums) {
  const auto input = sim_trace("t.ivtr");
  ASSERT_EQ(run_cli({"modulate", input.string(), "--tau", "0.1", "--kappa", "1", "--out",
                     dir_.string()})
                .code,
            0);
  const auto in = read_trace(input);
  const auto out = read_trace(path("modulated.ivtr"));
  ASSERT_EQ(in.steps.size(), out.steps.size());
  bool changed = false;
  for (std::size_t t = 0; t < in.steps.size(); ++t) {
    changed |= in.steps[t] != out.steps[t];
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t h = 0; h < 2; ++h) {
        double a = 0.0, b = 0.0;
        for (double w : in.steps[t].row(l, h)) a += w;
        for (double w : out.steps[t].row(l, h)) b += w;
        EXPECT_NEAR(a, b, 1e-6);
      }
    }
  }
  EXPECT_TRUE(changed);
}

TEST_F(CliTest, InjectZeroKeepsPayload) {
  const auto input = sim_trace("t.ivtr");
  ASSERT_EQ(run_cli({"inject", input.string(), "--lambda", "0", "--out", dir_.string()}).code, 0);
  const auto in = read_trace(input);
  const auto out = read_trace(path("injected.ivtr"));
  EXPECT_EQ(out.steps, in.steps);
  EXPECT_EQ(json::parse(out.meta.at("ive.config")).at("lambda"), 0.0);
  // Rewriting the input with the same echoed meta gives the same bytes.
  auto rewrite = in;
  rewrite.meta = out.meta;
  EXPECT_EQ(encode_trace(rewrite), encode_trace(out));
  const std::string bytes = slurp(path("injected.ivtr"));
  EXPECT_EQ(std::vector<std::uint8_t>(bytes.begin(), bytes.end()), encode_trace(rewrite));
}

TEST_F(CliTest, InjectMixesWithPreviousOriginalStep) {
  const auto input = sim_trace("t.ivtr");
  ASSERT_EQ(run_cli({"inject", input.string(), "--lambda", "1", "--out", dir_.string()}).code, 0);
  const auto in = read_trace(input);
  const auto out = read_trace(path("injected.ivtr"));
  EXPECT_EQ(out.steps[0], in.steps[0]);
  for (std::size_t t = 1; t < in.steps.size(); ++t) {
    const auto expected = inject_inertia(in.steps[t].row(1, 0), in.steps[t - 1].row(1, 0), 1.0);
    for (std::size_t j = 0; j < expected.size(); ++j) {
      EXPECT_NEAR(out.steps[t].row(1, 0)[j], expected[j], 1e-7);
    }
  }
  const auto a = run_cli({"activeness", input.string(), "--out", path("a").string()});
  const auto b = run_cli({"activeness", path("injected.ivtr").string(), "--out", path("b").string()});
  EXPECT_LT(std::stod(b.out), std::stod(a.out));
}

TEST_F(CliTest, InjectRequiresLambda) {
  const auto input = sim_trace("t.ivtr");
  EXPECT_EQ(run_cli({"inject", input.string()}).code, 2);
  const auto r = run_cli({"inject", input.string(), "--lambda", "-0.1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("lambda"), std::string::npos);
}

TEST_F(CliTest, JsonDebugRoundTrip) {
  const auto input = sim_trace("t.ivtr");
  ASSERT_EQ(run_cli({"export-json", input.string(), path("t.json").string()}).code, 0);
  ASSERT_EQ(run_cli({"import-json", path("t.json").string(), path("back.ivtr").string()}).code, 0);
  EXPECT_EQ(slurp(input), slurp(path("back.ivtr")));
  std::ofstream(path("broken.json")) << "{";
  EXPECT_EQ(run_cli({"import-json", path("broken.json").string(), path("x.ivtr").string()}).code, 1);
}

#ifdef IVE_CLI_PATH
int exit_code_of(const std::string& command) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(CliTest, BinaryExitCodes) {
  const std::string bin = IVE_CLI_PATH;
  EXPECT_EQ(exit_code_of(bin + " --help"), 0);
  EXPECT_EQ(exit_code_of(bin + " simulate --lambda -1"), 2);
  EXPECT_EQ(exit_code_of(bin + " activeness " + path("nope.ivtr").string()), 1);
  EXPECT_EQ(exit_code_of(bin + " simulate --steps 4 --grid 3x3 --out " + dir_.string()), 0);
  EXPECT_TRUE(fs::exists(path("trace_0.ivtr")));
}
#endif

}  // namespace
}  // namespace ive
