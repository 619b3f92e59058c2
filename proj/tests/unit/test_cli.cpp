#include "transportgrad/cli.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace tg;

namespace {

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string temp_path(const std::string& name) {
  return testing::TempDir() + "tgbench_" + name;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

int unquoted_commas(const std::string& line) {
  int n = 0;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    if (ch == ',' && !quoted) ++n;
  }
  return n;
}

const std::vector<std::vector<std::string>> kSmallRuns{
    {"check-transport", "--dim-sweep", "1,2", "--component-sweep", "2", "--points", "5",
     "--avf-instances", "2"},
    {"bench-mvn", "--dim", "5", "--samples", "2000", "--steps", "100", "--bootstrap", "50",
     "--r-sweep", "0.5"},
    {"bench-mixture", "--dim", "3", "--components", "2", "--samples", "1000", "--bootstrap", "20"},
    {"sgvi-toy", "--steps", "100", "--seeds", "2", "--eval-samples", "50", "--log-every", "50"},
    {"adapt-avf", "--dim", "4", "--steps", "50"},
};

}  // namespace

TEST(ConfigText, ParsesCommentsQuotesAndLists) {
  const auto kv = parse_config_text(
      "# header\n"
      "experiment = \"bench-mvn\"  # trailing\n"
      "\n"
      "  r_sweep = [0, 0.25, 1]\n"
      "out = \"a#b.csv\"\n");
  ASSERT_EQ(kv.size(), 3u);
  EXPECT_EQ(kv.at("r_sweep"), "[0, 0.25, 1]");
  EXPECT_EQ(kv.at("out"), "\"a#b.csv\"");
  ExperimentConfig cfg = default_config("bench-mvn");
  apply_config_value(cfg, "r_sweep", kv.at("r_sweep"));
  apply_config_value(cfg, "out", kv.at("out"));
  EXPECT_EQ(cfg.r_sweep, (std::vector<double>{0.0, 0.25, 1.0}));
  EXPECT_EQ(cfg.out, "a#b.csv");
}

TEST(ConfigText, ErrorsNameTheLine) {
  try {
    parse_config_text("dim = 3\nno_equals_here\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("dim = 3\ndim = 4\n"), ConfigError);
  EXPECT_THROW(parse_config_text("dim =\n"), ConfigError);
  EXPECT_THROW(parse_config_text("out = \"abc\n"), ConfigError);
}

TEST(ConfigValues, UnknownAndMalformedValuesThrow) {
  ExperimentConfig cfg = default_config("bench-mvn");
  EXPECT_THROW(apply_config_value(cfg, "dimension", "3"), ConfigError);
  EXPECT_THROW(apply_config_value(cfg, "dim", "three"), ConfigError);
  EXPECT_THROW(apply_config_value(cfg, "dim", "3.5"), ConfigError);
  EXPECT_THROW(apply_config_value(cfg, "freeze_theta", "maybe"), ConfigError);
  apply_config_value(cfg, "freeze_theta", "false");
  EXPECT_FALSE(cfg.freeze_theta);
  apply_config_value(cfg, "dim", "0");
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(ConfigValues, EveryKeyRoundTripsThroughCanonicalForm) {
  for (const std::string exp : {"check-transport", "bench-mvn", "bench-mixture", "sgvi-toy",
                                "adapt-avf"}) {
    const ExperimentConfig cfg = default_config(exp);
    EXPECT_NO_THROW(validate(cfg)) << exp;
    const auto kv = parse_config_text(canonical_config(cfg));
    ExperimentConfig back = default_config("check-transport");
    for (const auto& [k, v] : kv) apply_config_value(back, k, v);
    back.experiment = cfg.experiment;
    EXPECT_EQ(canonical_config(back), canonical_config(cfg)) << exp;
    EXPECT_EQ(config_hash(back), config_hash(cfg));
  }
  EXPECT_GE(config_keys().size(), 30u);
}

TEST(ConfigHash, IgnoresOutputPathButNotSeed) {
  ExperimentConfig a = default_config("bench-mvn");
  ExperimentConfig b = a;
  b.out = "elsewhere.csv";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(default_config("adapt-avf")));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"no-such-command"}).code, 2);
  EXPECT_EQ(run({"bench-mvn", "--no-such-flag", "1"}).code, 2);
  EXPECT_EQ(run({"bench-mvn", "--dim", "-4"}).code, 2);
  EXPECT_EQ(run({"bench-mvn", "--config", temp_path("missing.cfg")}).code, 2);
  const std::string bad = temp_path("bad.cfg");
  write_text(bad, "experiment = bench-mvn\nwhat = 1\n");
  const CliRun r = run({"--config", bad});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("what"), std::string::npos);
  EXPECT_TRUE(r.out.empty());
}

TEST(Cli, HelpExitsZero) {
  const CliRun r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--r-sweep"), std::string::npos);
}

TEST(Cli, EveryCommandIsByteIdenticalAcrossRuns) {
  for (const auto& args : kSmallRuns) {
    const CliRun a = run(args);
    const CliRun b = run(args);
    EXPECT_EQ(a.code, 0) << args[0] << ": " << a.err;
    EXPECT_EQ(a.out, b.out) << args[0];
    EXPECT_EQ(first_line(a.out).rfind("# tgbench 0.1.0 config_hash=", 0), 0u) << args[0];
    EXPECT_NE(first_line(a.out).find("experiment=" + args[0]), std::string::npos);
  }
}

TEST(Cli, ConfigFileThenFlagsThenEnvironment) {
  const std::string cfg = temp_path("order.cfg");
  write_text(cfg, "experiment = adapt-avf\ndim = 4\nsteps = 30\nseed = 5\n");
  const CliRun from_file = run({"--config", cfg});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_NE(first_line(from_file.out).find("seed=5"), std::string::npos);

  const CliRun flag = run({"--config", cfg, "--seed", "6"});
  EXPECT_NE(first_line(flag.out).find("seed=6"), std::string::npos);

  setenv("TG_SEED", "7", 1);
  const CliRun env = run({"--config", cfg, "--seed", "6"});
  unsetenv("TG_SEED");
  EXPECT_NE(first_line(env.out).find("seed=7"), std::string::npos);
  EXPECT_NE(env.out, flag.out);

  // a positional command wins over the file's experiment key
  const CliRun positional = run({"sgvi-toy", "--config", cfg, "--dim", "2", "--steps", "20",
                                 "--seeds", "1", "--eval-samples", "20", "--log-every", "10"});
  EXPECT_EQ(positional.code, 0) << positional.err;
  EXPECT_NE(first_line(positional.out).find("experiment=sgvi-toy"), std::string::npos);
}

TEST(Cli, WritesToOutFile) {
  const std::string path = temp_path("out.csv");
  std::remove(path.c_str());
  const CliRun r = run({"adapt-avf", "--dim", "3", "--steps", "20", "--out", path});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  const CliRun stdout_run = run({"adapt-avf", "--dim", "3", "--steps", "20"});
  EXPECT_EQ(ss.str(), stdout_run.out);
}

TEST(Cli, CoordinateLabelsAreQuoted) {
  const CliRun r = run({"check-transport", "--family", "mvn", "--dim-sweep", "2", "--points", "2",
                        "--avf-instances", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  int labels = 0;
  for (auto pos = r.out.find("chol["); pos != std::string::npos; pos = r.out.find("chol[", pos + 1)) {
    const auto close = r.out.find(']', pos);
    if (r.out.substr(pos, close - pos).find(',') == std::string::npos) continue;
    EXPECT_EQ(r.out[pos - 1], '"');
    EXPECT_EQ(r.out[close + 1], '"');
    ++labels;
  }
  EXPECT_GT(labels, 0);
}

TEST(Cli, FailedThresholdExitsOne) {
  const CliRun r = run({"check-transport", "--family", "negative_example", "--dim-sweep", "2",
                        "--component-sweep", "2", "--points", "5"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find(",fail"), std::string::npos);
  EXPECT_NE(r.err.find("threshold"), std::string::npos);
}

TEST(Cli, CsvRowsHaveHeaderWidth) {
  for (const auto& args : kSmallRuns) {
    const CliRun r = run(args);
    std::stringstream ss(r.out);
    std::string line;
    std::getline(ss, line);
    std::getline(ss, line);
    const int width = unquoted_commas(line);
    int rows = 0;
    while (std::getline(ss, line)) {
      EXPECT_EQ(unquoted_commas(line), width) << args[0] << ": " << line;
      ++rows;
    }
    EXPECT_GT(rows, 0) << args[0];
  }
}
