#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "dpd/io.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kBin = DPDMON_PATH;
const std::string kData = DPD_DATA_DIR;
const std::string kConfigs = DPD_CONFIG_DIR;

struct Run {
  int code = -1;
  std::string out;
};

/// Runs dpdmon with the given arguments; stderr is merged into out when merge is set.
Run dpdmon(const std::string& args, bool merge = false) {
  const std::string cmd = kBin + " " + args + (merge ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t got = 0;
  while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string data(const std::string& name) { return kData + "/" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',' || c == ';' || c == '=') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::optional<double> number(const std::string& t) {
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0') return std::nullopt;
  return v;
}

/// Numbers agree to a relative 1e-8, everything else verbatim.
void expect_matches_golden(const std::string& actual, const std::string& golden_name) {
  const auto want = tokens(slurp(data("golden/" + golden_name)));
  const auto got = tokens(actual);
  ASSERT_FALSE(want.empty()) << golden_name;
  ASSERT_EQ(got.size(), want.size()) << golden_name;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto a = number(got[i]);
    const auto b = number(want[i]);
    if (a && b) {
      ASSERT_NEAR(*a, *b, 1e-8 * std::max(1.0, std::abs(*b))) << golden_name << " token " << i;
    } else {
      ASSERT_EQ(got[i], want[i]) << golden_name << " token " << i;
    }
  }
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

std::vector<double> numbers(const std::string& list) {
  std::vector<double> v;
  for (const auto& t : tokens(list)) v.push_back(std::stod(t));
  return v;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dpdmon_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kMonitorArgs = "--engine garch --alpha 0.2 --level 0.05";

}  // namespace

TEST(CliCritval, PrintsTableValues) {
  const auto r = dpdmon("critval --d 3 --level 0.05");
  EXPECT_EQ(r.code, 0);
  expect_matches_golden(r.out, "critval_d3.txt");
  EXPECT_NEAR(std::stod(dpdmon("critval --d 3 --level 0.05").out), 2.632, 0.0005);
  EXPECT_NEAR(std::stod(dpdmon("critval --d 1 --level 0.10").out), 1.960, 0.0005);
}

TEST(CliCritval, UsageErrors) {
  EXPECT_EQ(dpdmon("critval --d 0 --level 0.05").code, 2);
  EXPECT_EQ(dpdmon("critval --d 3 --level 1.5").code, 2);
  EXPECT_EQ(dpdmon("critval --d 2 --level 0.05 --kind retro").code, 2);
  EXPECT_EQ(dpdmon("critval").code, 2);
}

TEST(CliFit, GarchGolden) {
  const auto r = dpdmon("fit --series " + data("garch_hist.csv") + " --engine garch --alpha 0.2");
  EXPECT_EQ(r.code, 0);
  expect_matches_golden(r.out, "fit_garch_a02.txt");
}

TEST(CliFit, PricesGolden) {
  const auto r = dpdmon("fit --series " + data("prices.csv") + " --prices --engine normal --alpha 0.1");
  EXPECT_EQ(r.code, 0);
  expect_matches_golden(r.out, "fit_prices_normal.txt");
  EXPECT_EQ(key_values(r.out).at("n"), "599");
}

TEST(CliFit, AlphaZeroMatchesQmle) {
  const auto r = dpdmon("fit --series " + data("garch_hist.csv") + " --engine garch --alpha 0");
  ASSERT_EQ(r.code, 0);
  const auto theta = numbers(key_values(r.out).at("theta_hat"));
  const auto series = dpd::io::read_series(data("garch_hist.csv"));
  const auto ref = oracle::qmle_garch11(series.values, {0.1, 0.1, 0.8});
  ASSERT_EQ(theta.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(theta[i], ref[i], 1e-5);
}

TEST(CliFit, InputErrors) {
  const auto bad = dpdmon("fit --series " + data("malformed.csv") + " --engine normal --alpha 0.1", true);
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.out.find("malformed.csv:5"), std::string::npos) << bad.out;
  EXPECT_EQ(dpdmon("fit --series " + data("no_such_file.csv") + " --engine normal --alpha 0.1").code, 2);
  EXPECT_EQ(dpdmon("fit --series " + data("garch_hist.csv") + " --engine garch --alpha 1.5").code, 2);
  EXPECT_EQ(dpdmon("fit --series " + data("garch_hist.csv") + " --engine arma --alpha 0.1").code, 2);
}

TEST(CliMonitor, ChangeGolden) {
  const auto r = dpdmon("monitor --hist " + data("garch_hist.csv") + " --stream " + data("garch_change_stream.csv") +
                        " " + kMonitorArgs);
  EXPECT_EQ(r.code, 0);
  expect_matches_golden(r.out, "monitor_change.txt");
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("verdict"), "change");
  EXPECT_GE(std::stol(kv.at("stop_k")), 250);
}

TEST(CliMonitor, CleanStreamWithHugeBoundary) {
  const auto dir = scratch("monitor");
  const auto csv = (dir / "detector.csv").string();
  const auto r = dpdmon("monitor --hist " + data("garch_hist.csv") + " --stream " + data("garch_clean_stream.csv") +
                        " --engine garch --alpha 0.2 --b 1e6 --detector-csv " + csv);
  EXPECT_EQ(r.code, 0);
  const auto kv = key_values(r.out);
  EXPECT_EQ(kv.at("verdict"), "no_change");
  EXPECT_EQ(kv.at("stop_k"), "none");
  std::ifstream in(csv);
  const auto path = dpd::io::read_detector_csv(in);
  EXPECT_EQ(path.size(), 1000u);
  fs::remove_all(dir);
}

TEST(CliMonitor, Errors) {
  EXPECT_EQ(dpdmon("monitor --hist " + data("missing.csv") + " --stream " + data("garch_clean_stream.csv") + " " +
                   kMonitorArgs)
                .code,
            2);
  EXPECT_EQ(dpdmon("monitor --hist " + data("garch_hist.csv") + " --stream " + data("garch_clean_stream.csv") +
                   " --engine garch --alpha 0.2 --level 0.05 --b 3")
                .code,
            2);
  EXPECT_EQ(dpdmon("monitor --hist " + data("garch_hist.csv") + " --stream " + data("garch_clean_stream.csv") +
                   " --engine garch --alpha 0.2 --b -1")
                .code,
            2);
}

TEST(CliRetro, ChangeGoldenAndCleanAccept) {
  const std::string mc = " --engine garch --alpha 0.2 --level 0.05 --seed 5 --grid-n 1000 --n-mc 10000";
  const auto r = dpdmon("retro --series " + data("garch_retro_change.csv") + mc);
  EXPECT_EQ(r.code, 0);
  expect_matches_golden(r.out, "retro_change.txt");
  EXPECT_EQ(key_values(r.out).at("verdict"), "reject");
  const auto clean = dpdmon("retro --series " + data("garch_hist.csv") + mc);
  EXPECT_EQ(clean.code, 0);
  EXPECT_EQ(key_values(clean.out).at("verdict"), "accept");
}

TEST(CliRetro, UsageErrors) {
  EXPECT_EQ(dpdmon("retro --series " + data("garch_hist.csv") + " --engine garch --alpha 0.2 --level 1.5 --seed 1").code,
            2);
  EXPECT_EQ(dpdmon("retro --series " + data("garch_hist.csv") + " --engine garch --alpha 0.2 --level 0.05").code, 2);
}

TEST(CliSimulate, SeedRequiredAndDeterministic) {
  EXPECT_EQ(dpdmon("simulate --theta 0.2,0.2,0.6 --n 50").code, 2);
  const auto a = dpdmon("simulate --theta 0.2,0.2,0.6 --n 50 --seed 3");
  const auto b = dpdmon("simulate --theta 0.2,0.2,0.6 --n 50 --seed 3");
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  std::istringstream in(a.out);
  EXPECT_EQ(dpd::io::parse_series(in).values.size(), 50u);
  EXPECT_EQ(dpdmon("simulate --theta 0.2,0.5,0.6 --n 50 --seed 3").code, 2);
}

TEST(CliExperiment, ShippedSizeConfig) {
  const auto dir = scratch("size");
  const auto r = dpdmon("experiment --config " + kConfigs + "/size_theta1.cfg --out-dir " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto kv = key_values(slurp((dir / "summary.txt").string()));
  EXPECT_LE(std::stod(kv.at("terminal_rate[0.2]")), 0.08);
  EXPECT_EQ(kv.at("reps"), "200");
  EXPECT_TRUE(fs::exists(dir / "rejection.csv"));
  EXPECT_TRUE(fs::exists(dir / "delay.csv"));
  EXPECT_EQ(slurp((dir / "rejection.csv").string()).substr(0, 49), "k,alpha_0,alpha_0.1,alpha_0.2,alpha_0.3,alpha_0.5");
  fs::remove_all(dir);
}

TEST(CliExperiment, ShippedContaminatedPowerConfig) {
  const auto dir = scratch("power_h");
  const auto r = dpdmon("experiment --config " + kConfigs + "/power_H.cfg --out-dir " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto kv = key_values(slurp((dir / "summary.txt").string()));
  EXPECT_GT(std::stod(kv.at("d_ratio[0]")), std::stod(kv.at("d_ratio[0.3]")));
  EXPECT_TRUE(fs::exists(dir / "rejection_clean.csv"));
  fs::remove_all(dir);
}

TEST(CliExperiment, InvalidConfig) {
  const auto dir = scratch("bad_cfg");
  const auto cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "theta0 = 0.2, 0.2, 0.6\nseed = 1\np_outlier = 1.2\n";
  EXPECT_EQ(dpdmon("experiment --config " + cfg.string() + " --out-dir " + dir.string()).code, 2);
  EXPECT_EQ(dpdmon("experiment --config " + (dir / "absent.cfg").string()).code, 2);
  fs::remove_all(dir);
}
