#include <gtest/gtest.h>
#include <set>
#include <sstream>

#include <algorithm>
#include <fstream>
#include <limits>

#include <cmath>
#include <filesystem>

#include "sneakdoor/attack.hpp"
#include "sneakdoor/commands.hpp"
#include "sneakdoor/condense.hpp"
#include "sneakdoor/metrics.hpp"
#include "sneakdoor/tensor_io.hpp"

using namespace sneakdoor;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 5,
  "dataset": {"per_class": 20, "shape": [1, 8, 8], "spread": 0.5},
  "condense": {"iterations": 8, "ipc": 3, "batch_real": 8},
  "attack": {"generator_steps": 8, "generator_batch": 8,
             "surrogate_train": {"epochs": 8, "batch_size": 16}},
  "eval": {"train": {"epochs": 8, "batch_size": 16}},
  "bounds": {"rho_sweep": [0, 0.25, 0.5], "encoder_seeds": 2, "lipschitz_pairs": 100}
})";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sneakdoor_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    config_ = dir_ / "cfg.json";
    io::write_text(config_, kTinyConfig);
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "sneakdoor");
    return cli::run_cli(args);
  }

  std::string run_captured(std::vector<std::string> args, int& code) {
    ::testing::internal::CaptureStderr();
    code = run(std::move(args));
    return ::testing::internal::GetCapturedStderr();
  }

  fs::path write_config(const std::string& name, const std::string& text) {
    io::write_text(dir_ / name, text);
    return dir_ / name;
  }

  fs::path dir_;
  fs::path config_;
};

std::map<std::string, std::string> checksums(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    out[e.path().filename().string()] = io::file_checksum(e.path());
  }
  return out;
}

}  // namespace

TEST_F(Cli, MissingConfigIsUsageErrorNamingPath) {
  int code = 0;
  const auto err = run_captured({"condense", "--config", (dir_ / "nope.json").string(), "--out",
                                 (dir_ / "o").string()},
                                code);
  EXPECT_EQ(code, cli::kExitUsage);
  EXPECT_NE(err.find("nope.json"), std::string::npos);
}

TEST_F(Cli, InvalidConfigHasLineNumber) {
  const auto bad = write_config("bad.json", "{\n  \"condense\": {\n    \"iterations\": -3\n  }\n}");
  int code = 0;
  const auto err = run_captured({"condense", "--config", bad.string(), "--out", (dir_ / "o").string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  EXPECT_NE(err.find("bad.json:3:"), std::string::npos) << err;
}

TEST_F(Cli, UsageErrors) {
  int code = 0;
  run_captured({}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  run_captured({"frobnicate"}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  run_captured({"condense", "--profile", "laptop", "--out", (dir_ / "o").string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  run_captured({"condense", "--config", config_.string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  run_captured({"eval", "--artifacts", (dir_ / "none").string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
}

TEST_F(Cli, RuntimeFailureIsExitOne) {
  // Well-separated blobs give a surrogate with no confusion and no override.
  const auto cfg = write_config("sep.json", R"({"dataset": {"per_class": 10, "shape": [1, 8, 8], "spread": 0.01},
    "condense": {"iterations": 0, "ipc": 4},
    "attack": {"surrogate_train": {"epochs": 100, "batch_size": 16}}})");
  int code = 0;
  const auto err = run_captured({"attack", "--config", cfg.string(), "--out", (dir_ / "o").string()}, code);
  EXPECT_EQ(code, cli::kExitRuntime);
  EXPECT_NE(err.find("pair_override"), std::string::npos) << err;
}

TEST_F(Cli, CondenseZeroIterationsAndRerunIdentity) {
  const auto cfg = write_config("zero.json", R"({"seed": 2, "dataset": {"per_class": 10, "shape": [1, 8, 8]},
    "condense": {"iterations": 0, "ipc": 2}})");
  ASSERT_EQ(run({"condense", "--config", cfg.string(), "--out", (dir_ / "z").string()}), 0);
  const auto s = condense::load_synthetic(dir_ / "z" / "s_clean.tns");
  const auto init = io::read_tensor(dir_ / "z" / "s_init.tns");
  EXPECT_EQ(s.images.storage(), init.reals);

  const auto before = io::file_checksum(config_);
  ASSERT_EQ(run({"condense", "--config", config_.string(), "--out", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run({"condense", "--config", config_.string(), "--out", (dir_ / "b").string()}), 0);
  EXPECT_EQ(checksums(dir_ / "a"), checksums(dir_ / "b"));
  EXPECT_EQ(io::file_checksum(config_), before);
  const auto trace = io::read_text(dir_ / "a" / "condense_trace.csv");
  EXPECT_EQ(trace.rfind("iteration,objective", 0), 0u);
  ASSERT_EQ(run({"condense", "--config", config_.string(), "--seed", "6", "--out", (dir_ / "c").string()}), 0);
  EXPECT_NE(io::file_checksum(dir_ / "a" / "s_clean.tns"), io::file_checksum(dir_ / "c" / "s_clean.tns"));
}

TEST_F(Cli, AttackArtifactsAndIdempotence) {
  ASSERT_EQ(run({"attack", "--config", config_.string(), "--out", (dir_ / "r1").string()}), 0);
  ASSERT_EQ(run({"attack", "--config", config_.string(), "--out", (dir_ / "r2").string()}), 0);
  for (const char* f : {"s_clean.tns", "s_poison.tns", "s_init.tns", "generator.ckpt", "surrogate.ckpt",
                        "pair.json", "attack_config.json", "seeds.json", "confusion.json",
                        "generator_log.json", "run_config.json", "condense_trace.csv",
                        "recondense_trace.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "r1" / f)) << f;
  }
  EXPECT_EQ(checksums(dir_ / "r1"), checksums(dir_ / "r2"));
  const auto cm = attack::confusion_from_json(io::read_json(dir_ / "r1" / "confusion.json"));
  const auto pair = attack::pair_from_json(io::read_json(dir_ / "r1" / "pair.json"));
  EXPECT_EQ(attack::select_pair(cm), pair);
  EXPECT_NE(io::file_checksum(dir_ / "r1" / "s_clean.tns"), io::file_checksum(dir_ / "r1" / "s_poison.tns"));
}

TEST_F(Cli, RhoZeroPoisonEqualsClean) {
  const auto cfg = write_config("rho0.json", R"({"seed": 5,
    "dataset": {"per_class": 20, "shape": [1, 8, 8], "spread": 0.5},
    "condense": {"iterations": 8, "ipc": 3, "batch_real": 8},
    "attack": {"rho": 0.0, "generator_steps": 4, "surrogate_train": {"epochs": 8, "batch_size": 16}}})");
  ASSERT_EQ(run({"attack", "--config", cfg.string(), "--out", (dir_ / "r").string()}), 0);
  EXPECT_EQ(io::file_checksum(dir_ / "r" / "s_clean.tns"), io::file_checksum(dir_ / "r" / "s_poison.tns"));
}

TEST_F(Cli, EvalWritesSchemaAndInfinitePsnrForZeroGenerator) {
  ASSERT_EQ(run({"attack", "--config", config_.string(), "--out", (dir_ / "r").string()}), 0);
  ASSERT_EQ(run({"eval", "--artifacts", (dir_ / "r").string()}), 0);
  const auto m = io::read_json(dir_ / "r" / "metrics.json");
  for (const auto& k : metrics::required_metric_keys()) EXPECT_TRUE(m.contains(k)) << k;
  EXPECT_TRUE(m.at("extra").contains("cta_drop"));
  const auto csv = io::read_text(dir_ / "r" / "metrics.csv");
  EXPECT_EQ(csv.rfind(metrics::csv_header() + "\n", 0), 0u);

  auto gen = nn::load_generator(dir_ / "r" / "generator.ckpt");
  std::fill(gen.params.begin(), gen.params.end(), 0.0);
  nn::save_generator(dir_ / "r" / "generator.ckpt", gen);
  ASSERT_EQ(run({"eval", "--artifacts", (dir_ / "r").string(), "--out", (dir_ / "e").string()}), 0);
  EXPECT_EQ(io::read_json(dir_ / "e" / "metrics.json").at("psnr_db"), "inf");

  fs::remove(dir_ / "r" / "s_poison.tns");
  int code = 0;
  const auto err = run_captured({"eval", "--artifacts", (dir_ / "r").string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
  EXPECT_NE(err.find("s_poison.tns"), std::string::npos);
}

TEST_F(Cli, VerifyBoundsRecordsAndLambdaGuard) {
  ASSERT_EQ(run({"attack", "--config", config_.string(), "--out", (dir_ / "r").string()}), 0);
  ASSERT_EQ(run({"verify-bounds", "--artifacts", (dir_ / "r").string()}), 0);
  const auto doc = io::read_json(dir_ / "r" / "bounds.json");
  const auto& v = doc.at("verdicts");
  // 2 lemma modes + (theorem1, theorem2) x 3 rho x 2 interpretations
  ASSERT_EQ(v.size(), 2u + 2 * 3 * 2);
  std::set<std::tuple<std::string, double, std::string>> keys;
  for (const auto& r : v) {
    const std::string th = r.at("theorem");
    if (th == "lemma1") {
      if (r.at("mode") == "inclusion") EXPECT_TRUE(r.at("holds").get<bool>());
      continue;
    }
    const double rho = r.at("estimates").at("rho");
    keys.insert({th, rho, r.at("interpretation")});
    EXPECT_GE(r.at("lhs").get<double>(), 0.0);
    EXPECT_GE(r.at("rhs").get<double>(), 0.0);
    if (rho == 0.0) {
      EXPECT_EQ(r.at("lhs").get<double>(), 0.0);
      EXPECT_EQ(r.at("rhs").get<double>(), 0.0);
      EXPECT_TRUE(r.at("holds").get<bool>());
    }
  }
  EXPECT_EQ(keys.size(), 12u);
  EXPECT_EQ(doc.at("mmd_sweep").at(0).at("mmd"), 0.0);
  const auto csv = io::read_text(dir_ / "r" / "bounds_sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 15);

  const auto lam0 = write_config("lam0.json", std::string(kTinyConfig).replace(
                                                  std::string(kTinyConfig).find("\"lipschitz_pairs\""), 0,
                                                  "\"lambda\": 0, "));
  int code = 0;
  run_captured({"verify-bounds", "--artifacts", (dir_ / "r").string(), "--config", lam0.string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
}

TEST_F(Cli, ReportAggregatesAndDeduplicates) {
  std::vector<std::string> runs;
  std::vector<double> asr, cta;
  for (int s = 0; s < 5; ++s) {
    const auto out = dir_ / ("run" + std::to_string(s));
    ASSERT_EQ(run({"attack", "--config", config_.string(), "--seed", std::to_string(10 + s), "--out",
                   out.string()}),
              0);
    ASSERT_EQ(run({"eval", "--artifacts", out.string()}), 0);
    const auto m = io::read_json(out / "metrics.json");
    asr.push_back(m.at("asr"));
    cta.push_back(m.at("cta"));
    runs.push_back(out.string());
  }
  // Offline sample standard deviation.
  auto sample_std = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x / v.size();
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::make_pair(mean, std::sqrt(ss / (v.size() - 1)));
  };
  std::vector<std::string> args{"report"};
  args.insert(args.end(), runs.begin(), runs.end());
  args.push_back(runs[0]);  // duplicate
  args.push_back("--out");
  args.push_back((dir_ / "rep").string());
  ::testing::internal::CaptureStdout();
  ASSERT_EQ(run(args), 0);
  ::testing::internal::GetCapturedStdout();
  const auto merged = io::read_text(dir_ / "rep" / "report.csv");
  EXPECT_EQ(std::count(merged.begin(), merged.end(), '\n'), 6);
  const auto agg = io::read_text(dir_ / "rep" / "aggregate.csv");
  const auto line = agg.substr(agg.find('\n') + 1);
  std::vector<std::string> cells;
  std::stringstream ss(line.substr(0, line.find('\n')));
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_GE(cells.size(), 7u);
  EXPECT_EQ(cells[2], "5");
  const auto [am, as] = sample_std(asr);
  const auto [cm, cs] = sample_std(cta);
  EXPECT_NEAR(std::stod(cells[3]), am, 1e-12);
  EXPECT_NEAR(std::stod(cells[4]), as, 1e-12);
  EXPECT_NEAR(std::stod(cells[5]), cm, 1e-12);
  EXPECT_NEAR(std::stod(cells[6]), cs, 1e-12);
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "summary.txt"));

  ::testing::internal::CaptureStdout();
  ASSERT_EQ(run({"report", runs[0], "--out", (dir_ / "one").string()}), 0);
  ::testing::internal::GetCapturedStdout();
  const auto one = io::read_text(dir_ / "one" / "aggregate.csv");
  const auto row = one.substr(one.find('\n') + 1);
  std::stringstream rs(row);
  int col = 0;
  for (std::string c; std::getline(rs, c, ',') && col < 15; ++col) {
    if (col >= 3 && col % 2 == 0) EXPECT_EQ(std::stod(c), 0.0) << "column " << col;
  }

  auto m = io::read_json(fs::path(runs[1]) / "metrics.json");
  m.erase("ssim");
  io::write_json(fs::path(runs[1]) / "metrics.json", m);
  int code = 0;
  run_captured({"report", runs[0], runs[1], "--out", (dir_ / "bad").string()}, code);
  EXPECT_EQ(code, cli::kExitUsage);
}
