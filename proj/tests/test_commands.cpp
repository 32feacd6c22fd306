#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ma/commands.hpp"
#include "ma/synthetic.hpp"

using namespace ma;
namespace fs = std::filesystem;

namespace {

class CommandTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("ma_cmd_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_stats(const std::vector<ArchInfo>& archs, std::uint64_t seed = 3) {
    std::ofstream out(path("stats.jsonl"));
    for (const auto& a : archs) {
      const auto recs = synthetic_stats(a, synthetic_checkpoints(), seed);
      write_stats_lines(out, recs);
    }
    return path("stats.jsonl");
  }

  std::string write_registry(const std::vector<ArchInfo>& archs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& a : archs) {
      j.push_back({{"model_id", a.model_id},
                   {"n_layers", a.n_layers},
                   {"hidden_dim", a.hidden_dim},
                   {"n_heads", a.n_heads},
                   {"intermediate_dim", a.intermediate_dim}});
    }
    std::ofstream(path("registry.json")) << j.dump();
    return path("registry.json");
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  cli::RunConfig config(const std::string& cmd, const std::string& input, const std::string& out) const {
    cli::RunConfig c;
    c.command = cmd;
    c.input = input;
    c.out = path(out);
    c.plots = false;
    return c;
  }

  fs::path dir_;
};

const std::vector<ArchInfo> kTwelve = {{"small", 6, 512, 8, 2048}, {"mid", 6, 1024, 16, 4096}};

}  // namespace

TEST_F(CommandTest, FitSyntheticLayers) {
  const auto stats = write_stats(kTwelve);
  auto c = config("report", stats, "r1");
  ASSERT_EQ(cli::run(c), 0);
  std::ifstream in(path("r1/fit/fits.json"));
  const auto fits = read_fits(in);
  ASSERT_EQ(fits.size(), 12u);
  double mean = 0;
  for (const auto& f : fits) mean += f.r_squared.value_or(0.0) / 12;
  EXPECT_GE(mean, 0.98);
  EXPECT_TRUE(fs::exists(path("r1/peaks/peaks.json")));
  EXPECT_TRUE(fs::exists(path("r1/peaks/lambert_surface.csv")));
  EXPECT_TRUE(fs::exists(path("r1/fit/aic_comparison.csv")));
  EXPECT_TRUE(fs::exists(path("r1/trajectory/trajectories.csv")));
  EXPECT_FALSE(fs::exists(path("r1/fit/r2_heatmap.svg")));

  c.out = path("r2");
  c.threads = 3;
  ASSERT_EQ(cli::run(c), 0);
  EXPECT_EQ(slurp(path("r1/fit/fits.json")), slurp(path("r2/fit/fits.json")));
  EXPECT_EQ(slurp(path("r1/peaks/peaks.json")), slurp(path("r2/peaks/peaks.json")));
}

TEST_F(CommandTest, FitFromLongCsv) {
  const auto stats = write_stats({kTwelve[0]});
  ASSERT_EQ(cli::run(config("trajectory", stats, "t")), 0);
  ASSERT_EQ(cli::run(config("fit", path("t/trajectories.csv"), "f")), 0);
  std::ifstream in(path("f/fits.json"));
  EXPECT_EQ(read_fits(in).size(), 6u);
}

TEST_F(CommandTest, EmptyStatsIsInputError) {
  std::ofstream(path("empty.jsonl")).close();
  EXPECT_EQ(cli::run(config("fit", path("empty.jsonl"), "o")), 1);
  EXPECT_EQ(cli::run(config("fit", path("missing.jsonl"), "o")), 1);
  EXPECT_EQ(cli::run(config("bogus", "", "o")), 1);
}

TEST_F(CommandTest, TooFewPointsIsPartialFailure) {
  const auto stats = write_stats({kTwelve[0]});
  auto c = config("fit", stats, "f");
  c.min_points = 1000;
  EXPECT_EQ(cli::run(c), 2);
  EXPECT_NE(slurp(path("f/fit_failures.csv")).find("small,1,"), std::string::npos);
}

TEST_F(CommandTest, PeaksHorizonAndRegime) {
  const std::vector<FitRecord> fits = {{"m", 1, {1.0, 0.0, 1e-3, 1.0, 0.0}, 0.99, 0, 0, 10, true},
                                       {"m", 2, {1.0, 0.5, 1e-4, 0.1, 0.0}, 0.99, 0, 0, 10, true}};
  std::ofstream(path("fits.json")) << [&] {
    std::ostringstream o;
    write_fits(o, fits);
    return o.str();
  }();
  ASSERT_EQ(cli::run(config("peaks", path("fits.json"), "p1")), 0);
  const auto regimes = slurp(path("p1/regimes.csv"));
  EXPECT_NE(regimes.find("m,1,log_increase,"), std::string::npos);
  EXPECT_NE(regimes.find("m,2,early_peak,"), std::string::npos);

  // Peak of layer 2 is near t = 2.27e4 (x* ~ 2.37); shrinking the horizon
  // below it flips only the horizon-dependent fields.
  auto c = config("peaks", path("fits.json"), "p2");
  c.horizon = 1e4;
  ASSERT_EQ(cli::run(c), 0);
  const auto j1 = nlohmann::json::parse(slurp(path("p1/peaks.json")));
  const auto j2 = nlohmann::json::parse(slurp(path("p2/peaks.json")));
  ASSERT_EQ(j1["reports"].size(), j2["reports"].size());
  for (std::size_t i = 0; i < j1["reports"].size(); ++i) {
    auto a = j1["reports"][i], b = j2["reports"][i];
    ASSERT_EQ(a["exists"], b["exists"]);
    if (!a["t_peak"].is_null()) {
      // The numeric search interval scales with the horizon.
      EXPECT_NEAR(a["t_peak"].get<double>(), b["t_peak"].get<double>(), 1e-8 * a["t_peak"].get<double>() + 1e-9);
    }
    for (const char* k : {"within_training", "t_peak", "peak_value"}) {
      a.erase(k);
      b.erase(k);
    }
    EXPECT_EQ(a, b);
  }
  EXPECT_EQ(j2["layers"][1]["regime"], "log_increase");
  EXPECT_TRUE(j1["reports"][7]["within_training"].get<bool>());
  EXPECT_FALSE(j2["reports"][7]["within_training"].get<bool>());
}

TEST_F(CommandTest, PeaksBadInput) {
  EXPECT_EQ(cli::run(config("peaks", path("nope.json"), "p")), 1);
  std::ofstream(path("bad.json")) << "[{]";
  EXPECT_EQ(cli::run(config("peaks", path("bad.json"), "p")), 1);
  auto c = config("peaks", path("bad.json"), "p");
  c.mode = "wrong";
  EXPECT_EQ(cli::run(c), 1);
}

TEST_F(CommandTest, PredictRequiresRegistryAndRows) {
  const auto stats = write_stats({kTwelve[0]});
  ASSERT_EQ(cli::run(config("report", stats, "r")), 0);
  auto c = config("predict", path("r/fit/fits.json"), "p");
  EXPECT_EQ(cli::run(c), 1);  // no registry
  c.arch_registry = write_registry({kTwelve[0]});
  EXPECT_EQ(cli::run(c), 1);  // 6 rows
}

TEST_F(CommandTest, PredictDeterministic) {
  const std::vector<ArchInfo> archs = {{"a", 4, 256, 4, 1024}, {"b", 6, 512, 8, 2048}, {"c", 8, 768, 12, 3072}};
  const auto stats = write_stats(archs);
  ASSERT_EQ(cli::run(config("report", stats, "r")), 0);
  auto c = config("predict", path("r/fit/fits.json"), "p1");
  c.arch_registry = write_registry(archs);
  ASSERT_EQ(cli::run(c), 0);
  c.out = path("p2");
  c.threads = 2;
  ASSERT_EQ(cli::run(c), 0);
  for (const char* f : {"ml_metrics.csv", "ml_details.csv"}) {
    EXPECT_EQ(slurp(path(std::string("p1/") + f)), slurp(path(std::string("p2/") + f))) << f;
  }
  const auto table = slurp(path("p1/ml_metrics.csv"));
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 6);
  EXPECT_TRUE(fs::exists(path("p1/models/K_gradient_boosting.json")));

  // Registry missing a model seen in the fits.
  c.arch_registry = write_registry({archs[0], archs[1]});
  c.out = path("p3");
  EXPECT_EQ(cli::run(c), 1);
}

TEST_F(CommandTest, StatsFromMat1) {
  std::vector<double> v(4 * 8, 0.5);
  v[13] = -300.0;
  {
    std::ofstream out(path("x.mat"), std::ios::binary);
    write_raw_tensor(out, ActivationTensor(4, 8, v));
  }
  auto c = config("stats", path("x.mat"), "s");
  c.model_id = "toy";
  c.step = 1000;
  c.layer = 2;
  ASSERT_EQ(cli::run(c), 0);
  const auto verdicts = slurp(path("s/verdicts.csv"));
  EXPECT_NE(verdicts.find("toy,1000,2,x,300,0.5,600,0,1"), std::string::npos) << verdicts;
  std::ifstream in(path("s/stats.jsonl"));
  const auto recs = ingest_stats_lines(in);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].top[0].dim, 5u);
}

TEST_F(CommandTest, FeaturesFromRegistry) {
  auto c = config("features", "", "f");
  c.arch_registry = write_registry({{"a", 4, 256, 4, 1024}});
  ASSERT_EQ(cli::run(c), 0);
  bool found = false;
  for (const auto& e : fs::directory_iterator(path("f"))) found = found || e.path().extension() == ".csv";
  EXPECT_TRUE(found);
}
