#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "ma/trajectory.hpp"

using namespace ma;

namespace {

StatsRecord rec(std::int64_t step, const std::string& input, double max, double med,
                const std::string& model = "m", int layer = 1) {
  StatsRecord r;
  r.model_id = model;
  r.step = step;
  r.layer = layer;
  r.input_id = input;
  r.median_abs = med;
  r.max_abs = max;
  r.seq_len = 4;
  r.hidden_dim = 4;
  r.top = {{max, 1, 0, 0}};
  return r;
}

}  // namespace

TEST(AggregateStep, SingleInput) {
  const std::vector<StatsRecord> r = {rec(0, "a", 200, 1)};
  const auto p = aggregate_step(r);
  EXPECT_DOUBLE_EQ(p.ratio, 200.0);
  EXPECT_EQ(p.n_inputs, 1u);
}

TEST(AggregateStep, MeanOfMaxOverMeanOfMedian) {
  const std::vector<StatsRecord> r = {rec(0, "a", 100, 2), rec(0, "b", 300, 2)};
  EXPECT_DOUBLE_EQ(aggregate_step(r).ratio, 100.0);
}

TEST(AggregateStep, RandomRecordsMatchDirectComputation) {
  Rng rng(2);
  std::vector<StatsRecord> r;
  double smax = 0, smed = 0;
  for (int i = 0; i < 10; ++i) {
    const double med = rng.uniform(0.1, 1.0);
    const double mx = med + rng.uniform(0.0, 500.0);
    smax += mx;
    smed += med;
    r.push_back(rec(7, "in" + std::to_string(i), mx, med));
  }
  EXPECT_NEAR(aggregate_step(r).ratio, (smax / 10) / (smed / 10), 1e-12);
}

TEST(AggregateStep, MixedKeysRejected) {
  const std::vector<StatsRecord> r = {rec(0, "a", 10, 1), rec(1, "a", 10, 1)};
  EXPECT_THROW(aggregate_step(r), Error);
}

TEST(AggregateStep, ZeroMedianGivesInfinity) {
  const std::vector<StatsRecord> r = {rec(0, "a", 3, 0)};
  EXPECT_TRUE(std::isinf(aggregate_step(r).ratio));
}

TEST(BuildTrajectory, OrderedAndOrderInsensitive) {
  std::vector<StatsRecord> r = {rec(2000, "a", 30, 1), rec(0, "a", 10, 1), rec(1000, "a", 20, 1),
                                rec(0, "a", 99, 1, "other")};
  const auto t = build_trajectory(r, "m", 1);
  ASSERT_EQ(t.points.size(), 3u);
  EXPECT_EQ(t.points[0].step, 0);
  EXPECT_EQ(t.points[2].step, 2000);
  EXPECT_DOUBLE_EQ(t.points[1].ratio, 20.0);
  std::reverse(r.begin(), r.end());
  EXPECT_EQ(build_trajectory(r, "m", 1).points, t.points);
}

TEST(BuildTrajectory, DuplicateInputRejected) {
  const std::vector<StatsRecord> r = {rec(0, "a", 10, 1), rec(0, "a", 12, 1)};
  try {
    build_trajectory(r, "m", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(BuildTrajectory, NoMatchIsNotFound) {
  const std::vector<StatsRecord> r = {rec(0, "a", 10, 1)};
  try {
    build_trajectory(r, "m", 9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_found);
  }
}

TEST(Normalize, UnitInterval) {
  std::vector<double> steps, ratios;
  for (int i = 0; i <= 143; ++i) {
    steps.push_back(1000.0 * i);
    ratios.push_back(10.0 + (i == 60 ? 2340.0 : i));
  }
  const auto n = normalize(steps, ratios);
  EXPECT_EQ(n.t.front(), 0.0);
  EXPECT_EQ(n.t.back(), 1.0);
  EXPECT_DOUBLE_EQ(n.info.r_scale, 2350.0);
  EXPECT_EQ(*std::max_element(n.r.begin(), n.r.end()), 1.0);
  const auto back = denormalize_values(n.r, n.info.r_scale);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], ratios[i], 1e-12 * ratios[i]);
  const auto tb = denormalize_values(n.t, n.info.t_scale);
  for (std::size_t i = 0; i < tb.size(); ++i) EXPECT_NEAR(tb[i], steps[i], 1e-12 * std::max(1.0, steps[i]));
}

TEST(Normalize, AllZeroStepsRejected) {
  const std::vector<double> s = {0, 0}, r = {1, 2};
  EXPECT_THROW(normalize(s, r), Error);
}

TEST(DenormalizeParams, Identity) {
  const FitParams p{1.5, 0.2, 3.0, 0.1, -0.5};
  EXPECT_EQ(denormalize_params(p, {1.0, 1.0}), p);
}

TEST(DenormalizeParams, GammaScaling) {
  const FitParams p{1, 0.2, 14.3, 0.1, 0};
  EXPECT_NEAR(denormalize_params(p, {143000.0, 2350.0}).gamma, 1e-4, 1e-18);
}

TEST(DenormalizeParams, FunctionValueEquivalence) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const FitParams pn{rng.uniform(-1, 1), rng.uniform(0, 3), rng.uniform(0.5, 30), rng.uniform(0.01, 1),
                       rng.uniform(-1, 1)};
    const NormalizationInfo info{rng.uniform(1e3, 2e5), rng.uniform(1, 5000)};
    const FitParams pr = denormalize_params(pn, info);
    for (int i = 0; i < 100; ++i) {
      const double t = info.t_scale * i / 99.0;
      const double direct = info.r_scale * eval_model(pn, t / info.t_scale);
      EXPECT_NEAR(eval_model(pr, t), direct, 1e-9 * std::max(1.0, std::abs(direct)));
    }
    const FitParams again = normalize_params(pr, info);
    EXPECT_NEAR(again.gamma, pn.gamma, 1e-12 * pn.gamma);
  }
}

TEST(GenSynthetic, NoiseFreeOnCurve) {
  const FitParams p{50, 0.5, 1e-4, 0.5, 20};
  const std::vector<std::int64_t> steps = {0, 1000, 5000, 20000, 143000};
  const auto t = gen_synthetic(p, steps, 0.0, 1);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    EXPECT_DOUBLE_EQ(t.points[i].ratio, std::max(eval_model(p, steps[i]), 1.0));
  }
}

TEST(GenSynthetic, Deterministic) {
  const FitParams p{50, 0.5, 1e-4, 2.0, 20};
  const std::vector<std::int64_t> steps = {0, 10, 20, 30};
  EXPECT_EQ(gen_synthetic(p, steps, 2.0, 42).points, gen_synthetic(p, steps, 2.0, 42).points);
  EXPECT_NE(gen_synthetic(p, steps, 2.0, 42).points, gen_synthetic(p, steps, 2.0, 43).points);
}

TEST(GenSynthetic, ZeroAmplitudeIsConstant) {
  const FitParams p{0, 0.5, 1e-4, 0.5, 20};
  const std::vector<std::int64_t> steps = {0, 10, 20};
  for (const auto& pt : gen_synthetic(p, steps, 0.0, 1).points) EXPECT_EQ(pt.ratio, 20.0);
}

TEST(GenSynthetic, DomainViolation) {
  const FitParams p{1, 0.5, -1.0, 0.5, 20};
  const std::vector<std::int64_t> steps = {0, 10};
  EXPECT_THROW(gen_synthetic(p, steps, 0.0, 1), Error);
}

TEST(TrajectoryCsv, RoundTrip) {
  LayerTrajectory t{"m", 3, {{0, 10.5, 2}, {512, 80.25, 2}, {143000, 40.0, 1}}};
  std::stringstream ss;
  write_trajectory_csv(ss, t);
  EXPECT_EQ(read_trajectory_csv(ss, "m", 3).points, t.points);
}

TEST(TrajectoryCsv, NonIncreasingStepReportsLine) {
  std::stringstream ss("step,ratio,n_inputs\n0,1,1\n0,2,1\n");
  try {
    read_trajectory_csv(ss, "m", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(std::string(e.what()).find("validation (line 3) [step]: validation"), std::string::npos);
  }
}

TEST(TrajectoryCsv, BadNumberReportsLine) {
  std::stringstream ss("step,ratio,n_inputs\n0,abc,1\n");
  try {
    read_trajectory_csv(ss, "m", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(std::string(e.what()), "parse (line 2): not a number: 'abc'");
  }
}
