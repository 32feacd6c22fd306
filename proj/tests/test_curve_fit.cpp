#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ma/model_fit.hpp"
#include "oracles.hpp"

using namespace ma;

TEST(EvalModel, LogOfOneGivesK) {
  const FitParams p{7.0, 0.3, 2.0, 1.0, 4.5};
  EXPECT_DOUBLE_EQ(eval_model(p, 0.0), 4.5);
}

TEST(EvalModel, LogOfE) {
  const FitParams p{1, 0, 1, 1, 0};
  EXPECT_NEAR(eval_model(p, std::numbers::e - 1.0), 1.0, 1e-15);
}

TEST(EvalModel, ZeroAmplitude) {
  const FitParams p{0, 0.3, 2.0, 0.5, 3.0};
  for (double t : {0.0, 1.0, 1e5}) EXPECT_EQ(eval_model(p, t), 3.0);
}

TEST(EvalModel, DomainError) {
  const FitParams p{1, 0, -1, 0.5, 0};
  try {
    eval_model(p, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
  EXPECT_THROW(eval_jacobian(p, 1.0), Error);
}

TEST(Jacobian, KPartialIsOne) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const FitParams p{rng.uniform(-5, 5), rng.uniform(0, 3), rng.uniform(0.1, 5), rng.uniform(0.1, 2), 0};
    EXPECT_EQ(eval_jacobian(p, rng.uniform(0, 10))[4], 1.0);
  }
}

TEST(Jacobian, AtXEqualOne) {
  const FitParams p{2.5, 0.7, 3.0, 1.0, 0};
  const auto j = eval_jacobian(p, 0.0);
  EXPECT_EQ(j[0], 0.0);
  EXPECT_NEAR(j[3], 2.5 * std::exp(-0.7), 1e-15);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const FitParams p{rng.uniform(0.2, 2), rng.uniform(0.01, 3), rng.uniform(0.5, 30), rng.uniform(0.05, 1),
                      rng.uniform(-1, 1)};
    const double t = rng.uniform(0.01, 1.0);
    const auto j = eval_jacobian(p, t);
    for (int k = 0; k < 5; ++k) {
      const double fd = oracle::fd_partial(p, t, k);
      EXPECT_LE(std::abs(j[k] - fd), 1e-6 * std::max(std::abs(j[k]), 1e-6)) << "param " << k;
    }
  }
}

TEST(Goodness, PerfectFit) {
  const std::vector<double> y = {1, 2, 3};
  const auto g = goodness(y, y, 2);
  EXPECT_EQ(*g.r_squared, 1.0);
  EXPECT_EQ(g.sse, 0.0);
  EXPECT_TRUE(std::isfinite(g.aic));
  EXPECT_NEAR(g.aic, 3 * std::log(kAicSseFloor) + 4, 1e-9);
}

TEST(Goodness, MeanPredictor) {
  const std::vector<double> y = {1, 2, 3}, m = {2, 2, 2};
  EXPECT_NEAR(*goodness(y, m, 1).r_squared, 0.0, 1e-15);
}

TEST(Goodness, HandArithmetic) {
  const std::vector<double> y = {1, 2, 3}, f = {1, 2, 4};
  const auto g = goodness(y, f, 5);
  EXPECT_DOUBLE_EQ(g.sse, 1.0);
  EXPECT_DOUBLE_EQ(*g.r_squared, 0.5);
  EXPECT_NEAR(g.aic, 3 * std::log(1.0 / 3) + 10, 1e-12);
}

TEST(Goodness, ConstantSeriesHasNoR2) {
  const std::vector<double> y = {2, 2, 2}, f = {2, 2, 2.1};
  EXPECT_FALSE(goodness(y, f, 1).r_squared.has_value());
}

namespace {

struct Quadratic {
  // r_i = x0 - c_i, minimized at x0 = mean(c) unless bounded.
  std::vector<double> c;
  Eigen::Index num_residuals() const { return static_cast<Eigen::Index>(c.size()); }
  void residuals(const trf::Vector& x, trf::Vector& r) const {
    r.resize(num_residuals());
    for (std::size_t i = 0; i < c.size(); ++i) r[i] = x[0] * x[0] - c[i];
  }
  void jacobian(const trf::Vector& x, trf::Matrix& J) const {
    J.resize(num_residuals(), 1);
    J.setConstant(2 * x[0]);
  }
};

}  // namespace

TEST(Trf, UnconstrainedMinimum) {
  const Quadratic q{{3.0, 5.0}};
  trf::Vector x0(1);
  x0 << 1.0;
  trf::Bounds b{trf::Vector::Constant(1, 0.0), trf::Vector::Constant(1, 10.0)};
  const auto s = trf::solve(q, x0, b);
  EXPECT_NEAR(s.x[0], 2.0, 1e-8);
  EXPECT_TRUE(s.converged());
}

TEST(Trf, ActiveUpperBound) {
  const Quadratic q{{16.0}};
  trf::Vector x0(1);
  x0 << 1.0;
  trf::Bounds b{trf::Vector::Constant(1, 0.0), trf::Vector::Constant(1, 3.0)};
  const auto s = trf::solve(q, x0, b);
  EXPECT_NEAR(s.x[0], 3.0, 1e-6);
  EXPECT_LE(s.x[0], 3.0);
}

TEST(Trf, CostMonotone) {
  const Quadratic q{{3.0, 5.0, 9.0}};
  trf::Vector x0(1);
  x0 << 0.3;
  trf::Options o;
  o.record_history = true;
  const auto s = trf::solve(q, x0, {trf::Vector::Constant(1, 0.0), trf::Vector::Constant(1, 10.0)}, o);
  for (std::size_t i = 1; i < s.cost_history.size(); ++i) EXPECT_LT(s.cost_history[i], s.cost_history[i - 1]);
}

TEST(FitBoundedNlls, ExactDataIsFixedPoint) {
  const FitParams p{0.8, 1.2, 6.0, 0.4, 0.3};
  std::vector<double> t, r;
  for (int i = 0; i < 37; ++i) {
    t.push_back(i / 36.0);
    r.push_back(eval_model(p, t.back()));
  }
  const auto fr = fit_bounded_nlls(t, r, p);
  EXPECT_LE(fr.sse, 1e-18);
}

TEST(FitBoundedNlls, NoiseFreeRecoveryFromPerturbedStart) {
  const FitParams p{0.8, 1.2, 6.0, 0.4, 0.3};
  std::vector<double> t, r;
  for (int i = 0; i < 37; ++i) {
    t.push_back(i / 36.0);
    r.push_back(eval_model(p, t.back()));
  }
  const FitParams init{0.7, 1.0, 5.0, 0.5, 0.35};
  const auto fr = fit_bounded_nlls(t, r, init);
  for (int i = 0; i <= 200; ++i) {
    const double tt = i / 200.0;
    EXPECT_LT(std::abs(eval_model(fr.params, tt) - eval_model(p, tt)), 1e-6);
  }
}

TEST(FitBoundedNlls, InitOutsideBounds) {
  const std::vector<double> t = {0, .2, .4, .6, .8, 1}, r = {1, 2, 3, 4, 5, 6};
  const FitParams bad{1, -1, 1, 1, 0};
  try {
    fit_bounded_nlls(t, r, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_input);
  }
}

TEST(FitBoundedNlls, LambdaStaysNonnegative) {
  // Exponentially growing data would prefer lambda < 0.
  std::vector<double> t, r;
  for (int i = 0; i < 30; ++i) {
    t.push_back(i / 29.0);
    r.push_back(std::exp(2.0 * t.back()) * std::log(1.5 + t.back()));
  }
  const auto fr = fit_bounded_nlls(t, r, {1, 0.5, 1, 0.5, 0});
  EXPECT_GE(fr.params.lambda, 0.0);
}

TEST(MultistartFit, NoisyRecovery) {
  Rng rng(12);
  for (int i = 0; i < 6; ++i) {
    const auto pn = oracle::draw_normalized(rng, i % 2 == 0);
    const auto traj = oracle::noisy_trajectory(pn, 37, 0.02, 100 + i);
    const auto fr = multistart_fit(traj);
    ASSERT_TRUE(fr.r_squared);
    EXPECT_GE(*fr.r_squared, 0.98);
  }
}

TEST(MultistartFit, LogIncreaseHasSmallLambda) {
  const FitParams pn{0.6, 0.0, 20.0, 0.1, 0.2};
  const auto traj = oracle::noisy_trajectory(pn, 37, 0.01, 5);
  EXPECT_LE(multistart_fit(traj).params.lambda, 0.05);
}

TEST(MultistartFit, EarlyPeakLocation) {
  Rng rng(21);
  for (int i = 0; i < 4; ++i) {
    const auto pn = oracle::draw_normalized(rng, true);
    FitParams raw;
    const auto traj = oracle::noisy_trajectory(pn, 37, 0.0, 1, &raw);
    const auto fr = multistart_fit(traj);
    const double truth = oracle::argmax(raw, 143000.0);
    const double fitted = oracle::argmax(fr.params, 143000.0);
    EXPECT_LE(std::abs(fitted - truth), 0.05 * truth);
  }
}

TEST(MultistartFit, ConstantSeries) {
  LayerTrajectory t{"m", 1, {}};
  for (int i = 0; i < 30; ++i) t.points.push_back({1000 * i, 5.0, 1});
  const auto fr = multistart_fit(t);
  EXPECT_FALSE(fr.r_squared.has_value());
  for (const auto& p : t.points) EXPECT_NEAR(eval_model(fr.params, static_cast<double>(p.step)), 5.0, 1e-6);
}

TEST(MultistartFit, TooFewPoints) {
  LayerTrajectory t{"m", 1, {}};
  for (int i = 0; i < 26; ++i) t.points.push_back({1000 * i, 5.0 + i, 1});
  EXPECT_THROW(multistart_fit(t), Error);
}

TEST(MultistartFit, StartGridSize) {
  const std::vector<double> r = {0.1, 0.5, 1.0, 0.8};
  EXPECT_EQ(start_points(r).size(), 81u);
}

TEST(Rival, ExactStepLinear) {
  LayerTrajectory t{"m", 1, {}};
  for (int i = 0; i < 30; ++i) {
    const double s = 5000.0 * i;
    t.points.push_back({static_cast<std::int64_t>(s), eval_rival(RivalKind::step_linear, 3, 0.001, 60000, s), 1});
  }
  const auto r = fit_rival(t, RivalKind::step_linear);
  EXPECT_LT(r.sse, 1e-12);
  EXPECT_EQ(r.n_params, 3);
}

TEST(Rival, ConstantDataHasZeroSlope) {
  LayerTrajectory t{"m", 1, {}};
  for (int i = 0; i < 30; ++i) t.points.push_back({1000 * i, 7.0, 1});
  for (auto k : {RivalKind::step_linear, RivalKind::step_quadratic}) {
    const auto r = fit_rival(t, k);
    EXPECT_NEAR(r.b * std::pow(r.tau, k == RivalKind::step_linear ? 1 : 2), 0.0, 1e-8);
    EXPECT_NEAR(r.a, 7.0, 1e-8);
  }
}

TEST(Rival, LogCurveBeatsRivalsOnAic) {
  const FitParams pn{0.8, 0.0, 30.0, 0.05, 0.1};
  const auto traj = oracle::noisy_trajectory(pn, 37, 0.01, 3);
  const auto main = multistart_fit(traj);
  for (auto k : {RivalKind::step_linear, RivalKind::step_quadratic}) EXPECT_LT(main.aic, fit_rival(traj, k).aic);
}

TEST(CompareAic, PenaltyBreaksEqualSse) {
  const std::vector<ModelScore> s = {{"five", 0, 5, 1.0, 30}, {"three", 0, 3, 1.0, 30}};
  std::vector<ModelScore> scored = s;
  for (auto& m : scored) m.aic = 30 * std::log(m.sse / 30) + 2 * m.n_params;
  EXPECT_EQ(compare_aic(scored).front(), 1u);
}

TEST(CompareAic, SmallerSseFirst) {
  std::vector<ModelScore> s = {{"a", 0, 3, 2.0, 30}, {"b", 0, 3, 1.0, 30}};
  for (auto& m : s) m.aic = 30 * std::log(m.sse / 30) + 2 * m.n_params;
  EXPECT_EQ(compare_aic(s), (std::vector<std::size_t>{1, 0}));
}

TEST(CompareAic, MismatchedPoints) {
  const std::vector<ModelScore> s = {{"a", 0, 3, 2.0, 30}, {"b", 0, 3, 1.0, 29}};
  EXPECT_THROW(compare_aic(s), Error);
}

TEST(CompareAic, SyntheticLayersPreferLogCurve) {
  Rng rng(31);
  for (int i = 0; i < 3; ++i) {
    const auto traj = oracle::noisy_trajectory(oracle::draw_normalized(rng, i == 1), 37, 0.02, 40 + i);
    const auto main = multistart_fit(traj);
    const std::vector<ModelScore> s = {score(main), score(fit_rival(traj, RivalKind::step_linear)),
                                       score(fit_rival(traj, RivalKind::step_quadratic))};
    EXPECT_EQ(compare_aic(s).front(), 0u);
  }
}
