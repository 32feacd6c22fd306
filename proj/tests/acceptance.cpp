// Acceptance run: one PASS/FAIL line per criterion; nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "ma/explain.hpp"
#include "ma/features.hpp"
#include "ma/ml_pipeline.hpp"
#include "ma/model_fit.hpp"
#include "ma/peak.hpp"
#include "ma/serialize.hpp"
#include "oracles.hpp"

using namespace ma;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void synthetic_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  int good = 0;
  double worst = 1.0;
  for (int i = 0; i < 50; ++i) {
    const FitParams pn = oracle::draw_normalized(rng, i % 2 == 1);
    const auto traj = oracle::noisy_trajectory(pn, 37, 0.02, 5000 + i);
    const auto fit = multistart_fit(traj);
    const double r2 = fit.r_squared.value_or(0.0);
    worst = std::min(worst, r2);
    good += r2 >= 0.98;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(good >= 48 && secs < 30.0, "synthetic_recovery",
         fmt("%.0f/50 with R^2 >= 0.98 (min %.4f), %.2f s", good, worst, secs));
}

void jacobian_check() {
  Rng rng(1002);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    FitParams p = oracle::draw_normalized(rng, i % 2 == 0);
    const double t = rng.uniform(0.02, 0.98);
    const auto J = eval_jacobian(p, t);
    for (int k = 0; k < 5; ++k) {
      const double fd = oracle::fd_partial(p, t, k);
      worst = std::max(worst, std::abs(J[k] - fd) / std::max(std::abs(fd), 1e-8));
    }
  }
  report(worst < 1e-6, "jacobian", fmt("max relative error %.3g over 100 points x 5 partials", worst));
}

void lambert() {
  Rng rng(1003);
  double worst0 = 0.0, worst1 = 0.0;
  for (int i = 0; i < 1000; ++i) {
    // W0 over [-1/e, 1e3] (dense near the branch point), W-1 over [-1/e, 0).
    const double x0 = i < 500 ? -kInvE + std::pow(rng.uniform(), 4) * kInvE : rng.uniform(0.0, 1e3);
    const double x1 = -kInvE * rng.uniform(1e-12, 1.0);
    const double w0 = lambert_w(WBranch::principal, x0);
    const double w1 = lambert_w(WBranch::minus_one, x1);
    worst0 = std::max(worst0, std::abs(w0 * std::exp(w0) - x0));
    worst1 = std::max(worst1, std::abs(w1 * std::exp(w1) - x1));
  }
  const double b0 = std::abs(lambert_w(WBranch::principal, -kInvE) + 1.0);
  const double b1 = std::abs(lambert_w(WBranch::minus_one, -kInvE) + 1.0);
  report(worst0 < 1e-12 && worst1 < 1e-12 && b0 < 1e-8 && b1 < 1e-8, "lambert_w",
         fmt("max residual W0 %.3g, W-1 %.3g", worst0, worst1) + fmt("; branch point errors %.3g, %.3g", b0, b1));
}

void peaks() {
  Rng rng(1004);
  int agree = 0;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    FitParams p;
    p.A = rng.uniform(0.1, 5.0);
    p.lambda = rng.uniform(0.01, 5.0);
    p.gamma = rng.uniform(5.0, 50.0);
    p.t0 = rng.uniform(0.01, 1.0);
    p.K = rng.uniform(-1.0, 1.0);
    const auto c = peak_corrected(p, 1.0);
    const auto n = peak_numeric(p, 10.0, 1.0);
    if (c.exists && n.exists) {
      const double rel = std::abs(*c.t_peak - *n.t_peak) / *n.t_peak;
      worst = std::max(worst, rel);
      agree += rel <= kPeakAgreementTolerance;
    } else {
      agree += c.exists == n.exists;
    }
  }
  const auto below = peak_paper_mode({1.0, kInvE - 1e-9, 1.0, 0.1, 0.0}, 1.0);
  const auto above = peak_paper_mode({1.0, kInvE + 1e-9, 1.0, 0.1, 0.0}, 1.0);
  const bool flips = below.first.exists && below.second.exists && !above.first.exists && !above.second.exists;
  const auto adj = adjudicate_peaks({1.0, 0.5, 10.0, 0.1, 0.0}, 1.0);
  const auto j = adjudication_json("m", 1, adj);
  const bool reported = j.contains("agrees_with_numeric") && j["modes_disagree"].get<bool>() &&
                        j["agrees_with_numeric"]["corrected"].get<bool>() &&
                        !j["agrees_with_numeric"]["paper_w0"].get<bool>();
  report(agree == 200 && flips && reported, "peak_adjudication",
         fmt("corrected vs numeric %.0f/200 (max rel diff %.3g); paper existence flip at 1/e: ", agree, worst) +
             (flips ? "yes" : "no") + "; disagreement report " + (reported ? "emitted" : "missing"));
}

void aic_selection() {
  Rng rng(1005);
  int first = 0;
  for (int i = 0; i < 100; ++i) {
    const FitParams pn = oracle::draw_normalized(rng, i % 2 == 1);
    const auto traj = oracle::noisy_trajectory(pn, 37, 0.02, 7000 + i);
    const auto fit = multistart_fit(traj);
    const std::vector<ModelScore> scores = {score(fit), score(fit_rival(traj, RivalKind::step_linear)),
                                            score(fit_rival(traj, RivalKind::step_quadratic))};
    first += compare_aic(scores).front() == 0;
  }
  report(first >= 90, "aic_selection", fmt("log-modulated curve ranked first on %.0f/100 layers", first));
}

void tree_shap_check() {
  Rng rng(1006);
  double worst_acc = 0.0, worst_bf = 0.0;
  for (int e = 0; e < 20; ++e) {
    const std::size_t p = 2 + static_cast<std::size_t>(e % 7);
    Matrix X(80, p);
    for (auto& v : X.data) v = rng.normal();
    std::vector<double> y(80);
    for (std::size_t i = 0; i < 80; ++i) {
      y[i] = X(i, 0) * X(i, p - 1) + std::sin(2 * X(i, 0)) + rng.normal(0.0, 0.2);
    }
    TrainedRegressor m;
    if (e % 2 == 0) {
      ForestOptions o;
      o.n_trees = 10;
      m = fit_random_forest(X, y, o, e);
    } else {
      BoostingOptions o;
      o.n_rounds = 30;
      o.learning_rate = 0.2;
      m = fit_gradient_boosting(X, y, o, e);
    }
    for (std::size_t i = 0; i < 10; ++i) {
      const auto x = X.row(i);
      const auto s = tree_shap(m, x);
      const auto b = brute_force_shapley(m.ensemble(), x, p);
      worst_acc = std::max(worst_acc, std::abs(std::accumulate(s.phi.begin(), s.phi.end(), s.base_value) - m.predict(x)));
      for (std::size_t j = 0; j < p; ++j) worst_bf = std::max(worst_bf, std::abs(s.phi[j] - b.phi[j]));
    }
  }
  report(worst_acc < 1e-9 && worst_bf < 1e-9, "tree_shap",
         fmt("max local-accuracy error %.3g, max |TreeSHAP - exhaustive| %.3g over 20 ensembles", worst_acc, worst_bf));
}

void transforms() {
  Rng rng(1007);
  double worst_yj = 0.0, worst_log = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-10.0, 10.0);
    const TargetTransform t{TransformKind::yeo_johnson, rng.uniform(-2.0, 4.0)};
    const std::vector<double> v = {x};
    const auto back = transform_target(t, transform_target(t, v, Direction::forward), Direction::inverse);
    worst_yj = std::max(worst_yj, std::abs(back[0] - x));
    const double z = -1.0 + std::exp(rng.uniform(-5.0, 5.0));
    const std::vector<double> w = {z};
    const TargetTransform l{TransformKind::log1p, 1.0};
    const auto lb = transform_target(l, transform_target(l, w, Direction::forward), Direction::inverse);
    worst_log = std::max(worst_log, std::abs(lb[0] - z));
  }
  report(worst_yj < 1e-9 && worst_log < 1e-9, "transforms",
         fmt("max round-trip error Yeo-Johnson %.3g, log1p %.3g", worst_yj, worst_log));
}

std::vector<ArchInfo> pythia_registry() {
  std::ifstream in(std::string(MA_SOURCE_DIR) + "/data/pythia_arch.json");
  return parse_arch_registry(in);
}

ParamDataset dataset(const std::vector<ArchInfo>& reg, bool noise_only, std::uint64_t seed) {
  ParamDataset ds;
  ds.target_name = noise_only ? "noise" : "smooth";
  ds.transform = TransformKind::log1p;
  Rng rng(seed);
  for (const auto& a : reg) {
    for (int l = 1; l <= a.n_layers; ++l) {
      const auto f = build_features({a, l});
      double y = 0.0;
      if (noise_only) {
        y = rng.uniform(0.0, 3.0);
      } else {
        const double clean = 1.0 + 2.0 * f[0] * (1.0 - f[0]) + 0.3 * f[8] / std::log(5120.0) + 0.2 * f[4] * 10.0;
        y = clean * (1.0 + rng.normal(0.0, 0.01));
      }
      ds.model_ids.push_back(a.model_id);
      ds.layers.push_back(l);
      ds.features.push_back(f);
      ds.targets.push_back(y);
    }
  }
  return ds;
}

void ml_pipeline() {
  const auto reg = pythia_registry();
  const auto smooth = dataset(reg, false, 11);
  const auto noise = dataset(reg, true, 12);
  PipelineOptions opt;
  opt.seed = 42;
  const auto ev = evaluate_and_select(smooth, kAllRegressorKinds, opt);
  const auto ev2 = evaluate_and_select(smooth, kAllRegressorKinds, opt);
  const auto nv = evaluate_and_select(noise, kAllRegressorKinds, opt);
  double best_tree = -1e300, worst_noise = -1e300;
  for (const auto& r : ev.results) {
    if (is_tree_kind(r.kind)) best_tree = std::max(best_tree, r.test_r2);
  }
  for (const auto& r : nv.results) worst_noise = std::max(worst_noise, r.test_r2);
  std::ostringstream a, b;
  write_metric_details(a, std::vector<TargetEvaluation>{ev});
  write_metric_details(b, std::vector<TargetEvaluation>{ev2});
  std::ostringstream ta, tb;
  write_metric_table(ta, std::vector<TargetEvaluation>{ev});
  write_metric_table(tb, std::vector<TargetEvaluation>{ev2});
  const bool same = a.str() == b.str() && ta.str() == tb.str();
  report(smooth.size() == 188 && best_tree >= 0.9 && worst_noise <= 0.2 && same, "ml_pipeline",
         fmt("%.0f rows; best tree test R^2 %.4f; max test R^2 on noise %.4f; reruns ", smooth.size(), best_tree,
             worst_noise) +
             (same ? "identical" : "differ"));
}

}  // namespace

int main() {
  const std::pair<const char*, void (*)()> checks[] = {
      {"synthetic_recovery", synthetic_recovery}, {"jacobian", jacobian_check}, {"lambert_w", lambert},
      {"peak_adjudication", peaks},               {"aic_selection", aic_selection}, {"tree_shap", tree_shap_check},
      {"transforms", transforms},                 {"ml_pipeline", ml_pipeline}};
  for (const auto& [name, fn] : checks) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
    }
  }
  std::printf("%d criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
