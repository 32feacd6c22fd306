#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ma/curve.hpp"
#include "ma/error.hpp"
#include "ma/trajectory.hpp"
#include "ma/trf.hpp"

namespace ma {

// ---------------------------------------------------------------------------
// Goodness of fit

struct Goodness {
  double sse = 0.0;
  std::optional<double> r_squared;  // empty when the series is constant
  double aic = 0.0;
  std::size_t n_points = 0;
  int n_params = 0;
};

/// SSE floor used inside the log of the AIC so an exact fit stays finite.
inline constexpr double kAicSseFloor = 1e-300;

/// R^2 = 1 - SSE/SST and AIC = n ln(SSE/n) + 2k. With small_sample the
/// corrected AICc term 2k(k+1)/(n-k-1) is added.
inline Goodness goodness(std::span<const double> observed, std::span<const double> fitted,
                         int n_params, bool small_sample = false) {
  require(observed.size() == fitted.size(), ErrorKind::invalid_input,
          "observed and fitted lengths differ");
  require(observed.size() >= 2, ErrorKind::invalid_input, "goodness needs at least 2 points");
  const std::size_t n = observed.size();
  const double mean = std::accumulate(observed.begin(), observed.end(), 0.0) / static_cast<double>(n);
  double sse = 0.0;
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = observed[i] - fitted[i];
    sse += e * e;
    const double c = observed[i] - mean;
    sst += c * c;
  }
  Goodness g;
  g.sse = sse;
  g.n_points = n;
  g.n_params = n_params;
  if (sst > 0.0) g.r_squared = 1.0 - sse / sst;
  const double nd = static_cast<double>(n);
  g.aic = nd * std::log(std::max(sse / nd, kAicSseFloor)) + 2.0 * n_params;
  if (small_sample) {
    const double k = n_params;
    require(nd - k - 1.0 > 0.0, ErrorKind::invalid_input, "AICc needs n > k + 1");
    g.aic += 2.0 * k * (k + 1.0) / (nd - k - 1.0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Five-parameter curve fits

struct ParamBounds {
  FitParams lower;
  FitParams upper;

  /// Box used in the unit-scaled space.
  static ParamBounds normalized_default() {
    return {{-100.0, 0.0, 1e-9, 1e-9, -100.0}, {100.0, 50.0, 1e4, 10.0, 100.0}};
  }

  bool contains(const FitParams& p) const {
    const auto v = p.to_array(), lo = lower.to_array(), hi = upper.to_array();
    for (int i = 0; i < FitParams::kCount; ++i) {
      if (!(v[i] >= lo[i] && v[i] <= hi[i])) return false;
    }
    return true;
  }

  FitParams clamp(const FitParams& p) const {
    auto v = p.to_array();
    const auto lo = lower.to_array(), hi = upper.to_array();
    for (int i = 0; i < FitParams::kCount; ++i) v[i] = std::clamp(v[i], lo[i], hi[i]);
    return FitParams::from_array(v);
  }
};

struct FitResult {
  FitParams params;
  double sse = 0.0;
  std::optional<double> r_squared;
  double aic = 0.0;
  std::size_t n_points = 0;
  int n_params = FitParams::kCount;
  bool converged = false;
  int n_starts_tried = 1;
  trf::Status status = trf::Status::max_iterations;
  int iterations = 0;
  /// Normalized-space SSE of every start (NaN when the start failed).
  std::vector<double> start_sse;
};

namespace detail {

struct CurveProblem {
  std::span<const double> t;
  std::span<const double> r;

  Eigen::Index num_residuals() const { return static_cast<Eigen::Index>(t.size()); }

  static FitParams unpack(const trf::Vector& x) { return {x[0], x[1], x[2], x[3], x[4]}; }

  void residuals(const trf::Vector& x, trf::Vector& out) const {
    const FitParams p = unpack(x);
    out.resize(num_residuals());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double xt = p.x_at(t[i]);
      out[static_cast<Eigen::Index>(i)] =
          xt > 0.0 ? p.A * std::exp(-p.lambda * xt) * std::log(xt) + p.K - r[i]
                   : std::numeric_limits<double>::quiet_NaN();
    }
  }

  void jacobian(const trf::Vector& x, trf::Matrix& J) const {
    const FitParams p = unpack(x);
    J.resize(num_residuals(), FitParams::kCount);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto row = eval_jacobian(p, t[i]);
      for (int c = 0; c < FitParams::kCount; ++c) J(static_cast<Eigen::Index>(i), c) = row[c];
    }
  }
};

inline trf::Vector to_vector(const FitParams& p) {
  const auto a = p.to_array();
  return Eigen::Map<const trf::Vector>(a.data(), FitParams::kCount);
}

}  // namespace detail

/// Bounded least-squares fit of the curve from one initial guess. Works in
/// whatever units t and r are given in (normally the unit-scaled space).
inline FitResult fit_bounded_nlls(std::span<const double> t, std::span<const double> r,
                                  const FitParams& init,
                                  const ParamBounds& bounds = ParamBounds::normalized_default(),
                                  const trf::Options& options = {}) {
  require(t.size() == r.size(), ErrorKind::invalid_input, "t and r lengths differ");
  require(t.size() >= FitParams::kCount + 1, ErrorKind::invalid_input,
          "need at least 6 points to fit 5 parameters");
  require(bounds.contains(init), ErrorKind::invalid_input, "initial guess outside bounds");

  const detail::CurveProblem problem{t, r};
  const trf::Bounds box{detail::to_vector(bounds.lower), detail::to_vector(bounds.upper)};
  const trf::Summary s = trf::solve(problem, detail::to_vector(init), box, options);

  FitResult out;
  out.params = detail::CurveProblem::unpack(s.x);
  std::vector<double> fitted(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) fitted[i] = r[i] + s.residuals[static_cast<Eigen::Index>(i)];
  const Goodness g = goodness(r, fitted, FitParams::kCount);
  out.sse = g.sse;
  out.r_squared = g.r_squared;
  out.aic = g.aic;
  out.n_points = g.n_points;
  out.converged = s.converged();
  out.status = s.status;
  out.iterations = s.iterations;
  out.start_sse = {g.sse};
  return out;
}

struct StartGrid {
  std::vector<double> lambda = {0.01, 0.5, 2.0};
  std::vector<double> gamma = {1.0, 5.0, 20.0};
  std::vector<double> t0 = {1e-3, 0.05, 0.3};
  std::size_t max_starts = 81;
};

struct MultistartOptions {
  StartGrid grid;
  ParamBounds bounds = ParamBounds::normalized_default();
  trf::Options solver;
  bool small_sample_aic = false;
  std::size_t min_points = kMinFitPoints;
};

/// Initial guesses over the documented grid for a unit-scaled series:
/// K0 = last value, A0 in {max - last, 2 (max - last), 1}.
inline std::vector<FitParams> start_points(std::span<const double> r_norm,
                                           const MultistartOptions& opt = {}) {
  require(!r_norm.empty(), ErrorKind::invalid_input, "empty series");
  const double last = r_norm.back();
  const double peak = *std::max_element(r_norm.begin(), r_norm.end());
  std::vector<double> amplitudes;
  for (double a : {peak - last, 2.0 * (peak - last), 1.0}) {
    if (std::find(amplitudes.begin(), amplitudes.end(), a) == amplitudes.end()) amplitudes.push_back(a);
  }
  std::vector<FitParams> starts;
  for (double a : amplitudes) {
    for (double lam : opt.grid.lambda) {
      for (double gam : opt.grid.gamma) {
        for (double off : opt.grid.t0) {
          FitParams p = opt.bounds.clamp({a, lam, gam, off, last});
          if (!(p.t0 > 0.0 && p.gamma > 0.0)) continue;
          if (starts.size() < opt.grid.max_starts) starts.push_back(p);
        }
      }
    }
  }
  return starts;
}

/// Normalizes the trajectory, fits from every grid start, and returns the
/// lowest-SSE solution mapped back to raw units.
inline FitResult multistart_fit(const LayerTrajectory& traj, const MultistartOptions& opt = {}) {
  require(traj.points.size() >= opt.min_points, ErrorKind::invalid_input,
          "trajectory has " + std::to_string(traj.points.size()) + " points, need at least " +
              std::to_string(opt.min_points));
  for (const auto& p : traj.points) {
    require(p.ratio > 0.0 && std::isfinite(p.ratio), ErrorKind::invalid_input,
            "ratios must be positive and finite");
  }
  const NormalizedSeries ns = normalize(traj);
  const auto starts = start_points(ns.r, opt);

  std::optional<FitResult> best;
  std::vector<double> start_sse;
  std::string diagnostics;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    try {
      FitResult fr = fit_bounded_nlls(ns.t, ns.r, starts[i], opt.bounds, opt.solver);
      start_sse.push_back(fr.sse);
      if (!std::isfinite(fr.sse)) {
        diagnostics += " start " + std::to_string(i) + ": non-finite SSE;";
        continue;
      }
      if (!best || fr.sse < best->sse) best = std::move(fr);
    } catch (const Error& e) {
      start_sse.push_back(std::numeric_limits<double>::quiet_NaN());
      diagnostics += " start " + std::to_string(i) + ": " + e.what() + ";";
    }
  }
  if (!best) {
    fail(ErrorKind::fit_failed, "all " + std::to_string(starts.size()) + " starts failed for " +
                                    traj.model_id + " layer " + std::to_string(traj.layer) + ":" +
                                    diagnostics);
  }

  FitResult out = *best;
  out.params = denormalize_params(best->params, ns.info);
  const auto steps = traj.steps();
  const auto ratios = traj.ratios();
  std::vector<double> fitted(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) fitted[i] = eval_model(out.params, steps[i]);
  const Goodness g = goodness(ratios, fitted, FitParams::kCount, opt.small_sample_aic);
  out.sse = g.sse;
  out.r_squared = g.r_squared;
  out.aic = g.aic;
  out.n_points = g.n_points;
  out.n_starts_tried = static_cast<int>(starts.size());
  out.start_sse = std::move(start_sse);
  return out;
}

// ---------------------------------------------------------------------------
// Rival hypotheses: three-parameter rise-then-plateau step functions

enum class RivalKind { step_linear, step_quadratic };

inline const char* to_string(RivalKind k) {
  return k == RivalKind::step_linear ? "step_linear" : "step_quadratic";
}

struct RivalFit {
  RivalKind kind = RivalKind::step_linear;
  double a = 0.0;
  double b = 0.0;
  double tau = 0.0;
  double sse = 0.0;
  std::optional<double> r_squared;
  double aic = 0.0;
  std::size_t n_points = 0;
  int n_params = 3;
  bool converged = false;
};

/// a + b min(t, tau)   or   a + b min(t, tau)^2
inline double eval_rival(RivalKind kind, double a, double b, double tau, double t) {
  const double u = std::min(t, tau);
  return kind == RivalKind::step_linear ? a + b * u : a + b * u * u;
}

namespace detail {

struct RivalProblem {
  RivalKind kind;
  std::span<const double> t;
  std::span<const double> r;

  Eigen::Index num_residuals() const { return static_cast<Eigen::Index>(t.size()); }

  void residuals(const trf::Vector& x, trf::Vector& out) const {
    out.resize(num_residuals());
    for (std::size_t i = 0; i < t.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = eval_rival(kind, x[0], x[1], x[2], t[i]) - r[i];
  }

  void jacobian(const trf::Vector& x, trf::Matrix& J) const {
    J.resize(num_residuals(), 3);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const bool plateau = t[i] > x[2];
      const double u = plateau ? x[2] : t[i];
      J(row, 0) = 1.0;
      if (kind == RivalKind::step_linear) {
        J(row, 1) = u;
        J(row, 2) = plateau ? x[1] : 0.0;
      } else {
        J(row, 1) = u * u;
        J(row, 2) = plateau ? 2.0 * x[1] * x[2] : 0.0;
      }
    }
  }
};

/// Closed-form (a, b) for a fixed breakpoint; returns SSE.
inline double linear_fit_for_tau(RivalKind kind, std::span<const double> t, std::span<const double> r,
                                 double tau, double& a, double& b) {
  const std::size_t n = t.size();
  double su = 0, sr = 0;
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double m = std::min(t[i], tau);
    u[i] = kind == RivalKind::step_linear ? m : m * m;
    su += u[i];
    sr += r[i];
  }
  const double mu = su / n, mr = sr / n;
  double suu = 0, sur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    suu += (u[i] - mu) * (u[i] - mu);
    sur += (u[i] - mu) * (r[i] - mr);
  }
  b = suu > 0 ? sur / suu : 0.0;
  a = mr - b * mu;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = r[i] - (a + b * u[i]);
    sse += e * e;
  }
  return sse;
}

}  // namespace detail

/// Fits a step rival: breakpoint scanned over the observed steps with a
/// closed-form (a, b) at each, then refined jointly by the bounded solver.
inline RivalFit fit_rival(const LayerTrajectory& traj, RivalKind kind,
                          std::size_t min_points = kMinFitPoints,
                          const trf::Options& solver = {}) {
  require(traj.points.size() >= min_points, ErrorKind::invalid_input,
          "trajectory too short for rival fit");
  const NormalizedSeries ns = normalize(traj);
  const std::span<const double> t = ns.t, r = ns.r;

  double best_sse = std::numeric_limits<double>::infinity();
  double a0 = 0, b0 = 0, tau0 = t.back();
  for (double tau : t) {
    double a, b;
    const double sse = detail::linear_fit_for_tau(kind, t, r, tau, a, b);
    if (sse < best_sse) {
      best_sse = sse;
      a0 = a;
      b0 = b;
      tau0 = tau;
    }
  }

  constexpr double kCoefBound = 1e6;
  const double t_lo = *std::min_element(t.begin(), t.end());
  const double t_hi = *std::max_element(t.begin(), t.end());
  trf::Bounds box{trf::Vector(3), trf::Vector(3)};
  box.lower << -kCoefBound, -kCoefBound, t_lo;
  box.upper << kCoefBound, kCoefBound, std::max(t_hi, t_lo + 1e-12);
  trf::Vector x0(3);
  x0 << std::clamp(a0, -kCoefBound, kCoefBound), std::clamp(b0, -kCoefBound, kCoefBound),
      std::clamp(tau0, box.lower[2], box.upper[2]);
  const detail::RivalProblem problem{kind, t, r};
  const trf::Summary s = trf::solve(problem, x0, box, solver);

  RivalFit out;
  out.kind = kind;
  const double T = ns.info.t_scale, R = ns.info.r_scale;
  out.a = R * s.x[0];
  out.b = kind == RivalKind::step_linear ? R * s.x[1] / T : R * s.x[1] / (T * T);
  out.tau = T * s.x[2];
  out.converged = s.converged();

  const auto steps = traj.steps();
  const auto ratios = traj.ratios();
  std::vector<double> fitted(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i)
    fitted[i] = eval_rival(kind, out.a, out.b, out.tau, steps[i]);
  const Goodness g = goodness(ratios, fitted, 3);
  out.sse = g.sse;
  out.r_squared = g.r_squared;
  out.aic = g.aic;
  out.n_points = g.n_points;
  return out;
}

// ---------------------------------------------------------------------------
// AIC ranking

struct ModelScore {
  std::string label;
  double aic = 0.0;
  int n_params = 0;
  double sse = 0.0;
  std::size_t n_points = 0;
};

inline ModelScore score(const FitResult& r, std::string label = "log_modulated") {
  return {std::move(label), r.aic, r.n_params, r.sse, r.n_points};
}

inline ModelScore score(const RivalFit& r) {
  return {to_string(r.kind), r.aic, r.n_params, r.sse, r.n_points};
}

/// Indices of the candidates in ascending AIC; ties go to fewer parameters,
/// then lower SSE.
inline std::vector<std::size_t> compare_aic(std::span<const ModelScore> results) {
  require(results.size() >= 2, ErrorKind::invalid_input, "compare_aic needs at least two results");
  for (const auto& r : results) {
    require(r.n_points == results.front().n_points, ErrorKind::invalid_input,
            "results were fitted on different series (n_points differ)");
  }
  std::vector<std::size_t> order(results.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const ModelScore& a = results[i];
    const ModelScore& b = results[j];
    if (a.aic != b.aic) return a.aic < b.aic;
    if (a.n_params != b.n_params) return a.n_params < b.n_params;
    return a.sse < b.sse;
  });
  return order;
}

}  // namespace ma
