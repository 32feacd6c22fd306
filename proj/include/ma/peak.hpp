#pragma once

// Peak timing of the fitted curve.
//
// Two analytic routes are provided. The "paper" route solves
//   x ln x = -lambda  =>  x* = exp(W(-lambda))
// on both real branches, which only exists for lambda <= 1/e. The
// "corrected" route differentiates the curve directly:
//   f'(t) = A gamma e^{-lambda x} (1/x - lambda ln x)
// which vanishes at x ln x = 1/lambda, i.e. x* = exp(W0(1/lambda)), and is a
// maximum when A > 0 and lambda > 0. A dense-grid argmax with golden-section
// refinement arbitrates between them.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ma/curve.hpp"
#include "ma/error.hpp"
#include "ma/lambert_w.hpp"

namespace ma {

inline constexpr double kDefaultHorizon = 143000.0;

enum class PeakMode { paper_w0, paper_wm1, corrected, numeric };

inline const char* to_string(PeakMode m) {
  switch (m) {
    case PeakMode::paper_w0: return "paper_w0";
    case PeakMode::paper_wm1: return "paper_wm1";
    case PeakMode::corrected: return "corrected";
    case PeakMode::numeric: return "numeric";
  }
  return "?";
}

struct PeakReport {
  PeakMode mode = PeakMode::numeric;
  bool exists = false;
  std::optional<double> t_peak;
  std::optional<double> peak_value;
  bool within_training = false;
};

enum class RegimeLabel { early_peak, log_increase };

inline const char* to_string(RegimeLabel r) {
  return r == RegimeLabel::early_peak ? "early_peak" : "log_increase";
}

namespace detail {

inline PeakReport make_peak(PeakMode mode, const FitParams& p, double t_peak, double horizon) {
  PeakReport r;
  r.mode = mode;
  r.exists = true;
  r.t_peak = t_peak;
  r.peak_value = eval_model(p, t_peak);
  r.within_training = t_peak >= 0.0 && t_peak <= horizon;
  return r;
}

inline PeakReport no_peak(PeakMode mode) {
  PeakReport r;
  r.mode = mode;
  return r;
}

}  // namespace detail

/// t_peak = (exp(W(-lambda)) - t0) / gamma on W0 and W-1, as published.
/// Neither exists for lambda > 1/e; W-1 also needs lambda > 0.
inline std::pair<PeakReport, PeakReport> peak_paper_mode(const FitParams& p,
                                                         double horizon = kDefaultHorizon) {
  require(p.gamma > 0.0 && p.lambda >= 0.0, ErrorKind::invalid_input,
          "peak analysis needs gamma > 0 and lambda >= 0");
  PeakReport w0 = detail::no_peak(PeakMode::paper_w0);
  PeakReport wm1 = detail::no_peak(PeakMode::paper_wm1);
  if (p.lambda > kInvE) return {w0, wm1};
  const double arg = p.lambda >= kInvE ? -kInvE : -p.lambda;
  w0 = detail::make_peak(PeakMode::paper_w0, p,
                         (std::exp(lambert_w(WBranch::principal, arg)) - p.t0) / p.gamma, horizon);
  if (p.lambda > 0.0) {
    wm1 = detail::make_peak(PeakMode::paper_wm1, p,
                            (std::exp(lambert_w(WBranch::minus_one, arg)) - p.t0) / p.gamma,
                            horizon);
  }
  return {w0, wm1};
}

/// Maximum from direct differentiation: x* = exp(W0(1/lambda)). Reported
/// only for lambda > 0, A > 0 and x* > t0 (the maximum lies at t > 0).
inline PeakReport peak_corrected(const FitParams& p, double horizon = kDefaultHorizon) {
  require(p.gamma > 0.0 && p.lambda >= 0.0, ErrorKind::invalid_input,
          "peak analysis needs gamma > 0 and lambda >= 0");
  if (!(p.lambda > 0.0) || !(p.A > 0.0)) return detail::no_peak(PeakMode::corrected);
  const double x_star = std::exp(lambert_w(WBranch::principal, 1.0 / p.lambda));
  if (!(x_star > p.t0)) return detail::no_peak(PeakMode::corrected);
  return detail::make_peak(PeakMode::corrected, p, (x_star - p.t0) / p.gamma, horizon);
}

/// Grid used by peak_numeric: 10,000 points on [0, t_max]; linear up to
/// t = 1 and log-spaced beyond it.
inline std::vector<double> peak_search_grid(double t_max, std::size_t n = 10000) {
  require(t_max > 0.0, ErrorKind::invalid_input, "t_max must be positive");
  std::vector<double> g;
  g.reserve(n);
  if (t_max <= 1.0) {
    for (std::size_t i = 0; i < n; ++i) g.push_back(t_max * static_cast<double>(i) / (n - 1));
    return g;
  }
  const std::size_t n_lin = n / 10;
  const std::size_t n_log = n - n_lin;
  for (std::size_t i = 0; i < n_lin; ++i) g.push_back(static_cast<double>(i) / n_lin);
  const double log_hi = std::log(t_max);
  for (std::size_t i = 0; i < n_log; ++i) {
    g.push_back(std::exp(log_hi * static_cast<double>(i) / (n_log - 1)));
  }
  g.back() = t_max;
  return g;
}

/// Numerical argmax of f on [0, t_max]. A maximum on either end of the
/// interval (monotone or flat curve) is reported as no peak.
inline PeakReport peak_numeric(const FitParams& p, double t_max, double horizon = kDefaultHorizon) {
  const auto grid = peak_search_grid(t_max);
  // K shifts f but not its argmax; leaving it out keeps full precision.
  const auto g = [&](double t) {
    const double x = p.x_at(t);
    if (!(x > 0.0)) {
      throw Error(ErrorKind::domain, "gamma*t + t0 <= 0 at t = " + std::to_string(t));
    }
    return p.A * std::exp(-p.lambda * x) * std::log(x);
  };

  std::size_t best = 0;
  double best_val = g(grid[0]);
  double min_val = best_val;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double v = g(grid[i]);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
    min_val = std::min(min_val, v);
  }
  if (best == 0 || best + 1 == grid.size() || best_val == min_val) {
    return detail::no_peak(PeakMode::numeric);
  }

  // Golden-section on the bracketing cells.
  constexpr double kInvPhi = 0.6180339887498949;
  double a = grid[best - 1];
  double b = grid[best + 1];
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double gc = g(c), gd = g(d);
  while (b - a > 1e-10 * std::max(std::abs(0.5 * (a + b)), 1e-300)) {
    if (gc > gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - kInvPhi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + kInvPhi * (b - a);
      gd = g(d);
    }
    if (b - a <= 0.0) break;
  }
  double t_peak = 0.5 * (a + b);
  if (g(grid[best]) > g(t_peak)) t_peak = grid[best];
  return detail::make_peak(PeakMode::numeric, p, t_peak, horizon);
}

/// early_peak iff the numeric argmax over [0, 10 * horizon] is interior and
/// lies before the horizon.
inline RegimeLabel classify_regime(const FitParams& p, double horizon = kDefaultHorizon) {
  require(horizon > 0.0, ErrorKind::invalid_input, "horizon must be positive");
  const PeakReport r = peak_numeric(p, 10.0 * horizon, horizon);
  return (r.exists && *r.t_peak < horizon) ? RegimeLabel::early_peak : RegimeLabel::log_increase;
}

inline constexpr double kPeakAgreementTolerance = 5e-4;

/// All four reports for one parameter set plus whether each analytic mode
/// agrees with the numeric argmax (same existence and, when present,
/// relative difference below kPeakAgreementTolerance).
struct PeakAdjudication {
  std::array<PeakReport, 4> reports;  // paper_w0, paper_wm1, corrected, numeric
  std::array<bool, 3> agrees_with_numeric{};
  RegimeLabel regime = RegimeLabel::log_increase;

  const PeakReport& report(PeakMode m) const { return reports[static_cast<std::size_t>(m)]; }
  bool modes_disagree() const {
    return !(agrees_with_numeric[0] && agrees_with_numeric[1] && agrees_with_numeric[2]);
  }
};

inline bool peaks_agree(const PeakReport& a, const PeakReport& b,
                        double rel_tol = kPeakAgreementTolerance) {
  if (a.exists != b.exists) return false;
  if (!a.exists) return true;
  const double scale = std::max(std::abs(*b.t_peak), 1e-12);
  return std::abs(*a.t_peak - *b.t_peak) <= rel_tol * scale;
}

inline PeakAdjudication adjudicate_peaks(const FitParams& p, double horizon = kDefaultHorizon,
                                         std::optional<double> t_max = std::nullopt) {
  PeakAdjudication out;
  const auto [w0, wm1] = peak_paper_mode(p, horizon);
  out.reports[0] = w0;
  out.reports[1] = wm1;
  out.reports[2] = peak_corrected(p, horizon);
  const double t_hi = t_max.value_or(10.0 * horizon);
  out.reports[3] = peak_numeric(p, t_hi, horizon);
  for (std::size_t i = 0; i < 3; ++i) {
    // The numeric search only sees [0, t_hi]; an analytic peak outside it
    // is judged as "no peak in range".
    PeakReport seen = out.reports[i];
    if (seen.exists && !(*seen.t_peak >= 0.0 && *seen.t_peak <= t_hi)) seen = detail::no_peak(seen.mode);
    out.agrees_with_numeric[i] = peaks_agree(seen, out.reports[3]);
  }
  out.regime = (out.reports[3].exists && *out.reports[3].t_peak < horizon) ? RegimeLabel::early_peak
                                                                            : RegimeLabel::log_increase;
  return out;
}

/// Peak step over a (gamma, lambda) grid at fixed t0: rows follow gammas,
/// columns follow lambdas. NaN where no peak exists in the chosen mode.
struct LambertSurface {
  std::vector<double> gammas;
  std::vector<double> lambdas;
  std::vector<std::vector<double>> paper_w0;
  std::vector<std::vector<double>> corrected;
};

inline LambertSurface lambert_surface(double t0, std::vector<double> gammas, std::vector<double> lambdas) {
  LambertSurface s;
  s.gammas = std::move(gammas);
  s.lambdas = std::move(lambdas);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (double g : s.gammas) {
    std::vector<double> row_paper, row_corr;
    for (double l : s.lambdas) {
      const FitParams p{1.0, l, g, t0, 0.0};
      const auto paper = peak_paper_mode(p).first;
      const auto corr = peak_corrected(p);
      row_paper.push_back(paper.exists ? *paper.t_peak : nan);
      row_corr.push_back(corr.exists ? *corr.t_peak : nan);
    }
    s.paper_w0.push_back(std::move(row_paper));
    s.corrected.push_back(std::move(row_corr));
  }
  return s;
}

}  // namespace ma
