#pragma once

// Independent reference computations shared by the unit and acceptance
// suites.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ma/curve.hpp"
#include "ma/lambert_w.hpp"
#include "ma/rng.hpp"
#include "ma/trajectory.hpp"

namespace oracle {

/// Richardson-extrapolated central difference of f along parameter k, with
/// the curve evaluated in long double so a large K does not swamp the
/// difference.
inline double fd_partial(const ma::FitParams& p, double t, int k) {
  const auto a0 = p.to_array();
  const auto model = [&](long double shift) {
    std::array<long double, 5> a{};
    for (int j = 0; j < 5; ++j) a[j] = a0[j];
    a[k] += shift;
    const long double x = a[2] * t + a[3];
    return a[0] * std::exp(-a[1] * x) * std::log(x) + a[4];
  };
  const auto d = [&](long double h) { return (model(h) - model(-h)) / (2 * h); };
  const long double h = 1e-4L * std::max<long double>(std::abs(static_cast<long double>(a0[k])), 1e-2L);
  return static_cast<double>((4.0L * d(h / 2) - d(h)) / 3.0L);
}

/// Brute-force argmax of f on a fine uniform grid, refined by ternary search.
inline double argmax(const ma::FitParams& p, double t_hi, int n = 200000) {
  std::size_t best = 0;
  double bv = -1e300;
  for (int i = 0; i <= n; ++i) {
    const double v = ma::eval_model(p, t_hi * i / n);
    if (v > bv) {
      bv = v;
      best = static_cast<std::size_t>(i);
    }
  }
  double a = t_hi * std::max<double>(0, static_cast<double>(best) - 1) / n;
  double b = t_hi * std::min<double>(n, static_cast<double>(best) + 1) / n;
  for (int it = 0; it < 200; ++it) {
    const double m1 = a + (b - a) / 3, m2 = b - (b - a) / 3;
    if (ma::eval_model(p, m1) < ma::eval_model(p, m2)) a = m1; else b = m2;
  }
  return 0.5 * (a + b);
}

inline std::vector<std::int64_t> even_steps(int n, std::int64_t t_max = 143000) {
  std::vector<std::int64_t> s;
  for (int i = 0; i < n; ++i) s.push_back(t_max * i / (n - 1));
  return s;
}

/// One draw of normalized curve parameters: half log-increase shapes, half
/// shapes with a clear early maximum. Returns parameters in normalized
/// units (t in [0, 1], f roughly in [0.05, 1.3]).
inline ma::FitParams draw_normalized(ma::Rng& rng, bool early_peak) {
  ma::FitParams p;
  p.A = rng.uniform(0.2, 1.0);
  if (!early_peak) {
    p.lambda = rng.uniform(0.0, 0.05);
    p.t0 = rng.uniform(0.01, 0.3);
    p.gamma = rng.uniform(2.0, 50.0);
  } else {
    p.lambda = rng.uniform(0.3, 2.0);
    const double x_star = std::exp(ma::lambert_w(ma::WBranch::principal, 1.0 / p.lambda));
    p.t0 = rng.uniform(0.2, 1.0);
    while (p.t0 >= x_star) p.t0 *= 0.5;
    const double u = rng.uniform(0.05, 0.5);
    p.gamma = (x_star - p.t0) / u;
  }
  double lo = 1e300;
  for (int i = 0; i <= 400; ++i) {
    p.K = 0.0;
    lo = std::min(lo, ma::eval_model(p, i / 400.0));
  }
  p.K = 0.05 + rng.uniform(0.0, 0.2) - lo;
  return p;
}

/// Raw-space synthetic trajectory (T = 143000, R = 100) with Gaussian noise
/// of sd = noise_frac * (range of the noise-free series).
inline ma::LayerTrajectory noisy_trajectory(const ma::FitParams& pn, int n_points, double noise_frac,
                                            std::uint64_t seed, ma::FitParams* raw = nullptr) {
  const ma::NormalizationInfo info{143000.0, 100.0};
  const ma::FitParams pr = ma::denormalize_params(pn, info);
  if (raw) *raw = pr;
  const auto steps = even_steps(n_points);
  double lo = 1e300, hi = -1e300;
  for (auto s : steps) {
    const double v = ma::eval_model(pr, static_cast<double>(s));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return ma::gen_synthetic(pr, steps, noise_frac * (hi - lo), seed);
}

}  // namespace oracle
