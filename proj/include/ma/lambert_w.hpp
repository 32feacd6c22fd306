#pragma once

// Real branches of the Lambert W function (inverse of w -> w e^w):
// W0 on [-1/e, inf) with W0 >= -1, and W-1 on [-1/e, 0) with W-1 <= -1.
// Initial guess from the branch-point series or the asymptotic expansions,
// refined by Halley iteration.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ma/error.hpp"

namespace ma {

enum class WBranch { principal, minus_one };

inline const char* to_string(WBranch b) { return b == WBranch::principal ? "W0" : "W-1"; }

inline constexpr double kInvE = 1.0 / std::numbers::e;

namespace detail {

/// Branch-point distance p = sqrt(2 (e x + 1)); negative input means x < -1/e.
inline double branch_distance_sq(double x) { return 2.0 * std::fma(std::numbers::e, x, 1.0); }

inline double halley(double w, double x) {
  constexpr double kTol = 4.0 * std::numeric_limits<double>::epsilon();
  for (int it = 0; it < 100; ++it) {
    const double ew = std::exp(w);
    const double f = w * ew - x;
    if (f == 0.0) break;
    const double wp1 = w + 1.0;
    if (wp1 == 0.0) break;
    const double denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
    const double dw = f / denom;
    if (!std::isfinite(dw)) break;
    w -= dw;
    if (std::abs(dw) <= kTol * (1.0 + std::abs(w))) break;
  }
  return w;
}

}  // namespace detail

inline double lambert_w(WBranch branch, double x) {
  // Inputs within a few ulps below -1/e are treated as the branch point,
  // since -1/e itself is not representable.
  constexpr double kBranchSlack = 1e-15;
  if (std::isnan(x)) throw Error(ErrorKind::domain, "lambert_w of NaN");
  double p2 = detail::branch_distance_sq(x);
  if (p2 < 0.0) {
    if (p2 < -kBranchSlack) {
      throw Error(ErrorKind::domain, "lambert_w argument " + std::to_string(x) + " below -1/e");
    }
    p2 = 0.0;
  }
  const double p = std::sqrt(p2);

  if (branch == WBranch::principal) {
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return x;
    double w;
    if (p < 1e-4) {
      return -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0));
    } else if (p < 0.5) {
      w = -1.0 + p * (1.0 + p * (-1.0 / 3.0 + p * 11.0 / 72.0));
    } else if (x < 3.0) {
      const double l = std::log1p(x);
      w = l * (1.0 - std::log1p(l) / (2.0 + l));
    } else {
      const double l1 = std::log(x);
      const double l2 = std::log(l1);
      w = l1 - l2 + l2 / l1;
    }
    w = detail::halley(w, x);
    return w < -1.0 ? -1.0 : w;
  }

  if (!(x < 0.0)) {
    throw Error(ErrorKind::domain, "lambert_w minus_one branch needs -1/e <= x < 0, got " +
                                       std::to_string(x));
  }
  double w;
  if (p < 1e-4) {
    return -1.0 - p * (1.0 + p * (1.0 / 3.0 + p * 11.0 / 72.0));
  } else if (p < 0.5) {
    w = -1.0 - p * (1.0 + p * (1.0 / 3.0 + p * 11.0 / 72.0));
  } else {
    const double l1 = std::log(-x);
    const double l2 = std::log(-l1);
    w = l1 - l2 + l2 / l1;
  }
  w = detail::halley(w, x);
  return w > -1.0 ? -1.0 : w;
}

}  // namespace ma
