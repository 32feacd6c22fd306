#pragma once

// Exponentially decaying, log-modulated trajectory model
//
//   f(t) = A * exp(-lambda * x) * ln(x) + K,   x = gamma * t + t0
//
// and its analytic Jacobian with respect to (A, lambda, gamma, t0, K).

#include <array>
#include <cmath>
#include <string>

#include "ma/error.hpp"

namespace ma {

struct FitParams {
  double A = 0.0;
  double lambda = 0.0;
  double gamma = 1.0;
  double t0 = 1.0;
  double K = 0.0;

  static constexpr int kCount = 5;

  std::array<double, kCount> to_array() const { return {A, lambda, gamma, t0, K}; }

  static FitParams from_array(const std::array<double, kCount>& v) {
    return {v[0], v[1], v[2], v[3], v[4]};
  }

  double x_at(double t) const { return gamma * t + t0; }

  friend bool operator==(const FitParams&, const FitParams&) = default;
};

inline constexpr std::array<const char*, FitParams::kCount> kParamNames = {"A", "lambda", "gamma",
                                                                            "t0", "K"};

namespace detail {
inline void check_domain(double x, double t) {
  if (!(x > 0.0)) {
    throw Error(ErrorKind::domain, "x_t = gamma*t + t0 must be positive (t = " +
                                       std::to_string(t) + ", x_t = " + std::to_string(x) + ")");
  }
}
}  // namespace detail

inline double eval_model(const FitParams& p, double t) {
  const double x = p.x_at(t);
  detail::check_domain(x, t);
  return p.A * std::exp(-p.lambda * x) * std::log(x) + p.K;
}

/// Partials in the order (A, lambda, gamma, t0, K).
inline std::array<double, FitParams::kCount> eval_jacobian(const FitParams& p, double t) {
  const double x = p.x_at(t);
  detail::check_domain(x, t);
  const double decay = std::exp(-p.lambda * x);
  const double lnx = std::log(x);
  const double shape = p.A * decay * (1.0 / x - p.lambda * lnx);  // d f / d x
  return {
      decay * lnx,
      -p.A * x * decay * lnx,
      shape * t,
      shape,
      1.0,
  };
}

}  // namespace ma
