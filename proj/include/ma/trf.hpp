#pragma once

// Trust-Region Reflective solver for box-constrained nonlinear least squares
//
//   minimize 0.5 * ||r(x)||^2   subject to   lower <= x <= upper.
//
// Coleman-Li scaling turns the bounded problem into a sequence of trust
// region subproblems in "hat" variables. Each subproblem is solved exactly
// from an SVD of the augmented Jacobian [J D; diag(g dv)^(1/2)], then the
// step is chosen among (a) the truncated Newton-like step, (b) its
// reflection off the first bound hit and (c) the scaled anti-gradient,
// whichever has the lowest model value. Iterates stay strictly feasible.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "ma/error.hpp"

namespace ma::trf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A residual function with an analytic Jacobian (rows = residuals).
template <class P>
concept LeastSquaresProblem = requires(const P& p, const Vector& x, Vector& r, Matrix& J) {
  { p.num_residuals() } -> std::convertible_to<Eigen::Index>;
  p.residuals(x, r);
  p.jacobian(x, J);
};

struct Bounds {
  Vector lower;
  Vector upper;
};

struct Options {
  double gtol = 1e-10;   // on ||v * g||_inf (Coleman-Li scaled gradient)
  double xtol = 1e-12;   // relative step size
  double ftol = 0.0;     // relative cost reduction; 0 disables
  int max_iterations = 400;
  /// Scale variables by Jacobian column norms instead of unit scaling.
  bool jacobian_scaling = false;
  /// Record the cost of every accepted iterate.
  bool record_history = false;
};

enum class Status {
  max_iterations,
  gtol,
  ftol,
  xtol,
  ftol_and_xtol,
};

inline const char* to_string(Status s) {
  switch (s) {
    case Status::max_iterations: return "max_iterations";
    case Status::gtol: return "gtol";
    case Status::ftol: return "ftol";
    case Status::xtol: return "xtol";
    case Status::ftol_and_xtol: return "ftol+xtol";
  }
  return "?";
}

struct Summary {
  Vector x;
  Vector residuals;
  double cost = 0.0;  // 0.5 * ||r||^2
  double gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  Status status = Status::max_iterations;
  std::vector<double> cost_history;

  bool converged() const { return status != Status::max_iterations; }
};

namespace detail {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool in_bounds(const Vector& x, const Bounds& b) {
  return ((x.array() >= b.lower.array()) && (x.array() <= b.upper.array())).all();
}

/// Coleman-Li scaling vector v and its derivative dv.
inline void scaling_vector(const Vector& x, const Vector& g, const Bounds& b, Vector& v, Vector& dv) {
  const Eigen::Index n = x.size();
  v.setOnes(n);
  dv.setZero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] < 0 && std::isfinite(b.upper[i])) {
      v[i] = b.upper[i] - x[i];
      dv[i] = -1.0;
    } else if (g[i] > 0 && std::isfinite(b.lower[i])) {
      v[i] = x[i] - b.lower[i];
      dv[i] = 1.0;
    }
  }
}

/// Smallest step multiple along s that reaches a bound; hits marks the
/// components that reach it (signed by direction).
inline double step_to_bound(const Vector& x, const Vector& s, const Bounds& b, Eigen::VectorXi* hits) {
  const Eigen::Index n = x.size();
  Vector steps = Vector::Constant(n, kInf);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s[i] != 0.0) {
      steps[i] = std::max((b.lower[i] - x[i]) / s[i], (b.upper[i] - x[i]) / s[i]);
    }
  }
  const double min_step = steps.minCoeff();
  if (hits) {
    hits->setZero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (steps[i] == min_step) (*hits)[i] = s[i] > 0 ? 1 : (s[i] < 0 ? -1 : 0);
    }
  }
  return min_step;
}

/// Roots (t1 <= t2) of ||x + t s|| = delta, x inside the region.
inline std::pair<double, double> intersect_trust_region(const Vector& x, const Vector& s, double delta) {
  const double a = s.squaredNorm();
  const double b = x.dot(s);
  const double c = x.squaredNorm() - delta * delta;
  if (a == 0.0 || c > 0.0) return {0.0, 0.0};
  const double d = std::sqrt(std::max(b * b - a * c, 0.0));
  const double q = -(b + std::copysign(d, b));
  const double t1 = q / a;
  const double t2 = q != 0.0 ? c / q : 0.0;
  return t1 < t2 ? std::pair{t1, t2} : std::pair{t2, t1};
}

/// 0.5 * (||J s||^2 + s' diag(h) s) + g' s
inline double evaluate_quadratic(const Matrix& J, const Vector& g, const Vector& s, const Vector& diag) {
  const double q = (J * s).squaredNorm() + s.cwiseProduct(diag).dot(s);
  return 0.5 * q + g.dot(s);
}

struct Quadratic1d {
  double a, b, c;
};

/// Coefficients of q(s0 + t s) = a t^2 + b t + c.
inline Quadratic1d build_quadratic_1d(const Matrix& J, const Vector& g, const Vector& s,
                                      const Vector& diag, const Vector* s0) {
  const Vector v = J * s;
  double a = 0.5 * (v.squaredNorm() + s.cwiseProduct(diag).dot(s));
  double b = g.dot(s);
  double c = 0.0;
  if (s0) {
    const Vector u = J * *s0;
    b += u.dot(v) + s0->cwiseProduct(diag).dot(s);
    c = 0.5 * u.squaredNorm() + g.dot(*s0) + 0.5 * s0->cwiseProduct(diag).dot(*s0);
  }
  return {a, b, c};
}

/// Minimizer of a t^2 + b t + c on [lo, hi]; returns (t, value).
inline std::pair<double, double> minimize_quadratic_1d(const Quadratic1d& q, double lo, double hi) {
  double cand[3] = {lo, hi, lo};
  int n = 2;
  if (q.a != 0.0) {
    const double ext = -0.5 * q.b / q.a;
    if (lo < ext && ext < hi) cand[n++] = ext;
  }
  double best_t = cand[0];
  double best_v = kInf;
  for (int i = 0; i < n; ++i) {
    const double t = cand[i];
    const double val = t * (q.a * t + q.b) + q.c;
    if (val < best_v) {
      best_v = val;
      best_t = t;
    }
  }
  return {best_t, best_v};
}

/// Solves min ||J p + f|| s.t. ||p|| <= delta given the thin SVD J = U S V'.
/// Returns the step and updates the Levenberg-Marquardt parameter alpha.
inline Vector solve_trust_region(Eigen::Index m, const Vector& uf, const Vector& s, const Matrix& V,
                                 double delta, double& alpha) {
  const Eigen::Index n = V.rows();
  const Vector suf = s.cwiseProduct(uf);

  bool full_rank = false;
  if (m >= n && s.size() == n && s[0] > 0.0) {
    const double threshold = kEps * static_cast<double>(m) * s[0];
    full_rank = s[n - 1] > threshold;
  }
  if (full_rank) {
    const Vector p = -V * uf.cwiseQuotient(s);
    if (p.norm() <= delta) {
      alpha = 0.0;
      return p;
    }
  }

  const auto phi_and_derivative = [&](double a) {
    const Vector denom = s.array().square() + a;
    const double p_norm = suf.cwiseQuotient(denom).norm();
    const double phi = p_norm - delta;
    const double phi_prime =
        -(suf.array().square() / denom.array().cube()).sum() / p_norm;
    return std::pair{phi, phi_prime};
  };

  double alpha_upper = suf.norm() / delta;
  double alpha_lower = 0.0;
  if (full_rank) {
    const auto [phi, phi_prime] = phi_and_derivative(0.0);
    alpha_lower = -phi / phi_prime;
  }
  if (alpha == 0.0 && !full_rank) {
    alpha = std::max(0.001 * alpha_upper, std::sqrt(alpha_lower * alpha_upper));
  }

  constexpr int kMaxIter = 10;
  constexpr double kRtol = 0.01;
  for (int it = 0; it < kMaxIter; ++it) {
    if (alpha < alpha_lower || alpha > alpha_upper) {
      alpha = std::max(0.001 * alpha_upper, std::sqrt(alpha_lower * alpha_upper));
    }
    const auto [phi, phi_prime] = phi_and_derivative(alpha);
    if (phi < 0) alpha_upper = alpha;
    const double ratio = phi / phi_prime;
    alpha_lower = std::max(alpha_lower, alpha - ratio);
    alpha -= (phi + delta) * ratio / delta;
    if (std::abs(phi) < kRtol * delta) break;
  }

  Vector p = -V * suf.cwiseQuotient((s.array().square() + alpha).matrix());
  const double pn = p.norm();
  if (pn > 0.0) p *= delta / pn;
  return p;
}

/// Moves components on or outside a bound strictly inside it.
inline Vector make_strictly_feasible(const Vector& x, const Bounds& b) {
  Vector out = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= b.lower[i]) out[i] = std::nextafter(b.lower[i], b.upper[i]);
    if (x[i] >= b.upper[i]) out[i] = std::nextafter(b.upper[i], b.lower[i]);
    if (out[i] < b.lower[i] || out[i] > b.upper[i]) out[i] = 0.5 * (b.lower[i] + b.upper[i]);
  }
  return out;
}

struct SelectedStep {
  Vector step;
  Vector step_h;
  double predicted_reduction;
};

inline SelectedStep select_step(const Vector& x, const Matrix& J_h, const Vector& diag_h,
                                const Vector& g_h, Vector p, Vector p_h, const Vector& d,
                                double delta, const Bounds& b, double theta) {
  if (in_bounds(x + p, b)) {
    const double value = evaluate_quadratic(J_h, g_h, p_h, diag_h);
    return {p, p_h, -value};
  }

  Eigen::VectorXi hits;
  const double p_stride = step_to_bound(x, p, b, &hits);

  // Reflect the components that hit a bound.
  Vector r_h = p_h;
  for (Eigen::Index i = 0; i < r_h.size(); ++i) {
    if (hits[i] != 0) r_h[i] = -r_h[i];
  }
  Vector r = d.cwiseProduct(r_h);

  p *= p_stride;
  p_h *= p_stride;
  const Vector x_on_bound = x + p;

  const double to_tr = intersect_trust_region(p_h, r_h, delta).second;
  const double to_bound = step_to_bound(x_on_bound, r, b, nullptr);

  double r_stride = std::min(to_bound, to_tr);
  double r_stride_l, r_stride_u;
  if (r_stride > 0) {
    r_stride_l = (1 - theta) * p_stride / r_stride;
    r_stride_u = (r_stride == to_bound) ? theta * to_bound : to_tr;
  } else {
    r_stride_l = 0.0;
    r_stride_u = -1.0;
  }

  double r_value = kInf;
  if (r_stride_l <= r_stride_u) {
    const auto q = build_quadratic_1d(J_h, g_h, r_h, diag_h, &p_h);
    const auto [t, val] = minimize_quadratic_1d(q, r_stride_l, r_stride_u);
    r_value = val;
    r_h = p_h + t * r_h;
    r = d.cwiseProduct(r_h);
  }

  // Pull the truncated step strictly inside.
  p *= theta;
  p_h *= theta;
  const double p_value = evaluate_quadratic(J_h, g_h, p_h, diag_h);

  Vector ag_h = -g_h;
  Vector ag = d.cwiseProduct(ag_h);
  const double ag_norm = ag_h.norm();
  const double ag_to_tr = ag_norm > 0 ? delta / ag_norm : 0.0;
  const double ag_to_bound = step_to_bound(x, ag, b, nullptr);
  const double ag_stride = ag_to_bound < ag_to_tr ? theta * ag_to_bound : ag_to_tr;
  const auto q_ag = build_quadratic_1d(J_h, g_h, ag_h, diag_h, nullptr);
  const auto [ag_t, ag_value] = minimize_quadratic_1d(q_ag, 0.0, ag_stride);
  ag_h *= ag_t;
  ag *= ag_t;

  if (p_value < r_value && p_value < ag_value) return {p, p_h, -p_value};
  if (r_value < p_value && r_value < ag_value) return {r, r_h, -r_value};
  return {ag, ag_h, -ag_value};
}

inline Vector jacobian_column_scale(const Matrix& J, const Vector* previous_inv) {
  Vector scale_inv = J.colwise().norm().transpose();
  if (previous_inv) scale_inv = scale_inv.cwiseMax(*previous_inv);
  for (Eigen::Index i = 0; i < scale_inv.size(); ++i) {
    if (scale_inv[i] == 0.0) scale_inv[i] = 1.0;
  }
  return scale_inv;
}

}  // namespace detail

/// Minimizes 0.5*||r(x)||^2 within the box. x0 must lie inside the bounds;
/// it is nudged off any bound it touches. Only iterates that strictly reduce
/// the cost are accepted.
template <LeastSquaresProblem Problem>
Summary solve(const Problem& problem, const Vector& x0, const Bounds& bounds,
              const Options& opt = {}) {
  using namespace detail;
  const Eigen::Index n = x0.size();
  const Eigen::Index m = problem.num_residuals();
  require(bounds.lower.size() == n && bounds.upper.size() == n, ErrorKind::invalid_input,
          "bounds dimension mismatch");
  require((bounds.lower.array() < bounds.upper.array()).all(), ErrorKind::invalid_input,
          "each lower bound must be below its upper bound");
  require(in_bounds(x0, bounds), ErrorKind::invalid_input, "initial point outside bounds");
  require(m >= 1, ErrorKind::invalid_input, "no residuals");

  Summary out;
  Vector x = make_strictly_feasible(x0, bounds);
  Vector f(m);
  Matrix J(m, n);
  problem.residuals(x, f);
  ++out.evaluations;
  if (!f.allFinite()) fail(ErrorKind::fit_failed, "residuals not finite at the initial point");
  problem.jacobian(x, J);
  double cost = 0.5 * f.squaredNorm();
  Vector g = J.transpose() * f;
  if (opt.record_history) out.cost_history.push_back(cost);

  Vector scale = Vector::Ones(n);
  Vector scale_inv = Vector::Ones(n);
  if (opt.jacobian_scaling) {
    scale_inv = jacobian_column_scale(J, nullptr);
    scale = scale_inv.cwiseInverse();
  }

  Vector v, dv;
  scaling_vector(x, g, bounds, v, dv);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (dv[i] != 0) v[i] *= scale_inv[i];
  }
  double delta = (x.cwiseProduct(scale_inv).array() / v.array().sqrt()).matrix().norm();
  if (delta == 0.0 || !std::isfinite(delta)) delta = 1.0;

  Matrix J_aug(m + n, n);
  Vector f_aug = Vector::Zero(m + n);
  double alpha = 0.0;
  std::optional<Status> status;

  while (true) {
    scaling_vector(x, g, bounds, v, dv);
    const double g_norm = (g.cwiseProduct(v)).lpNorm<Eigen::Infinity>();
    out.gradient_norm = g_norm;
    if (g_norm < opt.gtol) status = Status::gtol;
    if (status || out.iterations >= opt.max_iterations) break;

    for (Eigen::Index i = 0; i < n; ++i) {
      if (dv[i] != 0) v[i] *= scale_inv[i];
    }
    const Vector d = v.cwiseSqrt().cwiseProduct(scale);
    const Vector diag_h = g.cwiseProduct(dv).cwiseProduct(scale);
    const Vector g_h = d.cwiseProduct(g);

    f_aug.head(m) = f;
    J_aug.topRows(m) = J * d.asDiagonal();
    J_aug.bottomRows(n).setZero();
    J_aug.bottomRows(n).diagonal() = diag_h.cwiseSqrt();
    const Matrix J_h = J_aug.topRows(m);

    Eigen::JacobiSVD<Matrix> svd(J_aug, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues();
    const Matrix& V = svd.matrixV();
    const Vector uf = svd.matrixU().transpose() * f_aug;

    const double theta = std::max(0.995, 1.0 - g_norm);

    double actual_reduction = -1.0;
    Vector x_new = x;
    Vector f_new(m);
    double cost_new = cost;
    int inner = 0;
    constexpr int kMaxInner = 100;
    while (actual_reduction <= 0.0 && inner++ < kMaxInner) {
      const Vector p_h = solve_trust_region(m + n, uf, s, V, delta, alpha);
      const Vector p = d.cwiseProduct(p_h);
      SelectedStep sel = select_step(x, J_h, diag_h, g_h, p, p_h, d, delta, bounds, theta);

      x_new = make_strictly_feasible(x + sel.step, bounds);
      problem.residuals(x_new, f_new);
      ++out.evaluations;
      const double step_h_norm = sel.step_h.norm();

      if (!f_new.allFinite()) {
        delta = 0.25 * step_h_norm;
        if (delta == 0.0) break;
        continue;
      }

      cost_new = 0.5 * f_new.squaredNorm();
      actual_reduction = cost - cost_new;

      // Radius update from the agreement ratio.
      double ratio;
      if (sel.predicted_reduction > 0) {
        ratio = actual_reduction / sel.predicted_reduction;
      } else if (sel.predicted_reduction == 0 && actual_reduction == 0) {
        ratio = 1.0;
      } else {
        ratio = 0.0;
      }
      double delta_new = delta;
      if (ratio < 0.25) {
        delta_new = 0.25 * step_h_norm;
      } else if (ratio > 0.75 && step_h_norm > 0.95 * delta) {
        delta_new = 2.0 * delta;
      }

      const double step_norm = sel.step.norm();
      const bool ftol_ok = opt.ftol > 0 && actual_reduction < opt.ftol * cost && ratio > 0.25;
      const bool xtol_ok = step_norm < opt.xtol * (opt.xtol + x.norm());
      if (ftol_ok && xtol_ok) status = Status::ftol_and_xtol;
      else if (ftol_ok) status = Status::ftol;
      else if (xtol_ok) status = Status::xtol;
      if (status) break;

      if (delta_new > 0) alpha *= delta / delta_new;
      delta = delta_new;
    }

    if (actual_reduction > 0.0) {
      x = x_new;
      f = f_new;
      cost = cost_new;
      problem.jacobian(x, J);
      g = J.transpose() * f;
      if (opt.jacobian_scaling) {
        scale_inv = jacobian_column_scale(J, &scale_inv);
        scale = scale_inv.cwiseInverse();
      }
      if (opt.record_history) out.cost_history.push_back(cost);
    } else if (!status) {
      // No reducing step could be found; the trust region collapsed.
      status = Status::xtol;
    }
    ++out.iterations;
  }

  out.x = x;
  out.residuals = f;
  out.cost = cost;
  out.status = status.value_or(Status::max_iterations);
  return out;
}

}  // namespace ma::trf
