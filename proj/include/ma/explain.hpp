#pragma once

// Explanations for trained regressors: path-dependent TreeSHAP, an
// exhaustive-subset Shapley oracle, partial dependence, and impurity /
// permutation importance.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ma/error.hpp"
#include "ma/ml_pipeline.hpp"
#include "ma/numeric_io.hpp"
#include "ma/regressors.hpp"
#include "ma/rng.hpp"
#include "ma/tree.hpp"

namespace ma {

using Predictor = std::function<double(std::span<const double>)>;

inline Predictor as_predictor(const TrainedRegressor& m) {
  return [&m](std::span<const double> x) { return m.predict(x); };
}

struct ShapExplanation {
  double base_value = 0.0;
  std::vector<double> phi;
  double prediction = 0.0;
};

// ---------------------------------------------------------------------------
// TreeSHAP

namespace detail {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double pweight = 0.0;
};

inline void extend_path(std::vector<PathElement>& path, int depth, double zero_fraction,
                        double one_fraction, int feature) {
  path.resize(static_cast<std::size_t>(depth) + 1);
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) / (depth + 1);
    path[i].pweight = zero_fraction * path[i].pweight * (depth - i) / (depth + 1);
  }
}

inline void unwind_path(std::vector<PathElement>& path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = path[i].pweight;
      path[i].pweight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].pweight * zero * (depth - i) / (depth + 1);
    } else {
      path[i].pweight = path[i].pweight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
  path.resize(static_cast<std::size_t>(depth));
}

inline double unwound_path_sum(const std::vector<PathElement>& path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].pweight;
  double total = 0.0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0.0) {
      const double tmp = next * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next = path[i].pweight - tmp * zero * (depth - i) / (depth + 1);
    } else {
      total += path[i].pweight / zero / (static_cast<double>(depth - i) / (depth + 1));
    }
  }
  return total;
}

inline void tree_shap_recurse(const Tree& t, int node, std::span<const double> x, std::vector<double>& phi,
                              std::vector<PathElement> path, int depth, double zero_fraction,
                              double one_fraction, int feature, double scale) {
  extend_path(path, depth, zero_fraction, one_fraction, feature);
  const auto& nd = t.nodes[node];
  if (nd.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const double w = unwound_path_sum(path, depth, i);
      const auto& el = path[i];
      phi[el.feature] += scale * w * (el.one_fraction - el.zero_fraction) * nd.value;
    }
    return;
  }
  const int hot = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
  const int cold = hot == nd.left ? nd.right : nd.left;
  double incoming_zero = 1.0;
  double incoming_one = 1.0;
  int k = 1;
  for (; k <= depth; ++k) {
    if (path[k].feature == nd.feature) break;
  }
  if (k <= depth) {
    incoming_zero = path[k].zero_fraction;
    incoming_one = path[k].one_fraction;
    unwind_path(path, depth, k);
    --depth;
  }
  const double cover = nd.cover;
  tree_shap_recurse(t, hot, x, phi, path, depth + 1, incoming_zero * t.nodes[hot].cover / cover,
                    incoming_one, nd.feature, scale);
  tree_shap_recurse(t, cold, x, phi, std::move(path), depth + 1,
                    incoming_zero * t.nodes[cold].cover / cover, 0.0, nd.feature, scale);
}

}  // namespace detail

inline ShapExplanation tree_shap(const TreeEnsemble& ens, std::span<const double> x, std::size_t n_features) {
  require(x.size() == n_features, ErrorKind::invalid_input, "instance length does not match model");
  ShapExplanation e;
  e.phi.assign(n_features, 0.0);
  e.base_value = ens.base_score;
  for (std::size_t t = 0; t < ens.trees.size(); ++t) {
    const auto& tree = ens.trees[t];
    e.base_value += ens.weights[t] * tree.expected_value();
    detail::tree_shap_recurse(tree, 0, x, e.phi, {}, 0, 1.0, 1.0, -1, ens.weights[t]);
  }
  e.prediction = ens.predict(x);
  return e;
}

/// Tree models only; linear models use linear_attribution.
inline ShapExplanation tree_shap(const TrainedRegressor& m, std::span<const double> x) {
  return tree_shap(m.ensemble(), x, m.n_features);
}

/// coef_j * (x_j - mean_j), with base value the prediction at the mean.
inline ShapExplanation linear_attribution(const TrainedRegressor& m, std::span<const double> x,
                                          std::span<const double> feature_mean) {
  const auto& lin = m.linear();
  require(x.size() == m.n_features && feature_mean.size() == m.n_features, ErrorKind::invalid_input,
          "instance length does not match model");
  ShapExplanation e;
  e.base_value = m.predict(feature_mean);
  for (std::size_t j = 0; j < x.size(); ++j) e.phi.push_back(lin.coef[j] * (x[j] - feature_mean[j]));
  e.prediction = m.predict(x);
  return e;
}

inline ShapExplanation explain_instance(const TrainedRegressor& m, std::span<const double> x,
                                        std::span<const double> feature_mean) {
  return is_tree_kind(m.kind) ? tree_shap(m, x) : linear_attribution(m, x, feature_mean);
}

// ---------------------------------------------------------------------------
// Exhaustive Shapley values

inline constexpr std::size_t kMaxBruteForceFeatures = 12;

/// E[tree(x) | x_S] with features outside S integrated out by training
/// cover along the tree paths.
inline double tree_conditional_value(const Tree& t, std::span<const double> x, std::uint32_t in_set,
                                     int node = 0) {
  const auto& nd = t.nodes[node];
  if (nd.is_leaf()) return nd.value;
  if (in_set & (1u << nd.feature)) {
    return tree_conditional_value(t, x, in_set, x[nd.feature] <= nd.threshold ? nd.left : nd.right);
  }
  const auto& l = t.nodes[nd.left];
  const auto& r = t.nodes[nd.right];
  return (l.cover * tree_conditional_value(t, x, in_set, nd.left) +
          r.cover * tree_conditional_value(t, x, in_set, nd.right)) /
         nd.cover;
}

namespace detail {

inline std::vector<double> shapley_from_value_function(std::size_t p,
                                                       const std::function<double(std::uint32_t)>& v) {
  if (p > kMaxBruteForceFeatures) {
    fail(ErrorKind::unsupported, "exhaustive Shapley values refused for " + std::to_string(p) +
                                     " features (limit " + std::to_string(kMaxBruteForceFeatures) + ")");
  }
  const std::uint32_t n_sets = 1u << p;
  std::vector<double> value(n_sets);
  for (std::uint32_t s = 0; s < n_sets; ++s) value[s] = v(s);
  // weight(|S|) = |S|! (p - |S| - 1)! / p!
  std::vector<double> weight(p, 0.0);
  for (std::size_t k = 0; k < p; ++k) {
    double w = 1.0 / static_cast<double>(p);
    for (std::size_t i = 1; i <= k; ++i) w *= static_cast<double>(i) / static_cast<double>(p - i);
    weight[k] = w;
  }
  std::vector<double> phi(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    const std::uint32_t bit = 1u << j;
    for (std::uint32_t s = 0; s < n_sets; ++s) {
      if (s & bit) continue;
      phi[j] += weight[static_cast<std::size_t>(std::popcount(s))] * (value[s | bit] - value[s]);
    }
  }
  return phi;
}

}  // namespace detail

/// Shapley values of a tree ensemble under the same path-dependent value
/// function TreeSHAP uses, by enumerating every feature subset.
inline ShapExplanation brute_force_shapley(const TreeEnsemble& ens, std::span<const double> x,
                                           std::size_t n_features) {
  require(x.size() == n_features, ErrorKind::invalid_input, "instance length does not match model");
  const auto v = [&](std::uint32_t s) {
    double total = ens.base_score;
    for (std::size_t t = 0; t < ens.trees.size(); ++t) {
      total += ens.weights[t] * tree_conditional_value(ens.trees[t], x, s);
    }
    return total;
  };
  ShapExplanation e;
  e.phi = detail::shapley_from_value_function(n_features, v);
  e.base_value = v(0);
  e.prediction = ens.predict(x);
  return e;
}

/// Shapley values of an arbitrary predictor with features outside S drawn
/// from the background rows (interventional value function).
inline ShapExplanation brute_force_shapley(const Predictor& f, std::span<const double> x,
                                           const Matrix& background) {
  require(background.rows >= 1 && background.cols == x.size(), ErrorKind::invalid_input,
          "background must have rows matching the instance length");
  const std::size_t p = x.size();
  std::vector<double> z(p);
  const auto v = [&](std::uint32_t s) {
    double total = 0.0;
    for (std::size_t b = 0; b < background.rows; ++b) {
      for (std::size_t j = 0; j < p; ++j) z[j] = (s & (1u << j)) ? x[j] : background(b, j);
      total += f(z);
    }
    return total / static_cast<double>(background.rows);
  };
  ShapExplanation e;
  e.phi = detail::shapley_from_value_function(p, v);
  e.base_value = v(0);
  e.prediction = f(x);
  return e;
}

// ---------------------------------------------------------------------------
// Partial dependence

struct PdpGrid {
  std::vector<std::size_t> features;
  std::vector<std::vector<double>> grid;  // per feature, increasing
  std::vector<double> values;             // row-major over the grids
  bool constant_feature = false;          // some feature collapsed to one point
};

/// Grids span each feature's observed range (evenly spaced). A constant
/// feature gets a single-point grid and sets constant_feature.
inline PdpGrid pdp(const Predictor& f, const Matrix& rows, std::span<const std::size_t> features,
                   std::span<const std::size_t> grid_sizes) {
  require(features.size() == 1 || features.size() == 2, ErrorKind::invalid_input, "PDP takes 1 or 2 features");
  require(grid_sizes.size() == features.size(), ErrorKind::invalid_input, "one grid size per feature");
  require(rows.rows >= 1, ErrorKind::invalid_input, "PDP needs at least one row");
  if (features.size() == 2) require(features[0] != features[1], ErrorKind::invalid_input, "PDP features must differ");
  PdpGrid g;
  g.features.assign(features.begin(), features.end());
  for (std::size_t k = 0; k < features.size(); ++k) {
    require(features[k] < rows.cols, ErrorKind::invalid_input, "PDP feature index out of range");
    require(grid_sizes[k] >= 2, ErrorKind::invalid_input, "PDP grid size must be at least 2");
    double lo = rows(0, features[k]), hi = lo;
    for (std::size_t i = 1; i < rows.rows; ++i) {
      lo = std::min(lo, rows(i, features[k]));
      hi = std::max(hi, rows(i, features[k]));
    }
    std::vector<double> axis;
    if (lo == hi) {
      axis.push_back(lo);
      g.constant_feature = true;
    } else {
      const std::size_t n = grid_sizes[k];
      for (std::size_t i = 0; i < n; ++i) {
        axis.push_back(i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
      }
    }
    g.grid.push_back(std::move(axis));
  }
  const std::size_t n0 = g.grid[0].size();
  const std::size_t n1 = g.grid.size() == 2 ? g.grid[1].size() : 1;
  std::vector<double> z(rows.cols);
  for (std::size_t a = 0; a < n0; ++a) {
    for (std::size_t b = 0; b < n1; ++b) {
      double total = 0.0;
      for (std::size_t i = 0; i < rows.rows; ++i) {
        const auto r = rows.row(i);
        std::copy(r.begin(), r.end(), z.begin());
        z[features[0]] = g.grid[0][a];
        if (g.grid.size() == 2) z[g.features[1]] = g.grid[1][b];
        total += f(z);
      }
      g.values.push_back(total / static_cast<double>(rows.rows));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Feature importance

/// Split gains summed per feature within each tree, normalized per tree,
/// averaged over trees and normalized to sum to 1 (all zeros if no tree
/// splits).
inline std::vector<double> impurity_importance(const TrainedRegressor& m) {
  const auto& ens = m.ensemble();
  std::vector<double> total(m.n_features, 0.0);
  for (const auto& t : ens.trees) {
    std::vector<double> imp(m.n_features, 0.0);
    double s = 0.0;
    for (const auto& nd : t.nodes) {
      if (!nd.is_leaf()) {
        imp[nd.feature] += nd.gain;
        s += nd.gain;
      }
    }
    if (s <= 0.0) continue;
    for (std::size_t j = 0; j < imp.size(); ++j) total[j] += imp[j] / s;
  }
  const double s = std::accumulate(total.begin(), total.end(), 0.0);
  if (s > 0.0) {
    for (auto& v : total) v /= s;
  }
  return total;
}

/// Mean drop in R^2 when one column is shuffled, over n_repeats seeded
/// permutations.
inline std::vector<double> permutation_importance(const Predictor& f, const Matrix& X, std::span<const double> y,
                                                  std::uint64_t seed, std::size_t n_repeats = 10) {
  require(X.rows == y.size() && X.rows >= 2, ErrorKind::invalid_input, "permutation importance: bad data");
  const auto score = [&](const Matrix& M) {
    std::vector<double> pred(M.rows);
    for (std::size_t i = 0; i < M.rows; ++i) pred[i] = f(M.row(i));
    return r2_score(y, pred);
  };
  const double baseline = score(X);
  std::vector<double> out(X.cols, 0.0);
  for (std::size_t j = 0; j < X.cols; ++j) {
    Rng rng(derive_seed(seed, j));
    for (std::size_t r = 0; r < n_repeats; ++r) {
      Matrix M = X;
      const auto perm = rng.permutation(X.rows);
      for (std::size_t i = 0; i < X.rows; ++i) M(i, j) = X(perm[i], j);
      out[j] += (baseline - score(M)) / static_cast<double>(n_repeats);
    }
  }
  return out;
}

enum class ImportanceKind { impurity, permutation };

inline std::vector<double> feature_importance(const TrainedRegressor& m, ImportanceKind kind, const Matrix& X,
                                              std::span<const double> y, std::uint64_t seed) {
  if (kind == ImportanceKind::impurity) {
    if (!is_tree_kind(m.kind)) {
      fail(ErrorKind::unsupported, std::string("impurity importance needs a tree model, got ") + to_string(m.kind));
    }
    return impurity_importance(m);
  }
  return permutation_importance(as_predictor(m), X, y, seed);
}

// ---------------------------------------------------------------------------
// CSV outputs

inline void write_shap_summary(std::ostream& out, std::span<const ShapExplanation> rows, const Matrix& values,
                               std::span<const std::string> row_ids, std::span<const std::string> feature_names) {
  require(rows.size() == values.rows && row_ids.size() == rows.size(), ErrorKind::invalid_input,
          "SHAP summary: row count mismatch");
  write_csv_row(out, {"row_id", "feature", "value", "phi"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < feature_names.size(); ++j) {
      write_csv_row(out, {row_ids[i], feature_names[j], format_double(values(i, j)), format_double(rows[i].phi[j])});
    }
  }
}

/// Base value first, then features by decreasing |phi|; the last
/// cumulative value equals the prediction up to rounding.
inline void write_shap_waterfall(std::ostream& out, const ShapExplanation& e,
                                 std::span<const std::string> feature_names) {
  write_csv_row(out, {"feature", "phi", "cumulative"});
  write_csv_row(out, {"base_value", format_double(e.base_value), format_double(e.base_value)});
  std::vector<std::size_t> order(e.phi.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(e.phi[a]) > std::abs(e.phi[b]); });
  double cum = e.base_value;
  for (auto j : order) {
    cum += e.phi[j];
    write_csv_row(out, {feature_names[j], format_double(e.phi[j]), format_double(cum)});
  }
}

inline void write_pdp_csv(std::ostream& out, const PdpGrid& g, std::span<const std::string> feature_names) {
  std::vector<std::string> header;
  for (auto f : g.features) header.push_back(feature_names[f]);
  header.emplace_back("value");
  write_csv_row(out, header);
  const std::size_t n1 = g.grid.size() == 2 ? g.grid[1].size() : 1;
  for (std::size_t a = 0; a < g.grid[0].size(); ++a) {
    for (std::size_t b = 0; b < n1; ++b) {
      std::vector<std::string> row = {format_double(g.grid[0][a])};
      if (g.grid.size() == 2) row.push_back(format_double(g.grid[1][b]));
      row.push_back(format_double(g.values[a * n1 + b]));
      write_csv_row(out, row);
    }
  }
}

}  // namespace ma
