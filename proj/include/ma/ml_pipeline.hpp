#pragma once

// Parameter-prediction pipeline: dataset assembly from fitted layers and an
// architecture registry, seeded train/test split with k folds, CV-driven
// hyperparameter choice per regressor kind, and test metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ma/curve.hpp"
#include "ma/error.hpp"
#include "ma/features.hpp"
#include "ma/numeric_io.hpp"
#include "ma/regressors.hpp"
#include "ma/rng.hpp"

namespace ma {

struct FittedLayer {
  std::string model_id;
  int layer = 1;
  FitParams params;
};

struct ParamDataset {
  std::string target_name;
  TransformKind transform = TransformKind::log1p;
  std::vector<std::string> model_ids;
  std::vector<int> layers;
  std::vector<FeatureVector> features;
  std::vector<double> targets;  // raw scale

  std::size_t size() const { return targets.size(); }
};

inline TransformKind default_transform(const std::string& target_name) {
  return target_name == "K" ? TransformKind::yeo_johnson : TransformKind::log1p;
}

inline double param_by_name(const FitParams& p, const std::string& name) {
  const auto a = p.to_array();
  for (std::size_t i = 0; i < kParamNames.size(); ++i) {
    if (name == kParamNames[i]) return a[i];
  }
  fail(ErrorKind::invalid_input, "unknown parameter '" + name + "'");
}

inline ParamDataset assemble_dataset(std::span<const FittedLayer> fits, std::span<const ArchInfo> registry,
                                     const std::string& target_name, int layer_offset = 0) {
  std::map<std::string, const ArchInfo*> arch;
  for (const auto& a : registry) arch[a.model_id] = &a;
  ParamDataset ds;
  ds.target_name = target_name;
  ds.transform = default_transform(target_name);
  std::set<std::pair<std::string, int>> seen;
  for (const auto& f : fits) {
    if (!seen.emplace(f.model_id, f.layer).second) {
      fail(ErrorKind::validation,
           "duplicate fit for model '" + f.model_id + "' layer " + std::to_string(f.layer));
    }
    const auto it = arch.find(f.model_id);
    if (it == arch.end()) fail(ErrorKind::not_found, "model '" + f.model_id + "' not in architecture registry");
    ds.model_ids.push_back(f.model_id);
    ds.layers.push_back(f.layer);
    ds.features.push_back(build_features({*it->second, f.layer}, layer_offset));
    ds.targets.push_back(param_by_name(f.params, target_name));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split and folds

struct DataSplit {
  std::vector<std::size_t> train;             // dataset row indices
  std::vector<std::size_t> test;              // dataset row indices
  std::vector<std::vector<std::size_t>> folds;  // positions into train
};

/// Seeded shuffle; the first ceil(test_fraction * n) shuffled rows form the
/// test set. Train rows are cut into k contiguous folds, the first n % k
/// of them one row larger.
inline DataSplit split_and_folds(std::size_t n_rows, double test_fraction, std::size_t k,
                                 std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorKind::invalid_input,
          "test_fraction must be in (0, 1)");
  require(k >= 2, ErrorKind::invalid_input, "need at least 2 folds");
  const auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n_rows)));
  if (n_rows < n_test + k || n_test == 0) {
    fail(ErrorKind::invalid_input, std::to_string(n_rows) + " rows are too few for a " +
                                       std::to_string(k) + "-fold split with a test set");
  }
  Rng rng(seed);
  const auto perm = rng.permutation(n_rows);
  DataSplit s;
  s.test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  const std::size_t n_train = s.train.size();
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n_train / k + (f < n_train % k ? 1 : 0);
    std::vector<std::size_t> fold(size);
    std::iota(fold.begin(), fold.end(), pos);
    pos += size;
    s.folds.push_back(std::move(fold));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Metrics

/// Coefficient of determination; a constant target gives 1 for a perfect
/// prediction and 0 otherwise.
inline double r2_score(std::span<const double> y, std::span<const double> pred) {
  require(y.size() == pred.size() && !y.empty(), ErrorKind::invalid_input, "r2: length mismatch");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sse += (y[i] - pred[i]) * (y[i] - pred[i]);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  if (sst == 0.0) return sse == 0.0 ? 1.0 : 0.0;
  return 1.0 - sse / sst;
}

inline double mae(std::span<const double> y, std::span<const double> pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y[i] - pred[i]);
  return s / static_cast<double>(y.size());
}

inline double rmse(std::span<const double> y, std::span<const double> pred) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

// ---------------------------------------------------------------------------
// Training with CV

struct PipelineOptions {
  double test_fraction = 0.2;
  std::size_t folds = 5;
  std::vector<double> alphas = {1e-3, 1e-3 * std::pow(10.0, 5.0 / 6.0), 1e-3 * std::pow(10.0, 10.0 / 6.0),
                                1e-3 * std::pow(10.0, 15.0 / 6.0), 1e-3 * std::pow(10.0, 20.0 / 6.0),
                                1e-3 * std::pow(10.0, 25.0 / 6.0), 1e2};
  ForestOptions forest;
  BoostingOptions boosting;  // n_rounds is the early-stopping ceiling
  std::size_t min_rows = 10;
  std::uint64_t seed = 0;
};

struct KindResult {
  RegressorKind kind = RegressorKind::ridge;
  std::vector<double> fold_r2;
  double cv_r2_mean = 0.0;
  std::map<std::string, double> selected;
  double test_r2 = 0.0;
  double test_mae = 0.0;
  double test_rmse = 0.0;
  bool best = false;
  TrainedRegressor model;
};

struct TargetEvaluation {
  std::string target_name;
  TargetTransform transform;
  std::size_t n_rows = 0;
  DataSplit split;
  Scaler scaler;
  std::vector<double> y;  // transformed targets, all rows
  Matrix X;               // standardized features, all rows
  std::vector<KindResult> results;
  std::size_t best_index = 0;

  const KindResult& best() const { return results.at(best_index); }
};

namespace detail {

struct FoldData {
  Matrix X_fit, X_val;
  std::vector<double> y_fit, y_val;
};

inline FoldData fold_data(const Matrix& X, std::span<const double> y, const DataSplit& s, std::size_t f) {
  std::vector<std::size_t> fit_rows, val_rows;
  for (std::size_t g = 0; g < s.folds.size(); ++g) {
    for (auto pos : s.folds[g]) (g == f ? val_rows : fit_rows).push_back(s.train[pos]);
  }
  FoldData d;
  d.X_fit = X.select_rows(fit_rows);
  d.X_val = X.select_rows(val_rows);
  for (auto i : fit_rows) d.y_fit.push_back(y[i]);
  for (auto i : val_rows) d.y_val.push_back(y[i]);
  return d;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Trains one regressor kind with the option set's hyperparameters fixed.
inline TrainedRegressor train(RegressorKind kind, const Matrix& X, std::span<const double> y,
                              const std::map<std::string, double>& hp, const PipelineOptions& opt,
                              std::uint64_t seed) {
  switch (kind) {
    case RegressorKind::ridge: return fit_ridge(X, y, hp.at("alpha"));
    case RegressorKind::lasso: return fit_lasso(X, y, hp.at("alpha"));
    case RegressorKind::random_forest: return fit_random_forest(X, y, opt.forest, seed);
    case RegressorKind::gradient_boosting: {
      BoostingOptions b = opt.boosting;
      if (auto it = hp.find("n_rounds"); it != hp.end()) b.n_rounds = static_cast<std::size_t>(it->second);
      return fit_gradient_boosting(X, y, b, seed);
    }
  }
  fail(ErrorKind::invalid_input, "unknown regressor kind");
}

namespace detail {

inline KindResult cross_validate(RegressorKind kind, const Matrix& X, std::span<const double> y,
                                 const DataSplit& s, const PipelineOptions& opt) {
  KindResult res;
  res.kind = kind;
  const std::size_t k = s.folds.size();
  const std::uint64_t kind_seed = derive_seed(opt.seed, 100 + static_cast<std::uint64_t>(kind));
  std::vector<FoldData> folds;
  for (std::size_t f = 0; f < k; ++f) folds.push_back(fold_data(X, y, s, f));

  if (kind == RegressorKind::ridge || kind == RegressorKind::lasso) {
    double best_mean = -std::numeric_limits<double>::infinity();
    for (double alpha : opt.alphas) {
      std::vector<double> r2;
      for (const auto& d : folds) {
        const auto m = train(kind, d.X_fit, d.y_fit, {{"alpha", alpha}}, opt, 0);
        r2.push_back(r2_score(d.y_val, m.predict(d.X_val)));
      }
      const double mean = mean_of(r2);
      if (mean > best_mean) {
        best_mean = mean;
        res.fold_r2 = r2;
        res.selected = {{"alpha", alpha}};
      }
    }
  } else if (kind == RegressorKind::random_forest) {
    for (std::size_t f = 0; f < k; ++f) {
      const auto m = fit_random_forest(folds[f].X_fit, folds[f].y_fit, opt.forest, derive_seed(kind_seed, f));
      res.fold_r2.push_back(r2_score(folds[f].y_val, m.predict(folds[f].X_val)));
    }
    res.selected = {{"n_trees", static_cast<double>(opt.forest.n_trees)},
                    {"min_samples_leaf", static_cast<double>(opt.forest.min_samples_leaf)}};
  } else {
    // One full-length run per fold; staged validation error picks the round count.
    const std::size_t R = opt.boosting.n_rounds;
    std::vector<std::vector<std::vector<double>>> staged(k);  // fold -> round -> predictions
    std::vector<double> mean_mse(R + 1, 0.0);
    for (std::size_t f = 0; f < k; ++f) {
      const auto& d = folds[f];
      const auto m = fit_gradient_boosting(d.X_fit, d.y_fit, opt.boosting, derive_seed(kind_seed, f));
      const auto& ens = m.ensemble();
      std::vector<double> pred(d.X_val.rows, ens.base_score);
      staged[f].push_back(pred);
      for (std::size_t r = 0; r < ens.trees.size(); ++r) {
        for (std::size_t i = 0; i < d.X_val.rows; ++i) pred[i] += ens.weights[r] * ens.trees[r].predict(d.X_val.row(i));
        staged[f].push_back(pred);
      }
      for (std::size_t r = 0; r <= R; ++r) {
        double se = 0.0;
        for (std::size_t i = 0; i < d.y_val.size(); ++i) {
          se += (d.y_val[i] - staged[f][r][i]) * (d.y_val[i] - staged[f][r][i]);
        }
        mean_mse[r] += se / static_cast<double>(d.y_val.size()) / static_cast<double>(k);
      }
    }
    std::size_t best_r = R == 0 ? 0 : 1;
    for (std::size_t r = best_r; r <= R; ++r) {
      if (mean_mse[r] < mean_mse[best_r]) best_r = r;
    }
    for (std::size_t f = 0; f < k; ++f) res.fold_r2.push_back(r2_score(folds[f].y_val, staged[f][best_r]));
    res.selected = {{"n_rounds", static_cast<double>(best_r)}};
  }
  res.cv_r2_mean = mean_of(res.fold_r2);
  return res;
}

}  // namespace detail

/// Runs the full split / transform / scale / CV / refit / test sequence for
/// one target. Metrics are in transformed target space. The best kind is
/// the one with the highest test R^2 (first in kind order on ties).
inline TargetEvaluation evaluate_and_select(const ParamDataset& ds, std::span<const RegressorKind> kinds,
                                            const PipelineOptions& opt = {}) {
  require(!kinds.empty(), ErrorKind::invalid_input, "no regressor kinds requested");
  if (ds.size() < opt.min_rows) {
    fail(ErrorKind::invalid_input, "target '" + ds.target_name + "' has " + std::to_string(ds.size()) +
                                       " rows; at least " + std::to_string(opt.min_rows) + " are needed");
  }
  TargetEvaluation ev;
  ev.target_name = ds.target_name;
  ev.n_rows = ds.size();
  ev.split = split_and_folds(ds.size(), opt.test_fraction, opt.folds, opt.seed);

  ev.transform.kind = ds.transform;
  if (ds.transform == TransformKind::yeo_johnson) {
    std::vector<double> train_targets;
    for (auto i : ev.split.train) train_targets.push_back(ds.targets[i]);
    ev.transform.yj_lambda = fit_yeo_johnson_lambda(train_targets);
  }
  ev.y = transform_target(ev.transform, ds.targets, Direction::forward);

  std::vector<std::vector<double>> rows;
  for (const auto& f : ds.features) rows.emplace_back(f.begin(), f.end());
  auto st = standardize(rows, ev.split.train);
  ev.scaler = std::move(st.scaler);
  ev.X = Matrix::from_rows(st.rows);

  const Matrix X_train = ev.X.select_rows(ev.split.train);
  const Matrix X_test = ev.X.select_rows(ev.split.test);
  std::vector<double> y_train, y_test;
  for (auto i : ev.split.train) y_train.push_back(ev.y[i]);
  for (auto i : ev.split.test) y_test.push_back(ev.y[i]);

  for (auto kind : kinds) {
    KindResult res = detail::cross_validate(kind, ev.X, ev.y, ev.split, opt);
    const std::uint64_t final_seed = derive_seed(opt.seed, 200 + static_cast<std::uint64_t>(kind));
    res.model = train(kind, X_train, y_train, res.selected, opt, final_seed);
    const auto pred = res.model.predict(X_test);
    res.test_r2 = r2_score(y_test, pred);
    res.test_mae = mae(y_test, pred);
    res.test_rmse = rmse(y_test, pred);
    ev.results.push_back(std::move(res));
  }
  for (std::size_t i = 1; i < ev.results.size(); ++i) {
    if (ev.results[i].test_r2 > ev.results[ev.best_index].test_r2) ev.best_index = i;
  }
  ev.results[ev.best_index].best = true;
  return ev;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string format_hyperparams(const std::map<std::string, double>& hp) {
  std::string s;
  for (const auto& [k, v] : hp) {
    if (!s.empty()) s += ';';
    s += k + '=' + format_double(v);
  }
  return s;
}

/// One row per target, test R^2 per kind in kAllRegressorKinds order
/// (empty cell when a kind was not run), then the best kind.
inline void write_metric_table(std::ostream& out, std::span<const TargetEvaluation> evals) {
  std::vector<std::string> header = {"parameter", "transform", "n_rows"};
  for (auto k : kAllRegressorKinds) header.emplace_back(to_string(k));
  header.emplace_back("best");
  write_csv_row(out, header);
  for (const auto& ev : evals) {
    std::vector<std::string> row = {ev.target_name, to_string(ev.transform.kind), std::to_string(ev.n_rows)};
    for (auto k : kAllRegressorKinds) {
      std::string cell;
      for (const auto& r : ev.results) {
        if (r.kind == k) cell = format_double(r.test_r2);
      }
      row.push_back(cell);
    }
    row.emplace_back(to_string(ev.best().kind));
    write_csv_row(out, row);
  }
}

/// Long form: one row per (target, kind) with CV and test metrics.
inline void write_metric_details(std::ostream& out, std::span<const TargetEvaluation> evals) {
  write_csv_row(out, {"parameter", "transform", "yj_lambda", "kind", "cv_r2_mean", "fold_r2", "test_r2",
                      "test_mae", "test_rmse", "hyperparams", "best"});
  for (const auto& ev : evals) {
    for (const auto& r : ev.results) {
      std::string folds;
      for (double v : r.fold_r2) {
        if (!folds.empty()) folds += ';';
        folds += format_double(v);
      }
      write_csv_row(out, {ev.target_name, to_string(ev.transform.kind),
                          ev.transform.kind == TransformKind::yeo_johnson ? format_double(ev.transform.yj_lambda) : "",
                          to_string(r.kind), format_double(r.cv_r2_mean), folds, format_double(r.test_r2),
                          format_double(r.test_mae), format_double(r.test_rmse), format_hyperparams(r.selected),
                          r.best ? "1" : "0"});
    }
  }
}

}  // namespace ma
