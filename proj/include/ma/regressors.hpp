#pragma once

// Ridge, lasso, random forest and gradient-boosted trees behind one
// TrainedRegressor type, plus a versioned JSON artifact format.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ma/error.hpp"
#include "ma/rng.hpp"
#include "ma/tree.hpp"

namespace ma {

enum class RegressorKind { ridge, lasso, random_forest, gradient_boosting };

inline constexpr std::array<RegressorKind, 4> kAllRegressorKinds = {
    RegressorKind::ridge, RegressorKind::lasso, RegressorKind::random_forest,
    RegressorKind::gradient_boosting};

inline const char* to_string(RegressorKind k) {
  switch (k) {
    case RegressorKind::ridge: return "ridge";
    case RegressorKind::lasso: return "lasso";
    case RegressorKind::random_forest: return "random_forest";
    case RegressorKind::gradient_boosting: return "gradient_boosting";
  }
  return "?";
}

inline RegressorKind regressor_kind_from_string(const std::string& s) {
  for (auto k : kAllRegressorKinds) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::invalid_input, "unknown regressor kind '" + s + "'");
}

inline bool is_tree_kind(RegressorKind k) {
  return k == RegressorKind::random_forest || k == RegressorKind::gradient_boosting;
}

struct LinearModel {
  std::vector<double> coef;
  double intercept = 0.0;
};

/// prediction = base_score + sum_t weights[t] * trees[t](x)
struct TreeEnsemble {
  double base_score = 0.0;
  std::vector<double> weights;
  std::vector<Tree> trees;

  double predict(std::span<const double> x) const {
    double s = base_score;
    for (std::size_t t = 0; t < trees.size(); ++t) s += weights[t] * trees[t].predict(x);
    return s;
  }
};

struct TrainedRegressor {
  RegressorKind kind = RegressorKind::ridge;
  std::size_t n_features = 0;
  std::map<std::string, double> hyperparams;
  std::uint64_t seed = 0;
  std::variant<LinearModel, TreeEnsemble> state;

  const LinearModel& linear() const { return std::get<LinearModel>(state); }
  const TreeEnsemble& ensemble() const {
    if (!std::holds_alternative<TreeEnsemble>(state)) {
      fail(ErrorKind::unsupported, std::string(to_string(kind)) + " is not a tree model");
    }
    return std::get<TreeEnsemble>(state);
  }

  double predict(std::span<const double> x) const {
    if (x.size() != n_features) {
      fail(ErrorKind::invalid_input, "expected " + std::to_string(n_features) + " features, got " +
                                         std::to_string(x.size()));
    }
    if (const auto* lin = std::get_if<LinearModel>(&state)) {
      double s = lin->intercept;
      for (std::size_t j = 0; j < x.size(); ++j) s += lin->coef[j] * x[j];
      return s;
    }
    return std::get<TreeEnsemble>(state).predict(x);
  }

  std::vector<double> predict(const Matrix& X) const {
    std::vector<double> out(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict(X.row(i));
    return out;
  }
};

namespace detail {

inline void check_training_data(const Matrix& X, std::span<const double> y) {
  require(X.rows >= 2, ErrorKind::invalid_input, "training needs at least 2 rows");
  require(y.size() == X.rows, ErrorKind::invalid_input, "target length does not match rows");
  require(X.cols >= 1, ErrorKind::invalid_input, "training needs at least 1 feature");
  for (double v : X.data) require(std::isfinite(v), ErrorKind::invalid_input, "non-finite feature");
  for (double v : y) require(std::isfinite(v), ErrorKind::invalid_input, "non-finite target");
}

struct Centered {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd x_mean;
  double y_mean = 0.0;
};

inline Centered center(const Matrix& X, std::span<const double> y) {
  Centered c;
  c.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      X.data.data(), static_cast<Eigen::Index>(X.rows), static_cast<Eigen::Index>(X.cols));
  c.y = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  c.x_mean = c.X.colwise().mean().transpose();
  c.y_mean = c.y.mean();
  c.X.rowwise() -= c.x_mean.transpose();
  c.y.array() -= c.y_mean;
  bool degenerate = true;
  for (std::size_t i = 1; i < X.rows && degenerate; ++i) {
    for (std::size_t j = 0; j < X.cols; ++j) {
      if (X(i, j) != X(0, j)) {
        degenerate = false;
        break;
      }
    }
  }
  require(!degenerate, ErrorKind::invalid_input, "degenerate design: all rows identical");
  return c;
}

inline LinearModel finish_linear(const Centered& c, const Eigen::VectorXd& w) {
  LinearModel m;
  m.coef.assign(w.data(), w.data() + w.size());
  m.intercept = c.y_mean - c.x_mean.dot(w);
  return m;
}

}  // namespace detail

/// Minimizes ||y - Xw - b||^2 + alpha ||w||^2 (intercept unpenalized).
/// alpha = 0 gives the minimum-norm least-squares solution.
inline TrainedRegressor fit_ridge(const Matrix& X, std::span<const double> y, double alpha) {
  detail::check_training_data(X, y);
  require(alpha >= 0.0, ErrorKind::invalid_input, "ridge alpha must be nonnegative");
  const auto c = detail::center(X, y);
  Eigen::VectorXd w;
  if (alpha == 0.0) {
    w = c.X.completeOrthogonalDecomposition().solve(c.y);
  } else {
    Eigen::MatrixXd G = c.X.transpose() * c.X;
    G.diagonal().array() += alpha;
    w = G.ldlt().solve(c.X.transpose() * c.y);
  }
  TrainedRegressor r;
  r.kind = RegressorKind::ridge;
  r.n_features = X.cols;
  r.hyperparams = {{"alpha", alpha}};
  r.state = detail::finish_linear(c, w);
  return r;
}

/// Smallest alpha at which every lasso coefficient is zero.
inline double lasso_alpha_max(const Matrix& X, std::span<const double> y) {
  const auto c = detail::center(X, y);
  return (c.X.transpose() * c.y).cwiseAbs().maxCoeff() / static_cast<double>(X.rows);
}

struct LassoOptions {
  double tol = 1e-8;  // duality gap relative to ||y - mean||^2
  int max_iterations = 100000;
};

/// Minimizes (1 / 2n) ||y - Xw - b||^2 + alpha ||w||_1 by cyclic coordinate
/// descent, stopping on the duality gap.
inline TrainedRegressor fit_lasso(const Matrix& X, std::span<const double> y, double alpha,
                                  const LassoOptions& opt = {}) {
  detail::check_training_data(X, y);
  require(alpha >= 0.0, ErrorKind::invalid_input, "lasso alpha must be nonnegative");
  const auto c = detail::center(X, y);
  const Eigen::Index n = c.X.rows(), p = c.X.cols();
  const double nd = static_cast<double>(n);
  const Eigen::VectorXd col_sq = c.X.colwise().squaredNorm().transpose();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd R = c.y;
  const double y_norm2 = c.y.squaredNorm();
  const double tol = opt.tol * std::max(y_norm2, 1e-300);
  const double l1 = alpha * nd;

  const auto gap = [&]() {
    const Eigen::VectorXd XtR = c.X.transpose() * R;
    const double dual_norm = XtR.cwiseAbs().maxCoeff();
    const double r_norm2 = R.squaredNorm();
    double g;
    double cst = 1.0;
    if (dual_norm > l1) {
      cst = l1 / dual_norm;
      g = 0.5 * (r_norm2 + r_norm2 * cst * cst);
    } else {
      g = r_norm2;
    }
    return g + l1 * w.lpNorm<1>() - cst * R.dot(c.y);
  };

  for (int it = 0; it < opt.max_iterations; ++it) {
    double w_max = 0.0, d_w_max = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq[j] == 0.0) continue;
      const double wj = w[j];
      if (wj != 0.0) R += wj * c.X.col(j);
      const double rho = c.X.col(j).dot(R);
      const double mag = std::max(std::abs(rho) - l1, 0.0);
      w[j] = std::copysign(mag, rho) / col_sq[j];
      if (w[j] != 0.0) R -= w[j] * c.X.col(j);
      d_w_max = std::max(d_w_max, std::abs(w[j] - wj));
      w_max = std::max(w_max, std::abs(w[j]));
    }
    if (w_max == 0.0 || d_w_max / w_max < 1e-4 || it + 1 == opt.max_iterations) {
      if (gap() < tol) break;
    }
  }

  TrainedRegressor r;
  r.kind = RegressorKind::lasso;
  r.n_features = X.cols;
  r.hyperparams = {{"alpha", alpha}};
  r.state = detail::finish_linear(c, w);
  return r;
}

struct ForestOptions {
  std::size_t n_trees = 400;
  std::size_t min_samples_leaf = 2;
  std::size_t max_features = 0;  // 0 = ceil(p / 3)
  int max_depth = -1;
  bool bootstrap = true;
};

inline TrainedRegressor fit_random_forest(const Matrix& X, std::span<const double> y,
                                          const ForestOptions& opt, std::uint64_t seed) {
  detail::check_training_data(X, y);
  require(opt.n_trees >= 1, ErrorKind::invalid_input, "forest needs at least 1 tree");
  TreeOptions topt;
  topt.min_samples_leaf = opt.min_samples_leaf;
  topt.max_depth = opt.max_depth;
  topt.max_features = opt.max_features == 0 ? (X.cols + 2) / 3 : opt.max_features;

  TreeEnsemble ens;
  for (std::size_t t = 0; t < opt.n_trees; ++t) {
    Rng rng(derive_seed(seed, t));
    std::vector<std::size_t> samples(X.rows);
    if (opt.bootstrap) {
      for (auto& s : samples) s = static_cast<std::size_t>(rng.below(X.rows));
    } else {
      std::iota(samples.begin(), samples.end(), std::size_t{0});
    }
    ens.trees.push_back(fit_tree(X, y, std::move(samples), topt, &rng));
    ens.weights.push_back(1.0 / static_cast<double>(opt.n_trees));
  }

  TrainedRegressor r;
  r.kind = RegressorKind::random_forest;
  r.n_features = X.cols;
  r.seed = seed;
  r.hyperparams = {{"n_trees", static_cast<double>(opt.n_trees)},
                   {"min_samples_leaf", static_cast<double>(opt.min_samples_leaf)},
                   {"max_features", static_cast<double>(topt.max_features)},
                   {"max_depth", static_cast<double>(opt.max_depth)},
                   {"bootstrap", opt.bootstrap ? 1.0 : 0.0}};
  r.state = std::move(ens);
  return r;
}

struct BoostingOptions {
  std::size_t n_rounds = 500;
  double learning_rate = 0.05;
  int max_depth = 3;
  std::size_t min_samples_leaf = 1;
};

/// Stagewise least-squares boosting from the training mean. When
/// loss_history is given it receives the training MSE after each round
/// (entry 0 is the base score alone).
inline TrainedRegressor fit_gradient_boosting(const Matrix& X, std::span<const double> y,
                                              const BoostingOptions& opt, std::uint64_t seed,
                                              std::vector<double>* loss_history = nullptr) {
  detail::check_training_data(X, y);
  require(opt.learning_rate > 0.0 && opt.learning_rate <= 1.0, ErrorKind::invalid_input,
          "learning_rate must be in (0, 1]");
  TreeOptions topt;
  topt.max_depth = opt.max_depth;
  topt.min_samples_leaf = opt.min_samples_leaf;

  TreeEnsemble ens;
  ens.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  std::vector<double> pred(X.rows, ens.base_score), resid(X.rows);
  const auto mse = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
    return s / static_cast<double>(X.rows);
  };
  if (loss_history) loss_history->assign(1, mse());
  for (std::size_t m = 0; m < opt.n_rounds; ++m) {
    for (std::size_t i = 0; i < X.rows; ++i) resid[i] = y[i] - pred[i];
    Tree t = fit_tree(X, resid, topt);
    for (std::size_t i = 0; i < X.rows; ++i) pred[i] += opt.learning_rate * t.predict(X.row(i));
    ens.trees.push_back(std::move(t));
    ens.weights.push_back(opt.learning_rate);
    if (loss_history) loss_history->push_back(mse());
  }

  TrainedRegressor r;
  r.kind = RegressorKind::gradient_boosting;
  r.n_features = X.cols;
  r.seed = seed;
  r.hyperparams = {{"n_rounds", static_cast<double>(opt.n_rounds)},
                   {"learning_rate", opt.learning_rate},
                   {"max_depth", static_cast<double>(opt.max_depth)},
                   {"min_samples_leaf", static_cast<double>(opt.min_samples_leaf)}};
  r.state = std::move(ens);
  return r;
}

// ---------------------------------------------------------------------------
// Artifact format

inline constexpr int kRegressorFormatVersion = 1;

namespace detail {

inline nlohmann::ordered_json node_to_json(const Tree& t, int n) {
  const auto& nd = t.nodes[n];
  nlohmann::ordered_json j;
  if (nd.is_leaf()) {
    j["value"] = nd.value;
    j["cover"] = nd.cover;
    return j;
  }
  j["feature"] = nd.feature;
  j["threshold"] = nd.threshold;
  j["value"] = nd.value;
  j["cover"] = nd.cover;
  j["gain"] = nd.gain;
  j["left"] = node_to_json(t, nd.left);
  j["right"] = node_to_json(t, nd.right);
  return j;
}

inline int node_from_json(const nlohmann::json& j, Tree& t, std::size_t n_features) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  TreeNode nd;
  nd.value = j.at("value").get<double>();
  nd.cover = j.at("cover").get<double>();
  if (j.contains("left")) {
    nd.feature = j.at("feature").get<int>();
    require(nd.feature >= 0 && static_cast<std::size_t>(nd.feature) < n_features, ErrorKind::format,
            "tree node feature index out of range");
    nd.threshold = j.at("threshold").get<double>();
    nd.gain = j.value("gain", 0.0);
    nd.left = node_from_json(j.at("left"), t, n_features);
    nd.right = node_from_json(j.at("right"), t, n_features);
  }
  t.nodes[id] = nd;
  return id;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const TrainedRegressor& r) {
  nlohmann::ordered_json j;
  j["format"] = "ma-regressor";
  j["version"] = kRegressorFormatVersion;
  j["kind"] = to_string(r.kind);
  j["n_features"] = r.n_features;
  j["seed"] = r.seed;
  j["hyperparams"] = r.hyperparams;
  if (const auto* lin = std::get_if<LinearModel>(&r.state)) {
    j["coef"] = lin->coef;
    j["intercept"] = lin->intercept;
  } else {
    const auto& ens = std::get<TreeEnsemble>(r.state);
    j["base_score"] = ens.base_score;
    j["weights"] = ens.weights;
    auto trees = nlohmann::ordered_json::array();
    for (const auto& t : ens.trees) trees.push_back(detail::node_to_json(t, 0));
    j["trees"] = std::move(trees);
  }
  return j;
}

inline TrainedRegressor regressor_from_json(const nlohmann::json& j) {
  try {
    require(j.at("format").get<std::string>() == "ma-regressor", ErrorKind::format,
            "not a regressor artifact");
    const int version = j.at("version").get<int>();
    require(version == kRegressorFormatVersion, ErrorKind::unsupported,
            "unsupported regressor artifact version " + std::to_string(version));
    TrainedRegressor r;
    r.kind = regressor_kind_from_string(j.at("kind").get<std::string>());
    r.n_features = j.at("n_features").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hyperparams = j.at("hyperparams").get<std::map<std::string, double>>();
    if (is_tree_kind(r.kind)) {
      TreeEnsemble ens;
      ens.base_score = j.at("base_score").get<double>();
      ens.weights = j.at("weights").get<std::vector<double>>();
      for (const auto& tj : j.at("trees")) {
        Tree t;
        detail::node_from_json(tj, t, r.n_features);
        ens.trees.push_back(std::move(t));
      }
      require(ens.weights.size() == ens.trees.size(), ErrorKind::format,
              "weights and trees differ in length");
      r.state = std::move(ens);
    } else {
      LinearModel lin;
      lin.coef = j.at("coef").get<std::vector<double>>();
      lin.intercept = j.at("intercept").get<double>();
      require(lin.coef.size() == r.n_features, ErrorKind::format, "coefficient count mismatch");
      r.state = std::move(lin);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("regressor artifact: ") + e.what());
  }
}

}  // namespace ma
