#pragma once

// Least-squares regression trees (CART) and the dense row-major matrix used
// throughout the ML modules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ma/error.hpp"
#include "ma/rng.hpp"

namespace ma {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rs) {
    require(!rs.empty(), ErrorKind::invalid_input, "matrix needs at least one row");
    Matrix m(rs.size(), rs[0].size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      require(rs[i].size() == m.cols, ErrorKind::invalid_input, "ragged rows");
      std::copy(rs[i].begin(), rs[i].end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }

  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix m(idx.size(), cols);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto r = row(idx[k]);
      std::copy(r.begin(), r.end(), m.row(k).begin());
    }
    return m;
  }
};

/// Tree node. Internal nodes route x[feature] <= threshold to the left.
/// cover is the (possibly bootstrap-weighted) training count reaching the
/// node; gain is the squared-error reduction of its split.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  double cover = 0.0;
  double gain = 0.0;

  bool is_leaf() const { return left < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(std::span<const double> x) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
      const auto& nd = nodes[n];
      n = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[n].value;
  }

  int depth(int n = 0) const {
    if (nodes[n].is_leaf()) return 0;
    return 1 + std::max(depth(nodes[n].left), depth(nodes[n].right));
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& nd) { return nd.is_leaf(); }));
  }

  /// Cover-weighted mean of leaf values.
  double expected_value() const {
    double s = 0.0;
    for (const auto& nd : nodes) {
      if (nd.is_leaf()) s += nd.cover * nd.value;
    }
    return s / nodes[0].cover;
  }
};

struct TreeOptions {
  int max_depth = -1;  // -1 = unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t max_features = 0;  // 0 = all features
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const double> y, const TreeOptions& opt, Rng* rng)
      : X_(X), y_(y), opt_(opt), rng_(rng) {}

  Tree build(std::vector<std::size_t> samples) {
    Tree t;
    tree_ = &t;
    grow(samples, 0);
    return t;
  }

 private:
  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    std::size_t n_left = 0;
  };

  int grow(std::vector<std::size_t>& s, int depth) {
    const int id = static_cast<int>(tree_->nodes.size());
    tree_->nodes.emplace_back();
    double sum = 0.0;
    for (auto i : s) sum += y_[i];
    const double n = static_cast<double>(s.size());
    tree_->nodes[id].value = sum / n;
    tree_->nodes[id].cover = n;

    if ((opt_.max_depth >= 0 && depth >= opt_.max_depth) || s.size() < 2 * opt_.min_samples_leaf) {
      return id;
    }
    const Split sp = best_split(s, sum);
    if (sp.feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto i : s) (X_(i, sp.feature) <= sp.threshold ? left : right).push_back(i);
    s.clear();
    s.shrink_to_fit();
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& nd = tree_->nodes[id];
    nd.feature = sp.feature;
    nd.threshold = sp.threshold;
    nd.gain = sp.gain;
    nd.left = l;
    nd.right = r;
    return id;
  }

  std::vector<std::size_t> candidate_features() {
    std::vector<std::size_t> f(X_.cols);
    std::iota(f.begin(), f.end(), std::size_t{0});
    if (opt_.max_features == 0 || opt_.max_features >= X_.cols || rng_ == nullptr) return f;
    // Partial Fisher-Yates: first max_features entries form the sample.
    for (std::size_t i = 0; i < opt_.max_features; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_->below(X_.cols - i));
      std::swap(f[i], f[j]);
    }
    f.resize(opt_.max_features);
    std::sort(f.begin(), f.end());
    return f;
  }

  Split best_split(const std::vector<std::size_t>& s, double total) {
    Split best;
    const double n = static_cast<double>(s.size());
    const double parent = total * total / n;
    std::vector<std::size_t> order(s);
    for (std::size_t f : candidate_features()) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double xa = X_(a, f), xb = X_(b, f);
        return xa < xb || (xa == xb && a < b);
      });
      double left_sum = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        left_sum += y_[order[k]];
        const std::size_t nl = k + 1;
        const double xk = X_(order[k], f);
        const double xn = X_(order[k + 1], f);
        if (xk == xn) continue;
        if (nl < opt_.min_samples_leaf || order.size() - nl < opt_.min_samples_leaf) continue;
        const double nr = n - static_cast<double>(nl);
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
        if (gain > best.gain) {
          double thr = 0.5 * (xk + xn);
          if (!(thr < xn)) thr = xk;  // midpoint rounded up to xn
          best = {static_cast<int>(f), thr, gain, nl};
        }
      }
    }
    // Reject splits that only reflect rounding noise.
    double ss = 0.0;
    for (auto i : s) ss += y_[i] * y_[i];
    if (best.feature >= 0 && !(best.gain > 1e-12 * std::max(ss - parent, 1e-300))) best.feature = -1;
    return best;
  }

  const Matrix& X_;
  std::span<const double> y_;
  TreeOptions opt_;
  Rng* rng_;
  Tree* tree_ = nullptr;
};

}  // namespace detail

/// Fits a least-squares regression tree on the given sample indices
/// (repeats allowed, as produced by bootstrapping).
inline Tree fit_tree(const Matrix& X, std::span<const double> y, std::vector<std::size_t> samples,
                     const TreeOptions& opt = {}, Rng* rng = nullptr) {
  require(y.size() == X.rows, ErrorKind::invalid_input, "target length does not match rows");
  require(!samples.empty(), ErrorKind::invalid_input, "tree needs at least one sample");
  require(opt.min_samples_leaf >= 1, ErrorKind::invalid_input, "min_samples_leaf must be >= 1");
  return detail::TreeBuilder(X, y, opt, rng).build(std::move(samples));
}

inline Tree fit_tree(const Matrix& X, std::span<const double> y, const TreeOptions& opt = {},
                     Rng* rng = nullptr) {
  std::vector<std::size_t> all(X.rows);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return fit_tree(X, y, std::move(all), opt, rng);
}

}  // namespace ma
