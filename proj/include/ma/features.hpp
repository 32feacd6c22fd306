#pragma once

// Architecture feature vectors, target transforms and column scaling.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma/error.hpp"

namespace ma {

/// Model-level architecture description, as stored in the registry file.
struct ArchInfo {
  std::string model_id;
  int n_layers = 1;
  int hidden_dim = 1;
  int n_heads = 1;
  int intermediate_dim = 1;
};

struct ArchSpec {
  ArchInfo arch;
  int layer_index = 1;
};

inline constexpr std::size_t kFeatureCount = 10;

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {
    "layer_pos",    "layer_pos_sq",       "layer_pos_cube", "layer_pos_sqrt",  "attn_density",
    "intermediate_ratio", "width_depth", "heads_per_layer", "log_hidden", "depth_interaction"};

using FeatureVector = std::array<double, kFeatureCount>;

inline std::optional<std::size_t> feature_index(const std::string& name) {
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (name == kFeatureNames[i]) return i;
  }
  return std::nullopt;
}

inline void validate(const ArchInfo& a) {
  require(a.n_layers > 0 && a.hidden_dim > 0 && a.n_heads > 0 && a.intermediate_dim > 0,
          ErrorKind::invalid_input, "architecture '" + a.model_id + "' has a nonpositive dimension");
}

/// Feature vector from real-valued dimensions (l already offset). Used
/// directly when sweeping dimensions for partial dependence.
inline FeatureVector features_from_dims(double l, double L, double d, double H, double d_ff) {
  const double pos = l / L;
  return {pos, pos * pos, pos * pos * pos, std::sqrt(pos), H / d, d_ff / d, d / L, H / L, std::log(d), l * L};
}

/// layer_offset shifts the layer index before it enters layer_pos and
/// depth_interaction; 0 gives l/L with 1-based l, 1 gives the 0-based form.
inline FeatureVector build_features(const ArchSpec& spec, int layer_offset = 0) {
  validate(spec.arch);
  const auto& a = spec.arch;
  if (spec.layer_index < 1 || spec.layer_index > a.n_layers) {
    fail(ErrorKind::invalid_input, "layer " + std::to_string(spec.layer_index) +
                                       " outside [1, " + std::to_string(a.n_layers) + "] for '" +
                                       a.model_id + "'");
  }
  return features_from_dims(spec.layer_index - layer_offset, a.n_layers, a.hidden_dim, a.n_heads,
                            a.intermediate_dim);
}

inline std::vector<ArchInfo> parse_arch_registry(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("architecture registry: ") + e.what());
  }
  require(j.is_array(), ErrorKind::format, "architecture registry must be a JSON array");
  std::vector<ArchInfo> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    try {
      ArchInfo a;
      a.model_id = e.at("model_id").get<std::string>();
      a.n_layers = e.at("n_layers").get<int>();
      a.hidden_dim = e.at("hidden_dim").get<int>();
      a.n_heads = e.at("n_heads").get<int>();
      a.intermediate_dim = e.at("intermediate_dim").get<int>();
      validate(a);
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::format, "architecture registry entry " + std::to_string(i) + ": " + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Target transforms

enum class TransformKind { log1p, yeo_johnson };
enum class Direction { forward, inverse };

inline const char* to_string(TransformKind k) {
  return k == TransformKind::log1p ? "log1p" : "yeo-johnson";
}

inline double yeo_johnson(double x, double lam) {
  if (x >= 0.0) {
    return lam == 0.0 ? std::log1p(x) : std::expm1(lam * std::log1p(x)) / lam;
  }
  const double l2 = 2.0 - lam;
  return l2 == 0.0 ? -std::log1p(-x) : -std::expm1(l2 * std::log1p(-x)) / l2;
}

/// Inverse of yeo_johnson; nullopt when y lies outside the image.
inline std::optional<double> yeo_johnson_inverse(double y, double lam) {
  if (y >= 0.0) {
    if (lam == 0.0) return std::expm1(y);
    const double u = lam * y;
    if (!(u > -1.0)) return std::nullopt;
    return std::expm1(std::log1p(u) / lam);
  }
  const double l2 = 2.0 - lam;
  if (l2 == 0.0) return -std::expm1(-y);
  const double u = -l2 * y;
  if (!(u > -1.0)) return std::nullopt;
  return -std::expm1(std::log1p(u) / l2);
}

struct TargetTransform {
  TransformKind kind = TransformKind::log1p;
  double yj_lambda = 1.0;  // used only by yeo_johnson
};

inline std::vector<double> transform_target(const TargetTransform& t, std::span<const double> values,
                                            Direction dir) {
  std::vector<double> out;
  out.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    const auto bad = [&](const char* why) {
      throw Error(ErrorKind::domain, std::string(to_string(t.kind)) + " " +
                                         (dir == Direction::forward ? "forward" : "inverse") +
                                         ": value at index " + std::to_string(i) + " " + why);
    };
    if (!std::isfinite(v)) bad("is not finite");
    double r = 0.0;
    if (t.kind == TransformKind::log1p) {
      if (dir == Direction::forward) {
        if (!(v > -1.0)) bad("must exceed -1");
        r = std::log1p(v);
      } else {
        r = std::expm1(v);
      }
    } else if (dir == Direction::forward) {
      r = yeo_johnson(v, t.yj_lambda);
    } else {
      const auto inv = yeo_johnson_inverse(v, t.yj_lambda);
      if (!inv) bad("is outside the transform image");
      r = *inv;
    }
    if (!std::isfinite(r)) bad("overflows");
    out.push_back(r);
  }
  return out;
}

/// Gaussian profile log-likelihood of the Yeo-Johnson transformed sample.
inline double yeo_johnson_llf(std::span<const double> x, double lam) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = yeo_johnson(x[i], lam);
    mean += y[i];
  }
  mean /= n;
  double var = 0.0;
  double jac = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    var += (y[i] - mean) * (y[i] - mean);
    jac += std::copysign(1.0, x[i]) * std::log1p(std::abs(x[i]));
  }
  var /= n;
  if (!(var > 0.0) || !std::isfinite(var)) return -std::numeric_limits<double>::infinity();
  return -0.5 * n * std::log(var) + (lam - 1.0) * jac;
}

/// Maximizes the profile likelihood over lambda in {-5, -4.99, ..., 5};
/// ties keep the smallest lambda.
inline double fit_yeo_johnson_lambda(std::span<const double> x) {
  require(x.size() >= 2, ErrorKind::invalid_input, "Yeo-Johnson fit needs at least 2 values");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      fail(ErrorKind::domain, "Yeo-Johnson fit: value at index " + std::to_string(i) + " is not finite");
    }
  }
  double best_lam = 1.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = -500; k <= 500; ++k) {
    const double lam = k / 100.0;
    const double v = yeo_johnson_llf(x, lam);
    if (v > best) {
      best = v;
      best_lam = lam;
    }
  }
  return best_lam;
}

// ---------------------------------------------------------------------------
// Column scaling

struct Scaler {
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<bool> constant;  // columns whose sd was forced to 1

  bool any_constant() const {
    for (bool c : constant) {
      if (c) return true;
    }
    return false;
  }

  std::vector<double> apply(std::span<const double> row) const {
    require(row.size() == mean.size(), ErrorKind::invalid_input, "scaler column count mismatch");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / sd[j];
    return out;
  }

  std::vector<double> invert(std::span<const double> row) const {
    require(row.size() == mean.size(), ErrorKind::invalid_input, "scaler column count mismatch");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = row[j] * sd[j] + mean[j];
    return out;
  }
};

/// Population mean and sd per column over the rows listed in fit_rows.
inline Scaler fit_scaler(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> fit_rows) {
  require(fit_rows.size() >= 2, ErrorKind::invalid_input, "scaler needs at least 2 fit rows");
  const std::size_t p = rows.at(fit_rows[0]).size();
  Scaler s;
  s.mean.assign(p, 0.0);
  s.sd.assign(p, 0.0);
  s.constant.assign(p, false);
  for (auto i : fit_rows) {
    require(rows.at(i).size() == p, ErrorKind::invalid_input, "ragged feature matrix");
    for (std::size_t j = 0; j < p; ++j) s.mean[j] += rows[i][j];
  }
  const double n = static_cast<double>(fit_rows.size());
  for (auto& m : s.mean) m /= n;
  for (auto i : fit_rows) {
    for (std::size_t j = 0; j < p; ++j) s.sd[j] += (rows[i][j] - s.mean[j]) * (rows[i][j] - s.mean[j]);
  }
  for (std::size_t j = 0; j < p; ++j) {
    s.sd[j] = std::sqrt(s.sd[j] / n);
    if (!(s.sd[j] > 1e-12 * std::max(1.0, std::abs(s.mean[j])))) {
      s.sd[j] = 1.0;
      s.mean[j] = rows[fit_rows[0]][j];
      s.constant[j] = true;
    }
  }
  return s;
}

struct Standardized {
  std::vector<std::vector<double>> rows;
  Scaler scaler;
};

inline Standardized standardize(const std::vector<std::vector<double>>& rows,
                                std::span<const std::size_t> fit_rows) {
  Standardized out;
  out.scaler = fit_scaler(rows, fit_rows);
  out.rows.reserve(rows.size());
  for (const auto& r : rows) out.rows.push_back(out.scaler.apply(r));
  return out;
}

}  // namespace ma
