#pragma once

// Aggregation of per-input statistics into per-layer ratio series, scaling
// to the unit box for fitting, and a synthetic series generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ma/activation_stats.hpp"
#include "ma/curve.hpp"
#include "ma/error.hpp"
#include "ma/numeric_io.hpp"
#include "ma/rng.hpp"

namespace ma {

inline constexpr std::size_t kMinFitPoints = 27;
inline constexpr std::size_t kDefaultSampleSize = 10;

struct TrajectoryPoint {
  std::int64_t step = 0;
  double ratio = 0.0;
  std::size_t n_inputs = 1;

  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct LayerTrajectory {
  std::string model_id;
  int layer = 1;
  std::vector<TrajectoryPoint> points;

  std::vector<double> steps() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(static_cast<double>(p.step));
    return out;
  }

  std::vector<double> ratios() const {
    std::vector<double> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.ratio);
    return out;
  }
};

struct NormalizationInfo {
  double t_scale = 1.0;  // max step T
  double r_scale = 1.0;  // max ratio R
};

/// Series scaled into t' = t/T, r' = r/R.
struct NormalizedSeries {
  std::vector<double> t;
  std::vector<double> r;
  NormalizationInfo info;
};

/// Mean of per-input max over mean of per-input median for one
/// (model, layer, step) group.
inline TrajectoryPoint aggregate_step(std::span<const StatsRecord> records) {
  require(!records.empty(), ErrorKind::invalid_input, "aggregate_step needs at least one record");
  const StatsRecord& first = records.front();
  double sum_max = 0.0;
  double sum_median = 0.0;
  for (const auto& r : records) {
    if (r.model_id != first.model_id || r.layer != first.layer || r.step != first.step) {
      fail(ErrorKind::invalid_input, "aggregate_step received records with mixed keys");
    }
    sum_max += r.max_abs;
    sum_median += r.median_abs;
  }
  const double n = static_cast<double>(records.size());
  const double mean_max = sum_max / n;
  const double mean_median = sum_median / n;
  TrajectoryPoint pt;
  pt.step = first.step;
  pt.n_inputs = records.size();
  if (mean_median == 0.0) {
    pt.ratio = mean_max > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  } else {
    pt.ratio = mean_max / mean_median;
  }
  return pt;
}

/// One point per distinct step, ascending. Duplicate (step, input_id) pairs
/// are rejected.
inline LayerTrajectory build_trajectory(std::span<const StatsRecord> records,
                                        const std::string& model_id, int layer) {
  std::map<std::int64_t, std::vector<StatsRecord>> by_step;
  std::set<std::pair<std::int64_t, std::string>> seen;
  for (const auto& r : records) {
    if (r.model_id != model_id || r.layer != layer) continue;
    if (!seen.emplace(r.step, r.input_id).second) {
      throw Error(ErrorKind::validation,
                  "duplicate record for step " + std::to_string(r.step) + ", input '" +
                      r.input_id + "'",
                  std::nullopt, "input_id");
    }
    by_step[r.step].push_back(r);
  }
  if (by_step.empty()) {
    fail(ErrorKind::not_found,
         "no records for model '" + model_id + "' layer " + std::to_string(layer));
  }
  LayerTrajectory traj;
  traj.model_id = model_id;
  traj.layer = layer;
  for (const auto& [step, group] : by_step) traj.points.push_back(aggregate_step(group));
  return traj;
}

/// All distinct (model_id, layer) keys in first-seen-sorted order.
inline std::vector<std::pair<std::string, int>> trajectory_keys(std::span<const StatsRecord> records) {
  std::set<std::pair<std::string, int>> keys;
  for (const auto& r : records) keys.emplace(r.model_id, r.layer);
  return {keys.begin(), keys.end()};
}

inline NormalizedSeries normalize(std::span<const double> steps, std::span<const double> ratios) {
  require(steps.size() == ratios.size(), ErrorKind::invalid_input, "steps/ratios length mismatch");
  require(!steps.empty(), ErrorKind::invalid_input, "empty series");
  double t_max = 0.0;
  double r_max = 0.0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    require(std::isfinite(steps[i]) && steps[i] >= 0.0, ErrorKind::invalid_input,
            "steps must be finite and nonnegative");
    require(std::isfinite(ratios[i]), ErrorKind::invalid_input, "ratios must be finite");
    t_max = std::max(t_max, steps[i]);
    r_max = std::max(r_max, ratios[i]);
  }
  require(t_max > 0.0, ErrorKind::invalid_input, "all steps are zero");
  require(r_max > 0.0, ErrorKind::invalid_input, "max ratio must be positive");
  NormalizedSeries out;
  out.info = {t_max, r_max};
  out.t.reserve(steps.size());
  out.r.reserve(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out.t.push_back(steps[i] / t_max);
    out.r.push_back(ratios[i] / r_max);
  }
  return out;
}

inline NormalizedSeries normalize(const LayerTrajectory& traj) {
  const auto s = traj.steps();
  const auto r = traj.ratios();
  return normalize(s, r);
}

inline std::vector<double> denormalize_values(std::span<const double> values, double scale) {
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v *= scale;
  return out;
}

/// Maps parameters fitted on (t/T, r/R) back to raw units so that
/// f_raw(t) = R * f_norm(t / T).
inline FitParams denormalize_params(const FitParams& p, const NormalizationInfo& info) {
  require(info.t_scale > 0.0 && info.r_scale > 0.0, ErrorKind::invalid_input,
          "normalization scales must be positive");
  return {info.r_scale * p.A, p.lambda, p.gamma / info.t_scale, p.t0, info.r_scale * p.K};
}

/// Inverse of denormalize_params.
inline FitParams normalize_params(const FitParams& p, const NormalizationInfo& info) {
  require(info.t_scale > 0.0 && info.r_scale > 0.0, ErrorKind::invalid_input,
          "normalization scales must be positive");
  return {p.A / info.r_scale, p.lambda, p.gamma * info.t_scale, p.t0, p.K / info.r_scale};
}

/// Samples f at the given steps plus Gaussian noise, clamped to >= 1.
inline LayerTrajectory gen_synthetic(const FitParams& p, std::span<const std::int64_t> steps,
                                     double noise_sd, std::uint64_t seed,
                                     std::string model_id = "synthetic", int layer = 1) {
  require(noise_sd >= 0.0 && std::isfinite(noise_sd), ErrorKind::invalid_input,
          "noise_sd must be finite and nonnegative");
  for (std::size_t i = 1; i < steps.size(); ++i) {
    require(steps[i] > steps[i - 1], ErrorKind::invalid_input, "steps must strictly increase");
  }
  for (auto s : steps) {
    if (!(p.x_at(static_cast<double>(s)) > 0.0)) {
      fail(ErrorKind::invalid_input, "gamma*t + t0 <= 0 at step " + std::to_string(s));
    }
  }
  Rng rng(seed);
  LayerTrajectory traj;
  traj.model_id = std::move(model_id);
  traj.layer = layer;
  for (auto s : steps) {
    double v = eval_model(p, static_cast<double>(s));
    if (noise_sd > 0.0) v += rng.normal(0.0, noise_sd);
    traj.points.push_back({s, std::max(v, 1.0), 1});
  }
  return traj;
}

inline void write_trajectory_csv(std::ostream& out, const LayerTrajectory& traj) {
  out << "step,ratio,n_inputs\n";
  for (const auto& p : traj.points) {
    out << p.step << ',' << format_double(p.ratio) << ',' << p.n_inputs << '\n';
  }
}

inline LayerTrajectory read_trajectory_csv(std::istream& in, std::string model_id, int layer) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, "empty trajectory CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "step,ratio,n_inputs", ErrorKind::parse, "unexpected trajectory CSV header");
  LayerTrajectory traj;
  traj.model_id = std::move(model_id);
  traj.layer = layer;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 3) throw Error(ErrorKind::parse, "expected 3 columns", lineno);
    try {
      TrajectoryPoint p;
      p.step = static_cast<std::int64_t>(parse_double(cells[0]));
      p.ratio = parse_double(cells[1]);
      p.n_inputs = static_cast<std::size_t>(parse_double(cells[2]));
      if (!traj.points.empty() && p.step <= traj.points.back().step) {
        throw Error(ErrorKind::validation, "steps must strictly increase", lineno, "step");
      }
      traj.points.push_back(p);
    } catch (const Error& e) {
      if (e.line()) throw;
      throw Error(e.kind(), e.message(), e.line() ? e.line() : std::optional<std::size_t>(lineno), e.field());
    }
  }
  return traj;
}

}  // namespace ma
