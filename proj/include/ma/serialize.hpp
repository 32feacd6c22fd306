#pragma once

// JSON documents for fit and peak results, and the CSV heatmap layout
// (rows = layers, columns = models).

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma/curve.hpp"
#include "ma/error.hpp"
#include "ma/model_fit.hpp"
#include "ma/numeric_io.hpp"
#include "ma/peak.hpp"

namespace ma {

/// One fitted layer as stored in the fit output file.
struct FitRecord {
  std::string model_id;
  int layer = 1;
  FitParams params;
  std::optional<double> r_squared;
  double aic = 0.0;
  double sse = 0.0;
  std::size_t n_points = 0;
  bool converged = false;
};

inline FitRecord make_fit_record(std::string model_id, int layer, const FitResult& r) {
  return {std::move(model_id), layer, r.params, r.r_squared, r.aic, r.sse, r.n_points, r.converged};
}

inline nlohmann::ordered_json to_json(const FitRecord& f) {
  nlohmann::ordered_json params;
  const auto a = f.params.to_array();
  for (std::size_t i = 0; i < a.size(); ++i) params[kParamNames[i]] = a[i];
  nlohmann::ordered_json j;
  j["model_id"] = f.model_id;
  j["layer"] = f.layer;
  j["params"] = std::move(params);
  j["r_squared"] = f.r_squared ? nlohmann::ordered_json(*f.r_squared) : nlohmann::ordered_json(nullptr);
  j["aic"] = f.aic;
  j["sse"] = f.sse;
  j["n_points"] = f.n_points;
  j["converged"] = f.converged;
  return j;
}

inline FitRecord fit_record_from_json(const nlohmann::json& j) {
  try {
    FitRecord f;
    f.model_id = j.at("model_id").get<std::string>();
    f.layer = j.at("layer").get<int>();
    const auto& p = j.at("params");
    std::array<double, FitParams::kCount> a{};
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = p.at(kParamNames[i]).get<double>();
    f.params = FitParams::from_array(a);
    if (!j.at("r_squared").is_null()) f.r_squared = j.at("r_squared").get<double>();
    f.aic = j.at("aic").get<double>();
    f.sse = j.at("sse").get<double>();
    f.n_points = j.at("n_points").get<std::size_t>();
    f.converged = j.at("converged").get<bool>();
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("fit record: ") + e.what());
  }
}

/// Fit output file: a JSON array of fit records.
inline void write_fits(std::ostream& out, const std::vector<FitRecord>& fits) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& f : fits) arr.push_back(to_json(f));
  out << arr.dump(2) << '\n';
}

inline std::vector<FitRecord> read_fits(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::parse, std::string("fit file: ") + e.what());
  }
  require(j.is_array(), ErrorKind::format, "fit file must hold a JSON array");
  std::vector<FitRecord> out;
  for (const auto& e : j) out.push_back(fit_record_from_json(e));
  return out;
}

inline nlohmann::ordered_json to_json(const std::string& model_id, int layer, const PeakReport& p) {
  nlohmann::ordered_json j;
  j["model_id"] = model_id;
  j["layer"] = layer;
  j["mode"] = to_string(p.mode);
  j["exists"] = p.exists;
  j["t_peak"] = p.t_peak ? nlohmann::ordered_json(*p.t_peak) : nlohmann::ordered_json(nullptr);
  j["peak_value"] = p.peak_value ? nlohmann::ordered_json(*p.peak_value) : nlohmann::ordered_json(nullptr);
  j["within_training"] = p.within_training;
  return j;
}

/// Per-layer verdict: regime and, per analytic mode, agreement with the
/// numeric argmax.
inline nlohmann::ordered_json adjudication_json(const std::string& model_id, int layer,
                                                const PeakAdjudication& a) {
  nlohmann::ordered_json j;
  j["model_id"] = model_id;
  j["layer"] = layer;
  j["regime"] = to_string(a.regime);
  nlohmann::ordered_json agree;
  nlohmann::ordered_json matching = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < 3; ++m) {
    const char* name = to_string(static_cast<PeakMode>(m));
    agree[name] = a.agrees_with_numeric[m];
    if (a.agrees_with_numeric[m]) matching.push_back(name);
  }
  j["agrees_with_numeric"] = std::move(agree);
  j["modes_matching_numeric"] = std::move(matching);
  j["modes_disagree"] = a.modes_disagree();
  return j;
}

// ---------------------------------------------------------------------------
// Heatmaps

/// Dense (layer x model) table; missing cells are NaN.
struct Heatmap {
  std::vector<std::string> models;
  std::vector<int> layers;
  std::vector<std::vector<double>> values;  // [layer][model]
};

struct HeatCell {
  std::string model_id;
  int layer = 1;
  double value = 0.0;
};

inline Heatmap build_heatmap(const std::vector<HeatCell>& cells, const std::vector<std::string>& model_order = {}) {
  Heatmap h;
  std::set<std::string> model_set;
  std::set<int> layer_set;
  for (const auto& c : cells) {
    model_set.insert(c.model_id);
    layer_set.insert(c.layer);
  }
  for (const auto& m : model_order) {
    if (model_set.count(m)) h.models.push_back(m);
  }
  for (const auto& m : model_set) {
    if (std::find(h.models.begin(), h.models.end(), m) == h.models.end()) h.models.push_back(m);
  }
  h.layers.assign(layer_set.begin(), layer_set.end());
  h.values.assign(h.layers.size(), std::vector<double>(h.models.size(), std::numeric_limits<double>::quiet_NaN()));
  for (const auto& c : cells) {
    const auto li = static_cast<std::size_t>(std::lower_bound(h.layers.begin(), h.layers.end(), c.layer) - h.layers.begin());
    const auto mi = static_cast<std::size_t>(std::find(h.models.begin(), h.models.end(), c.model_id) - h.models.begin());
    h.values[li][mi] = c.value;
  }
  return h;
}

/// Header "layer,<model>..."; empty cells for missing values.
inline void write_heatmap_csv(std::ostream& out, const Heatmap& h) {
  std::vector<std::string> header = {"layer"};
  header.insert(header.end(), h.models.begin(), h.models.end());
  write_csv_row(out, header);
  for (std::size_t i = 0; i < h.layers.size(); ++i) {
    std::vector<std::string> row = {std::to_string(h.layers[i])};
    for (double v : h.values[i]) row.push_back(std::isnan(v) ? std::string() : format_double(v));
    write_csv_row(out, row);
  }
}

}  // namespace ma
