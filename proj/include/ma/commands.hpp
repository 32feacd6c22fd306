#pragma once

// Command implementations behind the `ma` executable. Each command reads
// its inputs, validates paths before doing work, computes (fanning out
// across layers or targets), and writes outputs in a fixed order.
// Return values follow the exit-code contract: 0 ok, 1 input error,
// 2 partial failure.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ma/activation_stats.hpp"
#include "ma/error.hpp"
#include "ma/explain.hpp"
#include "ma/features.hpp"
#include "ma/log.hpp"
#include "ma/ml_pipeline.hpp"
#include "ma/model_fit.hpp"
#include "ma/numeric_io.hpp"
#include "ma/peak.hpp"
#include "ma/serialize.hpp"
#include "ma/svg.hpp"
#include "ma/trajectory.hpp"

namespace ma::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kInputError = 1, kPartialFailure = 2 };

struct RunConfig {
  std::string command;
  std::string input;
  std::string out = "ma_out";
  double threshold = kDefaultThreshold;
  int top_k = kDefaultTopK;
  double horizon = kDefaultHorizon;
  std::string mode = "corrected";  // paper | corrected | numeric
  std::uint64_t seed = 0;
  std::string arch_registry;
  bool plots = true;
  int layer_offset = 0;
  std::size_t threads = 0;  // 0 = hardware concurrency
  std::size_t min_points = kMinFitPoints;
  bool rivals = true;
  bool lambert_surface = false;
  double surface_t0 = 0.1;
  // Metadata attached to statistics computed from a raw tensor.
  std::string model_id = "unknown";
  std::int64_t step = 0;
  int layer = 1;
  std::string input_id;
};

// ---------------------------------------------------------------------------
// Plumbing

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

inline std::string layer_key(const std::string& model_id, int layer) {
  return safe_name(model_id) + "_L" + std::to_string(layer);
}

inline void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  f << content;
  if (!f) fail(ErrorKind::invalid_input, "write failed for " + path.string());
}

template <class F>
std::string render(F&& f) {
  std::ostringstream os;
  f(os);
  return os.str();
}

inline void require_input_file(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorKind::invalid_input, "missing " + what + " (--input)");
  require(fs::is_regular_file(path), ErrorKind::not_found, what + " not found: " + path);
}

inline void prepare_out_dir(const RunConfig& cfg) {
  require(!cfg.out.empty(), ErrorKind::invalid_input, "missing output directory (--out)");
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  require(!ec && fs::is_directory(cfg.out), ErrorKind::invalid_input, "cannot create output directory " + cfg.out);
}

/// Runs body(i) for i in [0, n) on a small worker pool. body must not
/// throw; callers capture per-item errors themselves.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline std::vector<StatsRecord> load_stats(const std::string& path) {
  require_input_file(path, "stats file");
  std::ifstream in(path);
  return ingest_stats_lines(in);
}

/// Long-form trajectory CSV: model_id,layer,step,ratio,n_inputs.
inline void write_trajectories_long(std::ostream& out, const std::vector<LayerTrajectory>& trajs) {
  write_csv_row(out, {"model_id", "layer", "step", "ratio", "n_inputs"});
  for (const auto& t : trajs) {
    for (const auto& p : t.points) {
      write_csv_row(out, {t.model_id, std::to_string(t.layer), std::to_string(p.step), format_double(p.ratio),
                          std::to_string(p.n_inputs)});
    }
  }
}

inline std::vector<LayerTrajectory> read_trajectories_long(std::istream& in) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, "empty trajectory file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "model_id,layer,step,ratio,n_inputs", ErrorKind::parse, "unexpected trajectory header");
  std::map<std::pair<std::string, int>, LayerTrajectory> by_key;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 5) throw Error(ErrorKind::parse, "expected 5 columns", lineno);
    try {
      const int layer = static_cast<int>(parse_double(c[1]));
      auto& t = by_key[{c[0], layer}];
      t.model_id = c[0];
      t.layer = layer;
      TrajectoryPoint p;
      p.step = static_cast<std::int64_t>(parse_double(c[2]));
      p.ratio = parse_double(c[3]);
      p.n_inputs = static_cast<std::size_t>(parse_double(c[4]));
      if (!t.points.empty() && p.step <= t.points.back().step) {
        throw Error(ErrorKind::validation, "steps must strictly increase", lineno, "step");
      }
      t.points.push_back(p);
    } catch (const Error& e) {
      if (e.line()) throw;
      throw Error(e.kind(), e.message(), e.line() ? e.line() : std::optional<std::size_t>(lineno), e.field());
    }
  }
  std::vector<LayerTrajectory> out;
  for (auto& [k, t] : by_key) out.push_back(std::move(t));
  return out;
}

/// Trajectories from either a stats JSONL file or a long-form CSV.
inline std::vector<LayerTrajectory> load_trajectories(const std::string& path) {
  require_input_file(path, "input");
  if (fs::path(path).extension() == ".csv") {
    std::ifstream in(path);
    return read_trajectories_long(in);
  }
  const auto records = load_stats(path);
  std::vector<LayerTrajectory> out;
  for (const auto& [model, layer] : trajectory_keys(records)) out.push_back(build_trajectory(records, model, layer));
  return out;
}

/// Fit file path: the input itself, or fits.json inside a directory.
inline std::vector<FitRecord> load_fits(const std::string& input) {
  require(!input.empty(), ErrorKind::invalid_input, "missing fit file (--input)");
  fs::path p(input);
  if (fs::is_directory(p)) p /= "fits.json";
  require(fs::is_regular_file(p), ErrorKind::not_found, "fit file not found: " + p.string());
  std::ifstream in(p);
  return read_fits(in);
}

inline std::vector<ArchInfo> load_registry(const std::string& path) {
  require(!path.empty(), ErrorKind::invalid_input, "missing architecture registry (--arch-registry)");
  require(fs::is_regular_file(path), ErrorKind::not_found, "architecture registry not found: " + path);
  std::ifstream in(path);
  return parse_arch_registry(in);
}

inline std::vector<std::string> model_order(const std::vector<ArchInfo>& registry) {
  std::vector<std::string> m;
  for (const auto& a : registry) m.push_back(a.model_id);
  return m;
}

inline void write_heatmap(const fs::path& dir, const std::string& stem, const std::string& title,
                          const std::string& value_label, const Heatmap& h, bool plots) {
  write_text(dir / (stem + ".csv"), render([&](std::ostream& o) { write_heatmap_csv(o, h); }));
  if (!plots) return;
  std::vector<std::string> rows;
  for (int l : h.layers) rows.push_back(std::to_string(l));
  write_text(dir / (stem + ".svg"), svg::heatmap(title, rows, h.models, h.values, value_label));
}

// ---------------------------------------------------------------------------
// stats

inline bool is_mat1_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::equal(magic, magic + 4, kMat1Magic.begin());
}

inline int cmd_stats(const RunConfig& cfg) {
  require_input_file(cfg.input, "input");
  prepare_out_dir(cfg);
  std::vector<StatsRecord> records;
  if (is_mat1_file(cfg.input)) {
    std::ifstream in(cfg.input, std::ios::binary);
    const ActivationTensor t = read_raw_tensor(in);
    StatsRecord r = compute_layer_stats(t, cfg.top_k);
    r.model_id = cfg.model_id;
    r.step = cfg.step;
    r.layer = cfg.layer;
    r.input_id = cfg.input_id.empty() ? fs::path(cfg.input).stem().string() : cfg.input_id;
    validate(r);
    records.push_back(std::move(r));
    write_text(fs::path(cfg.out) / "stats.jsonl", render([&](std::ostream& o) { write_stats_lines(o, records); }));
  } else {
    records = load_stats(cfg.input);
  }
  require(!records.empty(), ErrorKind::invalid_input, "no statistics records in " + cfg.input);
  write_text(fs::path(cfg.out) / "verdicts.csv", render([&](std::ostream& o) {
               write_csv_row(o, {"model_id", "step", "layer", "input_id", "max_abs", "median_abs", "ratio",
                                 "is_strict_massive", "is_candidate"});
               for (const auto& r : records) {
                 const MaVerdict v = detect_massive(r, cfg.threshold);
                 write_csv_row(o, {r.model_id, std::to_string(r.step), std::to_string(r.layer), r.input_id,
                                   format_double(r.max_abs), format_double(r.median_abs), format_double(v.ratio),
                                   v.is_strict_massive ? "1" : "0", v.is_candidate ? "1" : "0"});
               }
             }));
  log::info("stats: " + std::to_string(records.size()) + " records");
  return kOk;
}

// ---------------------------------------------------------------------------
// trajectory

inline int cmd_trajectory(const RunConfig& cfg) {
  const auto records = load_stats(cfg.input);
  prepare_out_dir(cfg);
  require(!records.empty(), ErrorKind::invalid_input, "no statistics records in " + cfg.input);
  std::vector<LayerTrajectory> trajs;
  for (const auto& [model, layer] : trajectory_keys(records)) trajs.push_back(build_trajectory(records, model, layer));
  const fs::path out(cfg.out);
  write_text(out / "trajectories.csv", render([&](std::ostream& o) { write_trajectories_long(o, trajs); }));
  for (const auto& t : trajs) {
    write_text(out / "trajectories" / (layer_key(t.model_id, t.layer) + ".csv"),
               render([&](std::ostream& o) { write_trajectory_csv(o, t); }));
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// fit

struct LayerFitOutcome {
  std::optional<FitResult> fit;
  std::vector<RivalFit> rivals;
  std::string error;
};

inline int cmd_fit(const RunConfig& cfg) {
  const auto trajs = load_trajectories(cfg.input);
  prepare_out_dir(cfg);
  require(!trajs.empty(), ErrorKind::invalid_input, "no trajectories in " + cfg.input);

  MultistartOptions opt;
  opt.min_points = cfg.min_points;
  std::vector<LayerFitOutcome> outcomes(trajs.size());
  parallel_for(trajs.size(), cfg.threads, [&](std::size_t i) {
    try {
      outcomes[i].fit = multistart_fit(trajs[i], opt);
      if (cfg.rivals) {
        for (auto k : {RivalKind::step_linear, RivalKind::step_quadratic}) {
          outcomes[i].rivals.push_back(fit_rival(trajs[i], k, cfg.min_points));
        }
      }
    } catch (const std::exception& e) {
      outcomes[i].error = e.what();
    }
  });

  const fs::path out(cfg.out);
  std::vector<FitRecord> fits;
  std::vector<HeatCell> r2_cells;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& t = trajs[i];
    const auto& oc = outcomes[i];
    if (!oc.fit) {
      ++failures;
      log::warn("fit failed for " + t.model_id + " layer " + std::to_string(t.layer) + ": " + oc.error);
      continue;
    }
    fits.push_back(make_fit_record(t.model_id, t.layer, *oc.fit));
    if (oc.fit->r_squared) r2_cells.push_back({t.model_id, t.layer, *oc.fit->r_squared});
  }
  write_text(out / "fits.json", render([&](std::ostream& o) { write_fits(o, fits); }));
  write_text(out / "fit_failures.csv", render([&](std::ostream& o) {
               write_csv_row(o, {"model_id", "layer", "error"});
               for (std::size_t i = 0; i < trajs.size(); ++i) {
                 if (!outcomes[i].fit) write_csv_row(o, {trajs[i].model_id, std::to_string(trajs[i].layer), outcomes[i].error});
               }
             }));
  if (cfg.rivals) {
    write_text(out / "aic_comparison.csv", render([&](std::ostream& o) {
                 write_csv_row(o, {"model_id", "layer", "model", "n_params", "sse", "r_squared", "aic", "rank"});
                 for (std::size_t i = 0; i < trajs.size(); ++i) {
                   const auto& oc = outcomes[i];
                   if (!oc.fit) continue;
                   std::vector<ModelScore> scores = {score(*oc.fit)};
                   std::vector<std::optional<double>> r2 = {oc.fit->r_squared};
                   for (const auto& r : oc.rivals) {
                     scores.push_back(score(r));
                     r2.push_back(r.r_squared);
                   }
                   const auto order = compare_aic(scores);
                   for (std::size_t rank = 0; rank < order.size(); ++rank) {
                     const auto& s = scores[order[rank]];
                     const auto& rr = r2[order[rank]];
                     write_csv_row(o, {trajs[i].model_id, std::to_string(trajs[i].layer), s.label,
                                       std::to_string(s.n_params), format_double(s.sse),
                                       rr ? format_double(*rr) : "", format_double(s.aic), std::to_string(rank + 1)});
                   }
                 }
               }));
  }
  write_heatmap(out, "r2_heatmap", "Fit R^2 by layer and model", "R^2", build_heatmap(r2_cells), cfg.plots);

  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& t = trajs[i];
    const auto& oc = outcomes[i];
    if (!oc.fit) continue;
    const std::string key = layer_key(t.model_id, t.layer);
    const auto steps = t.steps();
    write_text(out / "overlays" / (key + ".csv"), render([&](std::ostream& o) {
                 write_csv_row(o, {"step", "observed", "fitted"});
                 for (std::size_t k = 0; k < steps.size(); ++k) {
                   write_csv_row(o, {std::to_string(t.points[k].step), format_double(t.points[k].ratio),
                                     format_double(eval_model(oc.fit->params, steps[k]))});
                 }
               }));
    if (!cfg.plots) continue;
    svg::Series obs{"observed", steps, t.ratios(), true};
    svg::Series curve{"fit", {}, {}, false};
    const double t_max = steps.back();
    for (int k = 0; k <= 200; ++k) {
      const double s = t_max * k / 200.0;
      curve.x.push_back(s);
      curve.y.push_back(eval_model(oc.fit->params, s));
    }
    std::vector<svg::Series> series = {obs, curve};
    for (const auto& r : oc.rivals) {
      svg::Series rs{to_string(r.kind), {}, {}, false};
      for (double s : curve.x) {
        rs.x.push_back(s);
        rs.y.push_back(eval_rival(r.kind, r.a, r.b, r.tau, s));
      }
      series.push_back(std::move(rs));
    }
    const std::string r2 = oc.fit->r_squared ? svg::label_number(*oc.fit->r_squared) : "n/a";
    write_text(out / "overlays" / (key + ".svg"),
               svg::line_chart(t.model_id + " layer " + std::to_string(t.layer) + " (R^2 " + r2 + ")",
                               "training step", "top-1 / median ratio", series));
  }
  log::info("fit: " + std::to_string(fits.size()) + " layers fitted, " + std::to_string(failures) + " failed");
  return failures ? kPartialFailure : kOk;
}

// ---------------------------------------------------------------------------
// peaks

inline PeakMode selected_mode(const std::string& mode) {
  if (mode == "paper") return PeakMode::paper_w0;
  if (mode == "corrected") return PeakMode::corrected;
  if (mode == "numeric") return PeakMode::numeric;
  fail(ErrorKind::invalid_input, "unknown --mode '" + mode + "' (paper|corrected|numeric)");
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  return v;
}

inline std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t n) {
  auto v = linspace(lo_exp, hi_exp, n);
  for (auto& x : v) x = std::pow(10.0, x);
  return v;
}

inline int cmd_peaks(const RunConfig& cfg) {
  const PeakMode mode = selected_mode(cfg.mode);
  require(cfg.horizon > 0.0, ErrorKind::invalid_input, "--horizon must be positive");
  const auto fits = load_fits(cfg.input);
  prepare_out_dir(cfg);
  require(!fits.empty(), ErrorKind::invalid_input, "fit file holds no fits");

  std::vector<std::optional<PeakAdjudication>> adj(fits.size());
  std::vector<std::string> errors(fits.size());
  parallel_for(fits.size(), cfg.threads, [&](std::size_t i) {
    try {
      adj[i] = adjudicate_peaks(fits[i].params, cfg.horizon);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  nlohmann::ordered_json doc;
  doc["horizon"] = cfg.horizon;
  doc["mode"] = to_string(mode);
  auto reports = nlohmann::ordered_json::array();
  auto layers = nlohmann::ordered_json::array();
  std::vector<HeatCell> step_cells, value_cells;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < fits.size(); ++i) {
    const auto& f = fits[i];
    if (!adj[i]) {
      ++failures;
      log::warn("peak analysis failed for " + f.model_id + " layer " + std::to_string(f.layer) + ": " + errors[i]);
      continue;
    }
    for (const auto& r : adj[i]->reports) reports.push_back(to_json(f.model_id, f.layer, r));
    layers.push_back(adjudication_json(f.model_id, f.layer, *adj[i]));
    const auto& sel = adj[i]->report(mode);
    step_cells.push_back({f.model_id, f.layer, sel.exists ? *sel.t_peak : std::numeric_limits<double>::quiet_NaN()});
    value_cells.push_back(
        {f.model_id, f.layer, sel.exists ? *sel.peak_value : std::numeric_limits<double>::quiet_NaN()});
  }
  doc["reports"] = std::move(reports);
  doc["layers"] = std::move(layers);
  const fs::path out(cfg.out);
  write_text(out / "peaks.json", doc.dump(2) + "\n");
  write_text(out / "regimes.csv", render([&](std::ostream& o) {
               write_csv_row(o, {"model_id", "layer", "regime", "t_peak_numeric", "within_training",
                                 "paper_w0_matches", "paper_wm1_matches", "corrected_matches"});
               for (std::size_t i = 0; i < fits.size(); ++i) {
                 if (!adj[i]) continue;
                 const auto& a = *adj[i];
                 const auto& num = a.report(PeakMode::numeric);
                 write_csv_row(o, {fits[i].model_id, std::to_string(fits[i].layer), to_string(a.regime),
                                   num.exists ? format_double(*num.t_peak) : "", num.within_training ? "1" : "0",
                                   a.agrees_with_numeric[0] ? "1" : "0", a.agrees_with_numeric[1] ? "1" : "0",
                                   a.agrees_with_numeric[2] ? "1" : "0"});
               }
             }));
  write_heatmap(out, "peak_step_heatmap", std::string("Peak step (") + to_string(mode) + ")", "step",
                build_heatmap(step_cells), cfg.plots);
  write_heatmap(out, "peak_value_heatmap", std::string("Peak magnitude (") + to_string(mode) + ")", "ratio",
                build_heatmap(value_cells), cfg.plots);

  if (cfg.lambert_surface) {
    const auto gammas = logspace(-5.0, -3.0, 30);
    const auto lambdas = linspace(0.01, 2.0, 40);
    const LambertSurface s = lambert_surface(cfg.surface_t0, gammas, lambdas);
    write_text(out / "lambert_surface.csv", render([&](std::ostream& o) {
                 write_csv_row(o, {"gamma", "lambda", "t_peak_paper_w0", "t_peak_corrected"});
                 for (std::size_t g = 0; g < gammas.size(); ++g) {
                   for (std::size_t l = 0; l < lambdas.size(); ++l) {
                     const double a = s.paper_w0[g][l], b = s.corrected[g][l];
                     write_csv_row(o, {format_double(gammas[g]), format_double(lambdas[l]),
                                       std::isnan(a) ? "" : format_double(a), std::isnan(b) ? "" : format_double(b)});
                   }
                 }
               }));
    if (cfg.plots) {
      std::vector<std::string> rows, cols;
      for (double g : gammas) rows.push_back(svg::label_number(g));
      for (double l : lambdas) cols.push_back(svg::label_number(l));
      for (const auto& [name, grid] : {std::pair{"paper_w0", &s.paper_w0}, std::pair{"corrected", &s.corrected}}) {
        std::vector<std::vector<double>> logt(*grid);
        for (auto& row : logt) {
          for (auto& v : row) v = v > 0.0 ? std::log10(v) : std::numeric_limits<double>::quiet_NaN();
        }
        write_text(out / (std::string("lambert_surface_") + name + ".svg"),
                   svg::heatmap(std::string("Peak step over gamma x lambda (") + name + ", t0 = " +
                                    svg::label_number(cfg.surface_t0) + ")",
                                rows, cols, logt, "log10 step"));
      }
    }
  }
  return failures ? kPartialFailure : kOk;
}

// ---------------------------------------------------------------------------
// features

inline int cmd_features(const RunConfig& cfg) {
  const auto registry = load_registry(cfg.arch_registry);
  std::vector<std::pair<std::string, int>> keys;
  if (!cfg.input.empty()) {
    for (const auto& f : load_fits(cfg.input)) keys.emplace_back(f.model_id, f.layer);
  } else {
    for (const auto& a : registry) {
      for (int l = 1; l <= a.n_layers; ++l) keys.emplace_back(a.model_id, l);
    }
  }
  prepare_out_dir(cfg);
  std::map<std::string, const ArchInfo*> arch;
  for (const auto& a : registry) arch[a.model_id] = &a;
  write_text(fs::path(cfg.out) / "features.csv", render([&](std::ostream& o) {
               std::vector<std::string> header = {"model_id", "layer"};
               header.insert(header.end(), kFeatureNames.begin(), kFeatureNames.end());
               write_csv_row(o, header);
               for (const auto& [model, layer] : keys) {
                 const auto it = arch.find(model);
                 if (it == arch.end()) fail(ErrorKind::not_found, "model '" + model + "' not in architecture registry");
                 const auto fv = build_features({*it->second, layer}, cfg.layer_offset);
                 std::vector<std::string> row = {model, std::to_string(layer)};
                 for (double v : fv) row.push_back(format_double(v));
                 write_csv_row(o, row);
               }
             }));
  return kOk;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOutputs {
  std::optional<TargetEvaluation> eval;
  std::string error;
};

inline void write_explanations(const fs::path& out, const ParamDataset& ds, const TargetEvaluation& ev,
                               const std::vector<ArchInfo>& registry, const RunConfig& cfg) {
  const auto& best = ev.best().model;
  const std::string& target = ev.target_name;
  const std::vector<std::string> names(kFeatureNames.begin(), kFeatureNames.end());
  const Scaler& scaler = ev.scaler;
  const Predictor f_orig = [&](std::span<const double> x) {
    const auto z = scaler.apply(x);
    return best.predict(z);
  };

  std::vector<std::vector<double>> orig_rows;
  for (const auto& fv : ds.features) orig_rows.emplace_back(fv.begin(), fv.end());
  const Matrix X_orig = Matrix::from_rows(orig_rows);
  const std::vector<double> zero_mean(kFeatureCount, 0.0);

  std::vector<ShapExplanation> shap;
  std::vector<std::string> row_ids;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    shap.push_back(explain_instance(best, ev.X.row(i), zero_mean));
    row_ids.push_back(ds.model_ids[i] + ":" + std::to_string(ds.layers[i]));
  }
  write_text(out / ("shap_summary_" + target + ".csv"),
             render([&](std::ostream& o) { write_shap_summary(o, shap, X_orig, row_ids, names); }));
  const std::size_t focus = ev.split.test.front();
  write_text(out / ("shap_waterfall_" + target + ".csv"),
             render([&](std::ostream& o) { write_shap_waterfall(o, shap[focus], names); }));

  std::vector<double> imp_perm = permutation_importance(
      f_orig, X_orig.select_rows(ev.split.test), [&] {
        std::vector<double> y;
        for (auto i : ev.split.test) y.push_back(ev.y[i]);
        return y;
      }(),
      derive_seed(cfg.seed, 300));
  std::vector<double> imp_impurity;
  if (is_tree_kind(best.kind)) imp_impurity = impurity_importance(best);
  write_text(out / ("importance_" + target + ".csv"), render([&](std::ostream& o) {
               write_csv_row(o, {"feature", "impurity", "permutation"});
               for (std::size_t j = 0; j < kFeatureCount; ++j) {
                 write_csv_row(o, {names[j], imp_impurity.empty() ? "" : format_double(imp_impurity[j]),
                                   format_double(imp_perm[j])});
               }
             }));

  // Feature-space PDP: attention density x layer position.
  const std::size_t pdp_feats[2] = {*feature_index("attn_density"), *feature_index("layer_pos")};
  const std::size_t sizes[2] = {20, 20};
  const PdpGrid g1 = pdp(f_orig, X_orig, pdp_feats, sizes);
  write_text(out / ("pdp_" + target + "_attn_density_layer_pos.csv"),
             render([&](std::ostream& o) { write_pdp_csv(o, g1, names); }));
  if (g1.constant_feature) log::warn("pdp: constant feature in attn_density x layer_pos for " + target);

  // Architecture-space PDP: heads x hidden width, features rebuilt per cell.
  std::map<std::string, const ArchInfo*> arch;
  for (const auto& a : registry) arch[a.model_id] = &a;
  std::vector<std::vector<double>> dims;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ArchInfo& a = *arch.at(ds.model_ids[i]);
    dims.push_back({static_cast<double>(ds.layers[i] - cfg.layer_offset), static_cast<double>(a.n_layers),
                    static_cast<double>(a.hidden_dim), static_cast<double>(a.n_heads),
                    static_cast<double>(a.intermediate_dim)});
  }
  const Matrix D = Matrix::from_rows(dims);
  const Predictor f_dims = [&](std::span<const double> v) {
    const auto fv = features_from_dims(v[0], v[1], v[2], v[3], v[4]);
    return f_orig(fv);
  };
  const std::vector<std::string> dim_names = {"layer_index", "n_layers", "hidden_dim", "n_heads", "intermediate_dim"};
  const std::size_t dim_feats[2] = {3, 2};
  const PdpGrid g2 = pdp(f_dims, D, dim_feats, sizes);
  write_text(out / ("pdp_" + target + "_n_heads_hidden_dim.csv"),
             render([&](std::ostream& o) { write_pdp_csv(o, g2, dim_names); }));

  if (!cfg.plots) return;
  std::vector<std::vector<double>> phi;
  for (const auto& e : shap) phi.push_back(e.phi);
  write_text(out / ("shap_summary_" + target + ".svg"),
             svg::shap_summary("SHAP summary: " + target + " (" + to_string(best.kind) + ")", names, phi, orig_rows));
  {
    std::vector<std::size_t> order(kFeatureCount);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto& e = shap[focus];
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(e.phi[a]) > std::abs(e.phi[b]); });
    std::vector<std::string> labels;
    std::vector<double> vals;
    for (auto j : order) {
      labels.push_back(names[j]);
      vals.push_back(e.phi[j]);
    }
    write_text(out / ("shap_waterfall_" + target + ".svg"),
               svg::bar_chart("SHAP waterfall: " + target + " " + row_ids[focus] + " (base " +
                                  svg::label_number(e.base_value) + ", prediction " +
                                  svg::label_number(e.prediction) + ")",
                              labels, vals, "contribution"));
  }
  write_text(out / ("importance_" + target + ".svg"),
             svg::bar_chart("Permutation importance: " + target, names, imp_perm, "mean R^2 drop"));
  for (const auto* g : {&g1, &g2}) {
    const bool is_dims = g == &g2;
    const auto& gn = is_dims ? dim_names : names;
    std::vector<std::string> rows, cols;
    for (double v : g->grid[0]) rows.push_back(svg::label_number(v));
    for (double v : g->grid[1]) cols.push_back(svg::label_number(v));
    std::vector<std::vector<double>> vals(g->grid[0].size(), std::vector<double>(g->grid[1].size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < cols.size(); ++b) vals[a][b] = g->values[a * cols.size() + b];
    }
    const std::string stem = is_dims ? "_n_heads_hidden_dim" : "_attn_density_layer_pos";
    write_text(out / ("pdp_" + target + stem + ".svg"),
               svg::heatmap("PDP " + target + ": " + gn[g->features[0]] + " (rows) x " + gn[g->features[1]] +
                                " (columns)",
                            rows, cols, vals, "prediction"));
  }
}

inline int cmd_predict(const RunConfig& cfg) {
  const auto registry = load_registry(cfg.arch_registry);
  const auto fit_records = load_fits(cfg.input);
  prepare_out_dir(cfg);
  std::vector<FittedLayer> fits;
  for (const auto& f : fit_records) fits.push_back({f.model_id, f.layer, f.params});
  PipelineOptions popt;
  popt.seed = cfg.seed;
  if (fits.size() < popt.min_rows) {
    fail(ErrorKind::invalid_input, "only " + std::to_string(fits.size()) + " fitted layers; at least " +
                                       std::to_string(popt.min_rows) + " are needed to train");
  }

  const std::vector<std::string> targets(kParamNames.begin(), kParamNames.end());
  std::vector<ParamDataset> datasets;
  for (const auto& t : targets) datasets.push_back(assemble_dataset(fits, registry, t, cfg.layer_offset));

  std::vector<PredictOutputs> results(targets.size());
  parallel_for(targets.size(), cfg.threads, [&](std::size_t i) {
    try {
      results[i].eval = evaluate_and_select(datasets[i], kAllRegressorKinds, popt);
    } catch (const std::exception& e) {
      results[i].error = e.what();
    }
  });

  const fs::path out(cfg.out);
  std::vector<TargetEvaluation> evals;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!results[i].eval) {
      ++failures;
      log::warn("prediction failed for target " + targets[i] + ": " + results[i].error);
      continue;
    }
    evals.push_back(*results[i].eval);
  }
  write_text(out / "ml_metrics.csv", render([&](std::ostream& o) { write_metric_table(o, evals); }));
  write_text(out / "ml_details.csv", render([&](std::ostream& o) { write_metric_details(o, evals); }));
  write_text(out / "ml_failures.csv", render([&](std::ostream& o) {
               write_csv_row(o, {"parameter", "error"});
               for (std::size_t i = 0; i < targets.size(); ++i) {
                 if (!results[i].eval) write_csv_row(o, {targets[i], results[i].error});
               }
             }));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!results[i].eval) continue;
    const auto& ev = *results[i].eval;
    for (const auto& r : ev.results) {
      write_text(out / "models" / (ev.target_name + "_" + to_string(r.kind) + ".json"), to_json(r.model).dump(1) + "\n");
    }
    write_explanations(out, datasets[i], ev, registry, cfg);
  }
  return failures ? kPartialFailure : kOk;
}

// ---------------------------------------------------------------------------
// report: trajectory -> fit -> peaks (-> predict when a registry is given)

inline int cmd_report(const RunConfig& cfg) {
  require_input_file(cfg.input, "input");
  prepare_out_dir(cfg);
  int worst = kOk;
  const fs::path out(cfg.out);
  RunConfig c = cfg;
  if (fs::path(cfg.input).extension() != ".csv") {
    c.out = (out / "trajectory").string();
    worst = std::max(worst, cmd_trajectory(c));
  }
  c = cfg;
  c.out = (out / "fit").string();
  worst = std::max(worst, cmd_fit(c));
  c = cfg;
  c.input = (out / "fit" / "fits.json").string();
  c.out = (out / "peaks").string();
  c.lambert_surface = true;
  worst = std::max(worst, cmd_peaks(c));
  if (!cfg.arch_registry.empty()) {
    c = cfg;
    c.input = (out / "fit" / "fits.json").string();
    c.out = (out / "predict").string();
    worst = std::max(worst, cmd_predict(c));
  }
  return worst;
}

/// Dispatches a command; library errors become exit code 1 with a message
/// on stderr.
inline int run(const RunConfig& cfg) {
  static const std::map<std::string, std::function<int(const RunConfig&)>> kCommands = {
      {"stats", cmd_stats},       {"trajectory", cmd_trajectory}, {"fit", cmd_fit},
      {"peaks", cmd_peaks},       {"features", cmd_features},     {"predict", cmd_predict},
      {"report", cmd_report}};
  const auto it = kCommands.find(cfg.command);
  if (it == kCommands.end()) {
    log::error("unknown command '" + cfg.command + "'");
    return kInputError;
  }
  try {
    return it->second(cfg);
  } catch (const std::exception& e) {
    log::error(e.what());
    return kInputError;
  }
}

}  // namespace ma::cli
