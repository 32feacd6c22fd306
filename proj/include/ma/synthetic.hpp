#pragma once

// Synthetic activation statistics with curve parameters that vary smoothly
// with architecture, for exercising the pipeline without real checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ma/activation_stats.hpp"
#include "ma/curve.hpp"
#include "ma/features.hpp"
#include "ma/lambert_w.hpp"
#include "ma/rng.hpp"

namespace ma {

/// 37 checkpoints: 0 and powers of two up to 512, then 26 multiples of
/// 1000 spread evenly up to 143000.
inline std::vector<std::int64_t> synthetic_checkpoints() {
  std::vector<std::int64_t> s = {0};
  for (std::int64_t p = 1; p <= 512; p *= 2) s.push_back(p);
  for (int i = 0; i < 26; ++i) s.push_back(1000 * (1 + static_cast<std::int64_t>(std::llround(142.0 * i / 25.0))));
  return s;
}

struct SyntheticOptions {
  double t_scale = 143000.0;
  double noise = 0.01;  // relative sd of each input's ratio
  std::size_t inputs = 3;
  int seq_len = 64;
};

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

/// Raw-space curve parameters for one layer. Middle layers of wide models
/// get a sharp early peak; shallow or narrow ones a slow logarithmic climb.
inline FitParams synthetic_layer_params(const ArchInfo& a, int layer, std::uint64_t seed,
                                        const SyntheticOptions& opt = {}) {
  Rng rng(derive_seed(seed, fnv1a(a.model_id) ^ static_cast<std::uint64_t>(layer)));
  const double s = static_cast<double>(layer) / a.n_layers;
  const double w = std::log2(static_cast<double>(a.hidden_dim)) / std::log2(5120.0);
  const double bump = 4.0 * s * (1.0 - s);
  FitParams p;
  p.lambda = (0.02 + 1.5 * w * bump) * std::exp(rng.normal(0.0, 0.05));
  p.t0 = 0.05 + 0.3 * s;
  p.A = 0.3 + 0.7 * w;
  const double x_star = std::exp(lambert_w(WBranch::principal, 1.0 / p.lambda));
  const double u = p.lambda > 0.3 ? 0.05 + 0.4 * (1.0 - w) * (1.0 - 0.5 * s) : 3.0;
  p.gamma = std::max((x_star - p.t0) / u, 1.0) * std::exp(rng.normal(0.0, 0.05));
  // Shift K so the curve bottoms out near 0.05 on the unit interval.
  double lo = 1e300;
  for (int i = 0; i <= 200; ++i) lo = std::min(lo, eval_model(p, i / 200.0));
  p.K = 0.05 - lo;
  const double r_scale = 100.0 * (1.0 + 9.0 * w);
  return {p.A * r_scale, p.lambda, p.gamma / opt.t_scale, p.t0, p.K * r_scale};
}

/// Stats records for every layer of a model at the given checkpoints.
inline std::vector<StatsRecord> synthetic_stats(const ArchInfo& a, std::span<const std::int64_t> steps,
                                                std::uint64_t seed, const SyntheticOptions& opt = {}) {
  std::vector<StatsRecord> out;
  Rng rng(derive_seed(seed, 0xA11CE));
  for (int layer = 1; layer <= a.n_layers; ++layer) {
    const FitParams p = synthetic_layer_params(a, layer, seed, opt);
    for (auto step : steps) {
      const double ratio = std::max(eval_model(p, static_cast<double>(step)), 1.0);
      for (std::size_t i = 0; i < opt.inputs; ++i) {
        StatsRecord r;
        r.model_id = a.model_id;
        r.step = step;
        r.layer = layer;
        r.input_id = "seq" + std::to_string(i);
        r.seq_len = static_cast<std::size_t>(opt.seq_len);
        r.hidden_dim = static_cast<std::size_t>(a.hidden_dim);
        r.median_abs = rng.uniform(0.2, 0.4);
        r.max_abs = std::max(r.median_abs, r.median_abs * ratio * (1.0 + rng.normal(0.0, opt.noise)));
        const std::size_t dim = static_cast<std::size_t>(layer * 37) % r.hidden_dim;
        r.top = {{r.max_abs, 1, 0, dim},
                 {std::max(r.median_abs, 0.6 * r.max_abs), 2, 1, dim},
                 {r.median_abs, 3, 2, (dim + 1) % r.hidden_dim}};
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

}  // namespace ma
