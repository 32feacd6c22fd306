// ma: massive-activation trajectory analysis.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ma/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Massive-activation trajectory fitting, peak analysis and architecture prediction"};
  app.require_subcommand(1, 1);
  ma::cli::RunConfig cfg;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--input", cfg.input, "Input file (stats JSONL, MAT1 tensor, trajectory CSV or fits.json)");
    sub->add_option("--out", cfg.out, "Output directory")->capture_default_str();
    sub->add_option("--threshold", cfg.threshold, "Candidate ratio threshold")->capture_default_str();
    sub->add_option("--top-k", cfg.top_k, "Entries kept per record")->capture_default_str();
    sub->add_option("--horizon", cfg.horizon, "Training horizon in steps")->capture_default_str();
    sub->add_option("--mode", cfg.mode, "Peak mode reported in heatmaps")
        ->check(CLI::IsMember({"paper", "corrected", "numeric"}))
        ->capture_default_str();
    sub->add_option("--seed", cfg.seed, "Seed for splits and ensembles")->capture_default_str();
    sub->add_option("--arch-registry", cfg.arch_registry, "Architecture registry JSON");
    sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
    sub->add_option("--layer-offset", cfg.layer_offset, "Added to layer index before feature construction")
        ->capture_default_str();
    sub->add_flag("--no-plots", [&](std::int64_t) { cfg.plots = false; }, "Skip SVG output");
  };

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"stats", "Per-record verdicts from stats JSONL, or statistics from a MAT1 tensor"},
      {"trajectory", "Per-layer ratio trajectories from stats JSONL"},
      {"fit", "Fit the log-modulated decay curve and step rivals per layer"},
      {"peaks", "Peak location per layer in every mode, with regime labels"},
      {"features", "Architecture feature table"},
      {"predict", "Train regressors from architecture features to fitted parameters"},
      {"report", "trajectory, fit, peaks and (with a registry) predict in one run"},
  };
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    common(sub);
    sub->callback([&cfg, name = s.name] { cfg.command = name; });
    const std::string n = s.name;
    if (n == "stats") {
      sub->add_option("--model-id", cfg.model_id, "model_id for tensor input");
      sub->add_option("--step", cfg.step, "Checkpoint step for tensor input");
      sub->add_option("--layer", cfg.layer, "Layer for tensor input");
      sub->add_option("--input-id", cfg.input_id, "input_id for tensor input (default: file stem)");
    }
    if (n == "fit" || n == "report") {
      sub->add_option("--min-points", cfg.min_points, "Minimum checkpoints per fit")->capture_default_str();
      sub->add_flag("--no-rivals", [&](std::int64_t) { cfg.rivals = false; }, "Skip step-rival fits");
    }
    if (n == "peaks") {
      sub->add_flag("--lambert-surface", cfg.lambert_surface, "Also emit the peak-step surface over gamma x lambda");
      sub->add_option("--surface-t0", cfg.surface_t0, "t0 for the surface")->capture_default_str();
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ma::cli::kInputError;
  }
  return ma::cli::run(cfg);
}
