// ingvio command-line front end.

#include "ingvio/config.hpp"
#include "ingvio/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace ingvio;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kDataset = 3, kNumerical = 4 };

ConfigFile load_or_default(const std::string& path) {
  return path.empty() ? ConfigFile::parse("config_version = 1\n", "defaults") : ConfigFile::load(path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invariant-filter GNSS-visual-inertial odometry: simulator, estimator and analysis tools"};
  app.require_subcommand(1);

  std::string scenario_path, config_path, dataset_dir, out, run_dir, mode, camera;
  std::uint64_t seed = 0;
  int runs = 50;
  unsigned threads = 0;
  int steps = 20;
  bool seed_given = false;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  sim->add_option("--scenario", scenario_path, "Scenario config file")->required();
  sim->add_option("--out", out, "Output dataset directory")->required();

  auto* run = app.add_subcommand("run", "Run the estimator on a dataset");
  run->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  run->add_option("--config", config_path, "Filter config file (defaults when omitted)");
  run->add_option("--mode", mode, "vio or gvio (overrides the config)")->check(CLI::IsMember({"vio", "gvio"}));
  run->add_option("--camera", camera, "mono or stereo (overrides the config)")->check(CLI::IsMember({"mono", "stereo"}));
  run->add_option("--out", out, "Output directory")->required();

  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo consistency batch");
  mc->add_option("--scenario", scenario_path, "Scenario config file (may hold filter sections)")->required();
  mc->add_option("--runs", runs, "Number of runs")->check(CLI::Range(2, 100000));
  mc->add_option("--threads", threads, "Worker threads (0: all cores); results do not depend on it");
  mc->add_option("--out", out, "Output directory")->required();

  auto* obs = app.add_subcommand("analyze-observability", "Degeneracy report and observability matrix analysis");
  obs->add_option("--scenario", scenario_path, "Scenario config file")->required();
  obs->add_option("--steps", steps, "Propagation steps in the observability matrix")->check(CLI::Range(1, 1000));
  obs->add_option("--out", out, "Output directory")->required();

  auto* plot = app.add_subcommand("plot", "SVG plot of a run directory");
  plot->add_option("--run", run_dir, "Run output directory")->required();
  plot->add_option("--out", out, "Output SVG file")->required();

  for (auto* sc : {sim, run, mc, obs, plot})
    sc->add_option("--seed", seed, "Random seed (overrides the scenario seed; run and plot are deterministic)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  for (auto* sc : {sim, run, mc, obs, plot})
    if (sc->parsed() && sc->count("--seed")) seed_given = true;

  try {
    if (sim->parsed()) {
      ScenarioConfig sc = scenario_from(ConfigFile::load(scenario_path));
      if (seed_given) sc.seed = seed;
      ensure_dir(out);
      write_dataset(simulate(sc), out);
      std::printf("dataset written to %s\n", out.c_str());
    } else if (run->parsed()) {
      FilterConfig fc = filter_from(load_or_default(config_path));
      if (mode == "vio") fc.mode = Mode::Vio;
      if (mode == "gvio") fc.mode = Mode::Gvio;
      if (camera == "mono") fc.camera = CameraMode::Mono;
      if (camera == "stereo") fc.camera = CameraMode::Stereo;
      const Dataset d = read_dataset(dataset_dir);
      const RunResult r = run_filter(fc, d);
      ensure_dir(out);
      write_estimates(r, fs::path(out) / "estimate.csv");
      write_events(r.events, fs::path(out) / "events.csv");
      std::optional<RunMetrics> m;
      if (d.truth) {
        m = compute_metrics(r, *d.truth, d.alignment_truth);
        write_errors(*m, fs::path(out) / "errors.csv");
      }
      write_summary(run_summary(r, m ? &*m : nullptr), fs::path(out) / "summary.csv");
      std::printf("mode=%s images=%ld per-image=%.3f ms", to_string(fc.mode), r.timing.images,
                  r.timing.per_image_ms());
      if (m) std::printf(" rmse=%.3f m final=%.3f m anees=%.2f", m->position_rmse, m->final_error, m->anees);
      std::printf("\n");
    } else if (mc->parsed()) {
      const ConfigFile cf = ConfigFile::load(scenario_path);
      ScenarioConfig sc = scenario_from(cf);
      if (seed_given) sc.seed = seed;
      const FilterConfig fc = matched_filter(sc, cf);
      const MonteCarloResult res = montecarlo(sc, fc, runs, threads);
      write_montecarlo(res, out);
      std::printf("runs=%zu anees=%.3f (dim %d, 95%% bounds of the mean [%.3f, %.3f]) rmse=%.3f+-%.3f m\n",
                  res.runs.size(), res.anees, res.dim, res.lower, res.upper, res.rmse_mean, res.rmse_std);
    } else if (obs->parsed()) {
      ScenarioConfig sc = scenario_from(ConfigFile::load(scenario_path));
      if (seed_given) sc.seed = seed;
      const ObservabilityAnalysis a = analyze_observability(sc, steps);
      write_observability(a, out);
      std::printf("satellites=%zu null_dim=%d yaw_unobservable=%d residual=%.3e candidate_ratio=%.3e\n",
                  a.config.sat_dirs.size(), a.experiment.report.null_dim, a.experiment.report.yaw_unobservable ? 1 : 0,
                  a.experiment.residual, a.experiment.candidate_ratio);
    } else if (plot->parsed()) {
      plot_run(run_dir, out);
      std::printf("plot written to %s\n", out.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DatasetError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kDataset;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOk;
}
