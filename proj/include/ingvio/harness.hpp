#pragma once

// Batch drivers: Monte Carlo consistency runs and the observability analysis.

#include "ingvio/metrics.hpp"
#include "ingvio/observability.hpp"
#include "ingvio/simulator.hpp"

#include <atomic>
#include <thread>

namespace ingvio {

struct MonteCarloRun {
  int index = 0;
  std::uint64_t seed = 0;
  double position_rmse = 0.0;
  double yaw_rmse = 0.0;
  double final_error = 0.0;
  double anees = 0.0;
  double per_image_ms = 0.0;  // timing only, never serialized
};

struct MonteCarloResult {
  int dim = 15;
  std::vector<MonteCarloRun> runs;
  std::vector<double> t;
  std::vector<double> mean_nees;   // across runs, per sample time
  double anees = 0.0;              // time average of mean_nees
  double lower = 0.0, upper = 0.0; // 95% chi-square bounds of mean_nees
  double inside_fraction = 0.0;    // share of sample times within [lower, upper]
  double rmse_mean = 0.0, rmse_std = 0.0;
};

/// Independent runs with seeds base_seed + i; results do not depend on `threads`.
inline MonteCarloResult montecarlo(const ScenarioConfig& scenario, const FilterConfig& filter, int runs,
                                   unsigned threads = 0) {
  if (runs < 2) throw ConfigError("montecarlo needs at least 2 runs");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, runs);
  std::vector<MonteCarloRun> summary(runs);
  std::vector<std::vector<std::pair<double, double>>> nees(runs);
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(threads);
  auto worker = [&](unsigned w) {
    try {
      for (int i = next++; i < runs; i = next++) {
        ScenarioConfig sc = scenario;
        sc.seed = scenario.seed + static_cast<std::uint64_t>(i);
        const Dataset d = simulate(sc);
        const RunResult r = run_filter(filter, d);
        const RunMetrics m = compute_metrics(r, *d.truth, d.alignment_truth);
        summary[i] = {i, sc.seed, m.position_rmse, m.yaw_rmse, m.final_error, m.anees, r.timing.per_image_ms()};
        for (const auto& s : m.series) nees[i].emplace_back(s.t, s.nees);
      }
    } catch (...) {
      errors[w] = std::current_exception();
      next = runs;
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  MonteCarloResult out;
  out.runs = std::move(summary);
  std::size_t k = nees.front().size();
  for (const auto& n : nees) k = std::min(k, n.size());
  const auto [lo, hi] = nees_bounds(out.dim, runs);
  out.lower = lo;
  out.upper = hi;
  int inside = 0;
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (const auto& n : nees) s += n[j].second;
    s /= runs;
    out.t.push_back(nees.front()[j].first);
    out.mean_nees.push_back(s);
    out.anees += s;
    if (s >= lo && s <= hi) ++inside;
  }
  if (k > 0) {
    out.anees /= k;
    out.inside_fraction = static_cast<double>(inside) / k;
  }
  for (const auto& r : out.runs) out.rmse_mean += r.position_rmse;
  out.rmse_mean /= runs;
  for (const auto& r : out.runs) out.rmse_std += (r.position_rmse - out.rmse_mean) * (r.position_rmse - out.rmse_mean);
  out.rmse_std = std::sqrt(out.rmse_std / (runs - 1));
  return out;
}

// ---------------------------------------------------------------------------
// Observability

struct EpochDegeneracy {
  double t = 0.0;
  int satellites = 0;
  DegeneracyReport report;
};

struct ObservabilityAnalysis {
  ObservabilityConfig config;
  ObservabilityResult experiment;
  VecX candidate_residuals;  // |O c| / (|O| |c|) per candidate column
  std::vector<EpochDegeneracy> epochs;
};

/// Unit vectors from the receiver to every satellite of `epoch`, in ECEF.
inline std::vector<Vec3> satellite_directions(const GnssEpoch& epoch, const Vec3& receiver_ecef) {
  std::vector<Vec3> out;
  for (const auto& s : epoch.sats) out.push_back(line_of_sight(receiver_ecef, s));
  return out;
}

/// Degeneracy of the scenario's satellite geometry along the true trajectory,
/// plus the observability-matrix experiment for the geometry of the first epoch.
inline ObservabilityAnalysis analyze_observability(const ScenarioConfig& sc, int steps = 20) {
  const Dataset d = simulate(sc);
  const Alignment truth_align = d.alignment_truth->alignment();
  ObservabilityAnalysis a;
  for (const auto& e : d.gnss) {
    const auto& ts = truth_at(*d.truth, e.t);
    NavState x;
    x.imu.rotation = ts.attitude.toRotationMatrix();
    x.imu.position = ts.position;
    x.imu.velocity = ts.velocity;
    EpochDegeneracy ed;
    ed.t = e.t;
    ed.satellites = static_cast<int>(e.sats.size());
    ed.report = classify_degeneracy(satellite_directions(e, truth_align.to_ecef(ts.position)), truth_align.R(), x);
    a.epochs.push_back(std::move(ed));
  }
  a.config.steps = steps;
  a.config.seed = sc.seed;
  a.config.R_w_ecef = truth_align.R();
  a.config.static_at_origin = sc.trajectory.kind == TrajectoryKind::Static;
  if (!d.gnss.empty()) {
    const auto& ts = truth_at(*d.truth, d.gnss.front().t);
    a.config.sat_dirs = satellite_directions(d.gnss.front(), truth_align.to_ecef(ts.position));
  }
  a.experiment = observability_experiment(a.config);
  const MatX& C = a.experiment.candidates;
  a.candidate_residuals = VecX(C.cols());
  for (int j = 0; j < C.cols(); ++j) a.candidate_residuals(j) = relative_null_residual(a.experiment.O, C.col(j));
  return a;
}

}  // namespace ingvio
