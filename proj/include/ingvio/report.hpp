#pragma once

// Output files of the CLI: run CSVs, Monte Carlo and observability tables,
// and an SVG summary plot of a run.

#include "ingvio/harness.hpp"

namespace ingvio {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run outputs

inline void write_estimates(const RunResult& r, const fs::path& file) {
  csv::Writer w(file, "ingvio estimate v1",
                "t_s,frame_id,px,py,pz,qw,qx,qy,qz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz,clk_gps_m,clk_bds_m,clk_gal_m,"
                "clk_glo_m,clkdrift_mps,clones,landmarks,aligned,var_thx,var_thy,var_thz,var_px,var_py,var_pz,var_vx,"
                "var_vy,var_vz,var_bgx,var_bgy,var_bgz,var_bax,var_bay,var_baz,var_yaw_dir");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : r.estimates) {
    const Eigen::Quaterniond q(s.imu.rotation);
    std::string row = csv::join({s.t, double(s.frame), s.imu.position.x(), s.imu.position.y(), s.imu.position.z(),
                                 q.w(), q.x(), q.y(), q.z(), s.imu.velocity.x(), s.imu.velocity.y(),
                                 s.imu.velocity.z(), s.gyro_bias.x(), s.gyro_bias.y(), s.gyro_bias.z(),
                                 s.accel_bias.x(), s.accel_bias.y(), s.accel_bias.z()});
    for (int c = 0; c < kNumConstellations; ++c) {
      auto it = s.clock_biases.find(static_cast<Constellation>(c));
      row += ',' + csv::fmt(it == s.clock_biases.end() ? nan : it->second);
    }
    row += ',' + csv::fmt(s.clock_drift ? *s.clock_drift : nan);
    row += ',' + csv::join({double(s.clones), double(s.landmarks), s.aligned ? 1.0 : 0.0});
    for (int i = 0; i < 15; ++i) row += ',' + csv::fmt(s.P_imu(i, i));
    row += ',' + csv::fmt(s.yaw_direction_variance);
    w.row(row);
  }
}

inline void write_errors(const RunMetrics& m, const fs::path& file) {
  csv::Writer w(file, "ingvio errors v1",
                "t_s,dpx,dpy,dpz,dp_norm,dthx,dthy,dthz,dvx,dvy,dvz,nees,sig_px,sig_py,sig_pz,sig_yaw");
  for (const auto& s : m.series) {
    w.row(csv::join({s.t, s.position_error.x(), s.position_error.y(), s.position_error.z(), s.position_error.norm(),
                     s.attitude_error.x(), s.attitude_error.y(), s.attitude_error.z(), s.velocity_error.x(),
                     s.velocity_error.y(), s.velocity_error.z(), s.nees, s.position_sigma.x(), s.position_sigma.y(),
                     s.position_sigma.z(), s.yaw_sigma}));
  }
}

inline void write_events(const EventLog& log, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DatasetError("cannot open " + file.string() + " for writing");
  out << "# ingvio events v1\n# t_s,kind,detail\n";
  for (const auto& e : log.events()) {
    std::string detail = e.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    out << csv::fmt(e.t) << ',' << e.kind << ',' << detail << '\n';
  }
}

/// key,value table.
inline void write_summary(const std::vector<std::pair<std::string, double>>& kv, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DatasetError("cannot open " + file.string() + " for writing");
  out << "# ingvio summary v1\n# key,value\n";
  for (const auto& [k, v] : kv) out << k << ',' << csv::fmt(v) << '\n';
}

inline std::vector<std::pair<std::string, double>> run_summary(const RunResult& r, const RunMetrics* m) {
  std::vector<std::pair<std::string, double>> kv{
      {"images", double(r.timing.images)},
      {"max_clones", double(r.max_clones)},
      {"aligned", r.alignment ? 1.0 : 0.0},
      {"alignment_time_s", r.alignment ? r.alignment_time : std::numeric_limits<double>::quiet_NaN()},
      {"alignment_yaw_rad", r.alignment ? r.alignment->yaw : std::numeric_limits<double>::quiet_NaN()}};
  if (m) {
    kv.emplace_back("position_rmse_m", m->position_rmse);
    kv.emplace_back("yaw_rmse_rad", m->yaw_rmse);
    kv.emplace_back("final_error_m", m->final_error);
    kv.emplace_back("anees", m->anees);
  }
  return kv;
}

// ---------------------------------------------------------------------------
// Monte Carlo and observability outputs

inline void write_montecarlo(const MonteCarloResult& mc, const fs::path& dir) {
  fs::create_directories(dir);
  {
    csv::Writer w(dir / "runs.csv", "ingvio montecarlo runs v1", "run,seed,position_rmse_m,yaw_rmse_rad,final_error_m,anees");
    for (const auto& r : mc.runs)
      w.row(std::to_string(r.index) + ',' + std::to_string(r.seed) + ',' +
            csv::join({r.position_rmse, r.yaw_rmse, r.final_error, r.anees}));
  }
  {
    csv::Writer w(dir / "nees.csv", "ingvio montecarlo nees v1", "t_s,mean_nees,lower,upper");
    for (std::size_t i = 0; i < mc.t.size(); ++i) w.row(csv::join({mc.t[i], mc.mean_nees[i], mc.lower, mc.upper}));
  }
  write_summary({{"runs", double(mc.runs.size())},
                 {"dim", double(mc.dim)},
                 {"anees", mc.anees},
                 {"nees_lower_95", mc.lower},
                 {"nees_upper_95", mc.upper},
                 {"inside_fraction", mc.inside_fraction},
                 {"rmse_mean_m", mc.rmse_mean},
                 {"rmse_std_m", mc.rmse_std}},
                dir / "summary.csv");
}

inline void write_observability(const ObservabilityAnalysis& a, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& ex = a.experiment;
  {
    std::ofstream out(dir / "observability.csv");
    if (!out) throw DatasetError("cannot open observability.csv for writing");
    out << "# ingvio observability v1\n# quantity,index,value\n";
    auto put = [&](const std::string& q, long i, double v) { out << q << ',' << i << ',' << csv::fmt(v) << '\n'; };
    put("satellites", 0, double(a.config.sat_dirs.size()));
    put("null_dim", 0, ex.report.null_dim);
    put("yaw_unobservable", 0, ex.report.yaw_unobservable ? 1.0 : 0.0);
    put("residual_gp", 0, ex.report.residual_gp);
    put("residual_gv", 0, ex.report.residual_gv);
    for (std::size_t i = 0; i < ex.report.null_basis.size(); ++i)
      for (int k = 0; k < 3; ++k) put("null_basis_" + std::to_string(i), k, ex.report.null_basis[i](k));
    put("unobservable_columns", 0, double(ex.N.cols()));
    put("null_residual", 0, ex.residual);
    put("candidate_ratio", 0, ex.candidate_ratio);
    static const char* names[] = {"candidate_tx", "candidate_ty", "candidate_tz", "candidate_yaw"};
    for (int j = 0; j < a.candidate_residuals.size() && j < 4; ++j) put(names[j], 0, a.candidate_residuals(j));
    for (int i = 0; i < ex.O_singular_values.size(); ++i) put("singular_value", i, ex.O_singular_values(i));
  }
  csv::Writer w(dir / "degeneracy.csv", "ingvio degeneracy v1",
                "t_s,satellites,null_dim,yaw_unobservable,residual_gp,residual_gv");
  for (const auto& e : a.epochs)
    w.row(csv::join({e.t, double(e.satellites), double(e.report.null_dim), e.report.yaw_unobservable ? 1.0 : 0.0,
                     e.report.residual_gp, e.report.residual_gv}));
}

// ---------------------------------------------------------------------------
// SVG plot

namespace svg {

struct Series {
  std::vector<double> x, y;
  std::string color;
  bool dashed = false;
};

struct Panel {
  double left, top, width, height;
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  bool equal_axes = false;
};

inline void render(std::ostream& out, const Panel& p) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  const double pad = 40;
  const double w = p.width - 2 * pad, h = p.height - 2 * pad;
  double sx = w / (x1 - x0), sy = h / (y1 - y0);
  if (p.equal_axes) sx = sy = std::min(sx, sy);
  auto X = [&](double v) { return p.left + pad + (v - x0) * sx; };
  auto Y = [&](double v) { return p.top + p.height - pad - (v - y0) * sy; };
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"#999\"/>\n",
                p.left + pad, p.top + pad, w, h);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"14\" text-anchor=\"middle\">%s</text>\n",
                p.left + p.width / 2, p.top + 20, p.title.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\">%s</text>\n",
                p.left + p.width / 2, p.top + p.height - 8, p.xlabel.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 %.1f "
                "%.1f)\">%s</text>\n",
                p.left + 12, p.top + p.height / 2, p.left + 12, p.top + p.height / 2, p.ylabel.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"9\">%.3g</text><text x=\"%.1f\" y=\"%.1f\" "
                "font-size=\"9\">%.3g</text>\n",
                p.left + 2, Y(y0), y0, p.left + 2, Y(y1) + 8, y1);
  out << buf;
  for (const auto& s : p.series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.2\""
        << (s.dashed ? " stroke-dasharray=\"4 3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(s.x[i]), Y(s.y[i]));
      out << buf;
    }
    out << "\"/>\n";
  }
}

}  // namespace svg

/// Trajectory (top view) and error curves of a run directory.
inline void plot_run(const fs::path& run_dir, const fs::path& out_file) {
  const auto est = csv::read_rows(run_dir / "estimate.csv", 42);
  if (est.empty()) throw DatasetError("estimate.csv: no rows");
  svg::Series e_xy{{}, {}, "#1f77b4"}, t_xy{{}, {}, "#444", true};
  for (const auto& [line, v] : est) {
    e_xy.x.push_back(v[2]);
    e_xy.y.push_back(v[3]);
  }
  std::vector<svg::Panel> panels;
  const bool have_err = fs::exists(run_dir / "errors.csv");
  svg::Series en{{}, {}, "#d62728"}, es{{}, {}, "#777", true}, yaw{{}, {}, "#2ca02c"}, ys{{}, {}, "#777", true},
      ysn{{}, {}, "#777", true};
  if (have_err) {
    const auto err = csv::read_rows(run_dir / "errors.csv", 16);
    std::size_t i = 0;
    for (const auto& [line, v] : err) {
      // truth = estimate - error, matched by time
      while (i < est.size() && est[i].second[0] < v[0] - 1e-9) ++i;
      if (i < est.size() && std::abs(est[i].second[0] - v[0]) < 1e-9) {
        t_xy.x.push_back(est[i].second[2] - v[1]);
        t_xy.y.push_back(est[i].second[3] - v[2]);
      }
      en.x.push_back(v[0]);
      en.y.push_back(v[4]);
      es.x.push_back(v[0]);
      es.y.push_back(3.0 * std::sqrt(v[12] * v[12] + v[13] * v[13] + v[14] * v[14]));
      yaw.x.push_back(v[0]);
      yaw.y.push_back(v[7]);
      ys.x.push_back(v[0]);
      ys.y.push_back(3.0 * v[15]);
      ysn.x.push_back(v[0]);
      ysn.y.push_back(-3.0 * v[15]);
    }
  }
  svg::Panel traj{0, 0, 480, 480, "Trajectory (top view)", "x [m]", "y [m]", {}, true};
  if (!t_xy.x.empty()) traj.series.push_back(t_xy);
  traj.series.push_back(e_xy);
  panels.push_back(traj);
  if (have_err) {
    panels.push_back({480, 0, 520, 240, "Position error and 3-sigma", "t [s]", "m", {es, en}});
    panels.push_back({480, 240, 520, 240, "Yaw error and 3-sigma", "t [s]", "rad", {ys, ysn, yaw}});
  }
  std::ofstream out(out_file);
  if (!out) throw DatasetError("cannot open " + out_file.string() + " for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1000\" height=\"480\" font-family=\"sans-serif\">\n";
  out << "<rect width=\"1000\" height=\"480\" fill=\"white\"/>\n";
  for (const auto& p : panels) svg::render(out, p);
  out << "</svg>\n";
}

}  // namespace ingvio
