#pragma once

// Plain-text configuration: a `config_version = 1` header followed by
// `[section]` blocks of `key = value` lines. '#' starts a comment.
//
// Scenario sections: scenario, trajectory, imu, camera, landmarks, gnss,
// alignment, init. Filter sections: filter, filter.noise, filter.init,
// filter.vision, filter.gnss. One file may hold both groups.

#include "ingvio/estimator.hpp"
#include "ingvio/simulator.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace ingvio {

inline constexpr int kConfigVersion = 1;

struct ConfigEntry {
  std::string value;
  int line = 0;
};

/// Parsed file: section -> key -> values (a key may repeat only where the schema allows it).
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text, const std::string& name = "config") {
    ConfigFile cf;
    cf.name_ = name;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    bool version_seen = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') cf.fail(lineno, "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty()) cf.fail(lineno, "empty section name");
        if (!version_seen) cf.fail(lineno, "config_version must precede all sections");
        cf.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) cf.fail(lineno, "expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) cf.fail(lineno, "empty key");
      if (section.empty()) {
        if (key != "config_version") cf.fail(lineno, "key '" + key + "' outside a section");
        if (value != std::to_string(kConfigVersion)) cf.fail(lineno, "unsupported config_version " + value);
        version_seen = true;
        continue;
      }
      cf.sections_[section][key].push_back({value, lineno});
    }
    if (!version_seen) throw ConfigError(name + ": missing config_version header");
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has_section(const std::string& s) const { return sections_.count(s) != 0; }
  const std::string& name() const { return name_; }

  /// Every section must be in `known`; every key of a section in `keys` must be listed.
  void check_schema(const std::map<std::string, std::set<std::string>>& keys) const {
    for (const auto& [s, kv] : sections_) {
      auto it = keys.find(s);
      if (it == keys.end()) throw ConfigError(name_ + ": unknown section [" + s + "]");
      for (const auto& [k, v] : kv) {
        if (!it->second.count(k)) fail(v.front().line, "unknown key '" + k + "' in [" + s + "]");
        if (v.size() > 1 && k != "dropout") fail(v[1].line, "duplicate key '" + k + "'");
      }
    }
  }

  const ConfigEntry* find(const std::string& s, const std::string& k) const {
    auto si = sections_.find(s);
    if (si == sections_.end()) return nullptr;
    auto ki = si->second.find(k);
    return ki == si->second.end() ? nullptr : &ki->second.front();
  }

  std::vector<ConfigEntry> all(const std::string& s, const std::string& k) const {
    auto si = sections_.find(s);
    if (si == sections_.end()) return {};
    auto ki = si->second.find(k);
    return ki == si->second.end() ? std::vector<ConfigEntry>{} : ki->second;
  }

  void get(const std::string& s, const std::string& k, double& out) const {
    if (const auto* e = find(s, k)) out = to_double(*e);
  }
  void get(const std::string& s, const std::string& k, int& out) const {
    if (const auto* e = find(s, k)) {
      const double v = to_double(*e);
      if (v != std::floor(v) || std::abs(v) > 1e9) fail(e->line, "expected an integer for '" + k + "'");
      out = static_cast<int>(v);
    }
  }
  void get(const std::string& s, const std::string& k, std::uint64_t& out) const {
    if (const auto* e = find(s, k)) {
      std::size_t pos = 0;
      try {
        if (e->value.empty() || e->value.front() == '-') throw std::invalid_argument("sign");
        out = std::stoull(e->value, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != e->value.size()) fail(e->line, "expected a non-negative integer for '" + k + "'");
    }
  }
  void get(const std::string& s, const std::string& k, bool& out) const {
    if (const auto* e = find(s, k)) {
      if (e->value == "true" || e->value == "1") out = true;
      else if (e->value == "false" || e->value == "0") out = false;
      else fail(e->line, "expected true/false for '" + k + "'");
    }
  }
  void get(const std::string& s, const std::string& k, std::string& out) const {
    if (const auto* e = find(s, k)) out = e->value;
  }

  double to_double(const ConfigEntry& e) const {
    const char* b = e.value.c_str();
    char* end = nullptr;
    const double v = std::strtod(b, &end);
    if (e.value.empty() || end == b || *end != '\0' || !std::isfinite(v)) fail(e.line, "expected a number, got '" + e.value + "'");
    return v;
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(name_ + ":" + std::to_string(line) + ": " + msg);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  std::string name_;
  std::map<std::string, std::map<std::string, std::vector<ConfigEntry>>> sections_;
};

// ---------------------------------------------------------------------------
// Schema

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"scenario", {"seed"}},
      {"trajectory", {"kind", "radius", "speed", "height", "climb_rate", "vertical_wave", "duration"}},
      {"imu", {"rate", "gyro_noise", "accel_noise", "gyro_bias_walk", "accel_bias_walk"}},
      {"camera",
       {"rate", "pixel_sigma", "stereo", "baseline", "pitch_deg", "fov_tan", "min_depth", "max_depth", "max_features",
        "feature_lifetime"}},
      {"landmarks", {"count", "margin", "relief"}},
      {"gnss",
       {"rate", "time_offset", "constellations", "dropout", "elevation_floor_deg", "static_satellites",
        "pseudorange_sigma", "range_rate_sigma", "clock_bias_walk", "clock_drift_walk", "initial_clock_bias",
        "initial_clock_drift", "delay_zenith", "delay_slant"}},
      {"alignment", {"latitude_deg", "longitude_deg", "height", "yaw_deg", "east", "north", "up"}},
      {"init", {"sigma_attitude", "sigma_position", "sigma_velocity", "sigma_gyro_bias", "sigma_accel_bias"}},
      {"filter", {"mode", "camera", "estimate_extrinsics", "sync_tolerance", "static_init_duration"}},
      {"filter.noise",
       {"gyro", "accel", "gyro_bias_walk", "accel_bias_walk", "clock_bias_walk", "clock_drift_walk", "trapezoidal"}},
      {"filter.init",
       {"var_attitude", "var_position", "var_velocity", "var_gyro_bias", "var_accel_bias", "var_extrinsics"}},
      {"filter.vision",
       {"sigma", "max_clones", "max_slam", "promote_after", "k_fail", "d_min", "d_max", "r_max_sigma", "min_parallax",
        "chi2_scale"}},
      {"filter.gnss",
       {"sigma_pseudorange", "sigma_range_rate", "elevation_mask_deg", "chi2_scale", "use_doppler",
        "min_alignment_samples", "min_alignment_span"}},
  };
  return s;
}

inline Constellation parse_constellation(const std::string& s) {
  if (s == "GPS") return Constellation::GPS;
  if (s == "BDS") return Constellation::BDS;
  if (s == "GAL") return Constellation::GAL;
  if (s == "GLO") return Constellation::GLO;
  throw std::invalid_argument("unknown constellation '" + s + "'");
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    std::size_t b = cur.find_first_not_of(" \t"), e = cur.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace detail

inline constexpr double kDeg = std::numbers::pi / 180.0;

/// Scenario sections of `cf` applied over the defaults.
inline ScenarioConfig scenario_from(const ConfigFile& cf) {
  cf.check_schema(config_schema());
  ScenarioConfig c;
  cf.get("scenario", "seed", c.seed);

  auto& tr = c.trajectory;
  if (const auto* e = cf.find("trajectory", "kind")) {
    static const std::map<std::string, TrajectoryKind> kinds{{"static", TrajectoryKind::Static},
                                                             {"line", TrajectoryKind::Line},
                                                             {"circle", TrajectoryKind::Circle},
                                                             {"figure8", TrajectoryKind::Figure8},
                                                             {"helix", TrajectoryKind::Helix}};
    auto it = kinds.find(e->value);
    if (it == kinds.end()) cf.fail(e->line, "unknown trajectory kind '" + e->value + "'");
    tr.kind = it->second;
  }
  cf.get("trajectory", "radius", tr.radius);
  cf.get("trajectory", "speed", tr.speed);
  cf.get("trajectory", "height", tr.height);
  cf.get("trajectory", "climb_rate", tr.climb_rate);
  cf.get("trajectory", "vertical_wave", tr.vertical_wave);
  cf.get("trajectory", "duration", tr.duration);

  cf.get("imu", "rate", c.imu_rate);
  cf.get("imu", "gyro_noise", c.gyro_noise);
  cf.get("imu", "accel_noise", c.accel_noise);
  cf.get("imu", "gyro_bias_walk", c.gyro_bias_walk);
  cf.get("imu", "accel_bias_walk", c.accel_bias_walk);

  cf.get("camera", "rate", c.camera_rate);
  cf.get("camera", "pixel_sigma", c.pixel_sigma);
  cf.get("camera", "stereo", c.stereo);
  cf.get("camera", "baseline", c.baseline);
  if (const auto* e = cf.find("camera", "pitch_deg")) c.camera_pitch = cf.to_double(*e) * kDeg;
  cf.get("camera", "fov_tan", c.fov_tan);
  cf.get("camera", "min_depth", c.min_depth);
  cf.get("camera", "max_depth", c.max_depth);
  cf.get("camera", "max_features", c.max_features);
  cf.get("camera", "feature_lifetime", c.feature_lifetime);

  cf.get("landmarks", "count", c.landmark_count);
  cf.get("landmarks", "margin", c.landmark_margin);
  cf.get("landmarks", "relief", c.landmark_relief);

  cf.get("gnss", "rate", c.gnss_rate);
  cf.get("gnss", "time_offset", c.gnss_time_offset);
  // constellations = GPS:8, BDS:6
  if (const auto* e = cf.find("gnss", "constellations")) {
    c.constellations.clear();
    if (!e->value.empty() && e->value != "none") {
      for (const auto& item : detail::split(e->value, ',')) {
        const auto parts = detail::split(item, ':');
        if (parts.size() != 2) cf.fail(e->line, "expected NAME:COUNT in constellations");
        ConstellationSpec cs;
        try {
          cs.id = parse_constellation(parts[0]);
          cs.count = std::stoi(parts[1]);
        } catch (const std::exception& ex) {
          cf.fail(e->line, ex.what());
        }
        for (const auto& o : c.constellations)
          if (o.id == cs.id) cf.fail(e->line, "constellation listed twice");
        c.constellations.push_back(cs);
      }
    }
  }
  // dropout = NAME, t_start, t_end, visible   (repeatable)
  for (const auto& e : cf.all("gnss", "dropout")) {
    const auto parts = detail::split(e.value, ',');
    if (parts.size() != 4) cf.fail(e.line, "expected 'NAME, t_start, t_end, visible' in dropout");
    DropoutWindow w;
    Constellation id;
    try {
      id = parse_constellation(parts[0]);
      w.t_start = std::stod(parts[1]);
      w.t_end = std::stod(parts[2]);
      w.visible = std::stoi(parts[3]);
    } catch (const std::exception& ex) {
      cf.fail(e.line, ex.what());
    }
    if (!(w.t_end > w.t_start) || w.visible < 0) cf.fail(e.line, "invalid dropout window");
    bool found = false;
    for (auto& cs : c.constellations)
      if (cs.id == id) {
        cs.dropouts.push_back(w);
        found = true;
      }
    if (!found) cf.fail(e.line, "dropout for a constellation that is not simulated");
  }
  if (const auto* e = cf.find("gnss", "elevation_floor_deg")) c.elevation_floor = cf.to_double(*e) * kDeg;
  cf.get("gnss", "static_satellites", c.static_satellites);
  cf.get("gnss", "pseudorange_sigma", c.pseudorange_sigma);
  cf.get("gnss", "range_rate_sigma", c.range_rate_sigma);
  cf.get("gnss", "clock_bias_walk", c.clock_bias_walk);
  cf.get("gnss", "clock_drift_walk", c.clock_drift_walk);
  cf.get("gnss", "initial_clock_bias", c.initial_clock_bias);
  cf.get("gnss", "initial_clock_drift", c.initial_clock_drift);
  cf.get("gnss", "delay_zenith", c.delay_zenith);
  cf.get("gnss", "delay_slant", c.delay_slant);

  if (const auto* e = cf.find("alignment", "latitude_deg")) c.origin.latitude = cf.to_double(*e) * kDeg;
  if (const auto* e = cf.find("alignment", "longitude_deg")) c.origin.longitude = cf.to_double(*e) * kDeg;
  cf.get("alignment", "height", c.origin.height);
  if (const auto* e = cf.find("alignment", "yaw_deg")) c.align_yaw = cf.to_double(*e) * kDeg;
  cf.get("alignment", "east", c.align_translation.x());
  cf.get("alignment", "north", c.align_translation.y());
  cf.get("alignment", "up", c.align_translation.z());

  cf.get("init", "sigma_attitude", c.init_sigma_attitude);
  cf.get("init", "sigma_position", c.init_sigma_position);
  cf.get("init", "sigma_velocity", c.init_sigma_velocity);
  cf.get("init", "sigma_gyro_bias", c.init_sigma_gyro_bias);
  cf.get("init", "sigma_accel_bias", c.init_sigma_accel_bias);

  c.validate();
  return c;
}

/// Filter sections of `cf` applied over `base`.
inline FilterConfig filter_from(const ConfigFile& cf, FilterConfig f = {}) {
  cf.check_schema(config_schema());
  if (const auto* e = cf.find("filter", "mode")) {
    if (e->value == "vio") f.mode = Mode::Vio;
    else if (e->value == "gvio") f.mode = Mode::Gvio;
    else cf.fail(e->line, "mode must be vio or gvio");
  }
  if (const auto* e = cf.find("filter", "camera")) {
    if (e->value == "mono") f.camera = CameraMode::Mono;
    else if (e->value == "stereo") f.camera = CameraMode::Stereo;
    else cf.fail(e->line, "camera must be mono or stereo");
  }
  cf.get("filter", "estimate_extrinsics", f.estimate_extrinsics);
  cf.get("filter", "sync_tolerance", f.sync_tolerance);
  cf.get("filter", "static_init_duration", f.static_init_duration);

  cf.get("filter.noise", "gyro", f.noise.gyro);
  cf.get("filter.noise", "accel", f.noise.accel);
  cf.get("filter.noise", "gyro_bias_walk", f.noise.gyro_bias_walk);
  cf.get("filter.noise", "accel_bias_walk", f.noise.accel_bias_walk);
  cf.get("filter.noise", "clock_bias_walk", f.noise.clock_bias_walk);
  cf.get("filter.noise", "clock_drift_walk", f.noise.clock_drift_walk);
  cf.get("filter.noise", "trapezoidal", f.noise.trapezoidal);

  cf.get("filter.init", "var_attitude", f.init.attitude);
  cf.get("filter.init", "var_position", f.init.position);
  cf.get("filter.init", "var_velocity", f.init.velocity);
  cf.get("filter.init", "var_gyro_bias", f.init.gyro_bias);
  cf.get("filter.init", "var_accel_bias", f.init.accel_bias);
  cf.get("filter.init", "var_extrinsics", f.init.extrinsics);

  auto& v = f.vision;
  cf.get("filter.vision", "sigma", v.sigma);
  cf.get("filter.vision", "max_clones", v.max_clones);
  cf.get("filter.vision", "max_slam", v.max_slam);
  cf.get("filter.vision", "promote_after", v.promote_after);
  cf.get("filter.vision", "k_fail", v.k_fail);
  cf.get("filter.vision", "d_min", v.d_min);
  cf.get("filter.vision", "d_max", v.d_max);
  cf.get("filter.vision", "r_max_sigma", v.r_max_sigma);
  cf.get("filter.vision", "min_parallax", v.min_parallax);
  cf.get("filter.vision", "chi2_scale", v.chi2_scale);

  auto& g = f.gnss;
  cf.get("filter.gnss", "sigma_pseudorange", g.sigma_pseudorange);
  cf.get("filter.gnss", "sigma_range_rate", g.sigma_range_rate);
  if (const auto* e = cf.find("filter.gnss", "elevation_mask_deg")) g.elevation_mask = cf.to_double(*e) * kDeg;
  cf.get("filter.gnss", "chi2_scale", g.chi2_scale);
  cf.get("filter.gnss", "use_doppler", g.use_doppler);
  cf.get("filter.gnss", "min_alignment_samples", g.min_alignment_samples);
  cf.get("filter.gnss", "min_alignment_span", g.min_alignment_span);

  f.validate();
  return f;
}

/// Filter settings whose noise model and initial covariance match a scenario;
/// explicit filter sections in `cf` still take precedence.
inline FilterConfig matched_filter(const ScenarioConfig& s, const ConfigFile& cf) {
  FilterConfig f;
  f.noise.gyro = s.gyro_noise;
  f.noise.accel = s.accel_noise;
  f.noise.gyro_bias_walk = s.gyro_bias_walk;
  f.noise.accel_bias_walk = s.accel_bias_walk;
  f.noise.clock_bias_walk = s.clock_bias_walk;
  f.noise.clock_drift_walk = s.clock_drift_walk;
  f.init.attitude = s.init_sigma_attitude * s.init_sigma_attitude;
  f.init.position = s.init_sigma_position * s.init_sigma_position;
  f.init.velocity = s.init_sigma_velocity * s.init_sigma_velocity;
  f.init.gyro_bias = s.init_sigma_gyro_bias * s.init_sigma_gyro_bias;
  f.init.accel_bias = s.init_sigma_accel_bias * s.init_sigma_accel_bias;
  f.vision.sigma = s.pixel_sigma;
  f.gnss.sigma_pseudorange = s.pseudorange_sigma;
  f.gnss.sigma_range_rate = s.range_rate_sigma;
  f.camera = s.stereo ? CameraMode::Stereo : CameraMode::Mono;
  return filter_from(cf, f);
}

}  // namespace ingvio
