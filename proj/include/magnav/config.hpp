#pragma once

// Plain-text experiment configuration.
//
//   # comment
//   schema_version = 1
//   seed = 7
//   map.peak_x = 6.0
//   sweep.w_h = 0, 0.5, 1, 5, 10
//
// One `key = value` per line, dotted section keys, '#' starts a comment.
// Unknown or repeated keys are errors. Every key is optional except
// schema_version; omitted keys keep the defaults of EpisodeConfig.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "magnav/error.hpp"
#include "magnav/magmap.hpp"
#include "magnav/models.hpp"
#include "magnav/planner.hpp"
#include "magnav/simloop.hpp"

namespace magnav {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

struct OutputOptions {
  bool trace = true;
  bool metrics = true;
  bool trajectory = false;  // also write the export CSVs next to each trace
  bool detcov = false;
  bool entropy = false;
};

struct RunConfig {
  EpisodeConfig episode;
  std::vector<double> sweep_w_h{0.0, 0.5, 1.0, 5.0, 10.0};
  std::size_t sweep_seeds = 1;
  unsigned sweep_threads = 0;  // 0 = hardware concurrency
  OutputOptions output;
  std::uint64_t hash = 0;  // of the config text, for provenance headers
};

// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

// "# magnav 0.1.0 config_hash=... seed=..."
inline std::string provenance_line(const RunConfig& cfg) {
  return "# magnav " + std::string(kVersion) + " config_hash=" + hex64(cfg.hash) +
         " seed=" + std::to_string(cfg.episode.seed);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline double config_double(const std::string& key, std::string_view v) {
  double d = 0.0;
  if (!parse_double(v, d) || !std::isfinite(d))
    throw ConfigError(key + ": expected a number, got '" + std::string(v) + "'");
  return d;
}

inline std::uint64_t config_u64(const std::string& key, std::string_view v) {
  std::uint64_t u = 0;
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, u);
  if (v.empty() || r.ec != std::errc() || r.ptr != end)
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return u;
}

inline bool config_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<double> config_list(const std::string& key, std::string_view v) {
  std::vector<double> out;
  for (auto item : split_csv(v)) out.push_back(config_double(key, trim(item)));
  return out;
}

}  // namespace detail

class ConfigParser {
 public:
  using Setter = std::function<void(RunConfig&, const std::string&, std::string_view)>;

  ConfigParser() {
    using namespace detail;

    add("schema_version", [](RunConfig&, const std::string& k, std::string_view v) {
      if (config_u64(k, v) != kSchemaVersion)
        throw ConfigError("schema_version: unsupported version '" + std::string(v) + "'");
    });
    add("seed", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.episode.seed = config_u64(k, v);
    });

    add("map.file", [](RunConfig& c, const std::string& k, std::string_view v) {
      if (v.empty()) throw ConfigError(k + ": empty path");
      c.episode.map.file = std::string(v);
    });
    add_double("map.origin_x", [](RunConfig& c) -> double& { return c.episode.map.geometry.origin.x; });
    add_double("map.origin_y", [](RunConfig& c) -> double& { return c.episode.map.geometry.origin.y; });
    add_double("map.cell_size", [](RunConfig& c) -> double& { return c.episode.map.geometry.cell_size; });
    add_size("map.width", [](RunConfig& c) -> std::size_t& { return c.episode.map.geometry.width; });
    add_size("map.height", [](RunConfig& c) -> std::size_t& { return c.episode.map.geometry.height; });
    add_double("map.base_field", [](RunConfig& c) -> double& { return c.episode.map.synthetic.base_field; });
    add_double("map.peak_x", [](RunConfig& c) -> double& { return c.episode.map.synthetic.peak_center.x; });
    add_double("map.peak_y", [](RunConfig& c) -> double& { return c.episode.map.synthetic.peak_center.y; });
    add_double("map.peak_amplitude",
               [](RunConfig& c) -> double& { return c.episode.map.synthetic.peak_amplitude; });
    add("map.peak_sigma", [](RunConfig& c, const std::string& k, std::string_view v) {
      const double s = config_double(k, v);
      c.episode.map.synthetic.peak_sigma = {s, s};
    });
    add_double("map.peak_sigma_x", [](RunConfig& c) -> double& { return c.episode.map.synthetic.peak_sigma.x; });
    add_double("map.peak_sigma_y", [](RunConfig& c) -> double& { return c.episode.map.synthetic.peak_sigma.y; });

    add_double("start.x", [](RunConfig& c) -> double& { return c.episode.start.x; });
    add_double("start.y", [](RunConfig& c) -> double& { return c.episode.start.y; });
    add("start.theta_deg", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.episode.start.theta = wrap_angle(deg2rad(config_double(k, v)));
    });
    add_double("goal.x", [](RunConfig& c) -> double& { return c.episode.goal.position.x; });
    add_double("goal.y", [](RunConfig& c) -> double& { return c.episode.goal.position.y; });
    add_double("goal.arrival_radius", [](RunConfig& c) -> double& { return c.episode.goal.arrival_radius; });

    add_double("w_h", [](RunConfig& c) -> double& { return c.episode.weights.w_h; });
    add_double("w_d", [](RunConfig& c) -> double& { return c.episode.weights.w_d; });
    add_double("alpha", [](RunConfig& c) -> double& { return c.episode.weights.alpha; });
    add("planner.distance_mode", [](RunConfig& c, const std::string& k, std::string_view v) {
      if (v == "mean_pose")
        c.episode.distance_mode = DistanceMode::kMeanPose;
      else if (v == "particle_expectation")
        c.episode.distance_mode = DistanceMode::kParticleExpectation;
      else
        throw ConfigError(k + ": expected mean_pose or particle_expectation");
    });

    add("actions.v", [](RunConfig& c, const std::string& k, std::string_view v) {
      const double speed = config_double(k, v);
      for (auto& a : c.episode.actions.actions) a.v = speed;
    });
    add("actions.omegas_deg", [](RunConfig& c, const std::string& k, std::string_view v) {
      const auto rates = config_list(k, v);
      if (rates.empty()) throw ConfigError(k + ": empty list");
      const double speed = c.episode.actions.actions.empty() ? 0.2 : c.episode.actions.actions.front().v;
      c.episode.actions.actions.clear();
      for (double w : rates) c.episode.actions.actions.push_back({speed, deg2rad(w)});
    });

    add_size("eer.m_count", [](RunConfig& c) -> std::size_t& { return c.episode.eer.m_count; });
    add_size("eer.horizon_steps", [](RunConfig& c) -> std::size_t& { return c.episode.eer.horizon_steps; });
    add("eer.cumulative", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.episode.eer.cumulative = config_bool(k, v);
    });

    add_double("noise.motion_sigma_x", [](RunConfig& c) -> double& { return c.episode.noise.motion.sigma_x; });
    add_double("noise.motion_sigma_y", [](RunConfig& c) -> double& { return c.episode.noise.motion.sigma_y; });
    add("noise.motion_sigma_theta_deg", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.episode.noise.motion.sigma_theta = deg2rad(config_double(k, v));
    });
    add_double("noise.sensor_sigma", [](RunConfig& c) -> double& { return c.episode.noise.sensor.sigma_z; });

    add_double("prior.sigma_x", [](RunConfig& c) -> double& { return c.episode.prior_sigma(0); });
    add_double("prior.sigma_y", [](RunConfig& c) -> double& { return c.episode.prior_sigma(1); });
    add("prior.sigma_theta_deg", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.episode.prior_sigma(2) = deg2rad(config_double(k, v));
    });

    add_size("filter.n_particles", [](RunConfig& c) -> std::size_t& { return c.episode.n_particles; });
    add_double("filter.resample_threshold", [](RunConfig& c) -> double& { return c.episode.resample_fraction; });

    add_double("sim.dt", [](RunConfig& c) -> double& { return c.episode.dt; });
    add_size("sim.max_steps", [](RunConfig& c) -> std::size_t& { return c.episode.max_steps; });

    add("sweep.w_h", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.sweep_w_h = config_list(k, v);
      if (c.sweep_w_h.empty()) throw ConfigError(k + ": empty list");
    });
    add_size("sweep.seeds", [](RunConfig& c) -> std::size_t& { return c.sweep_seeds; });
    add("sweep.threads", [](RunConfig& c, const std::string& k, std::string_view v) {
      c.sweep_threads = static_cast<unsigned>(config_u64(k, v));
    });

    add_bool("output.trace", [](RunConfig& c) -> bool& { return c.output.trace; });
    add_bool("output.metrics", [](RunConfig& c) -> bool& { return c.output.metrics; });
    add_bool("output.trajectory", [](RunConfig& c) -> bool& { return c.output.trajectory; });
    add_bool("output.detcov", [](RunConfig& c) -> bool& { return c.output.detcov; });
    add_bool("output.entropy", [](RunConfig& c) -> bool& { return c.output.entropy; });
  }

  bool known(const std::string& key) const { return setters_.count(key) != 0; }

  std::vector<std::string> keys() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters_) out.push_back(k);
    return out;
  }

  void apply(RunConfig& cfg, const std::string& key, std::string_view value) const {
    const auto it = setters_.find(key);
    if (it == setters_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, value);
  }

  // Parses a whole config text. schema_version is mandatory.
  RunConfig parse(const std::string& text) const {
    RunConfig cfg;
    cfg.hash = fnv1a(text);
    std::map<std::string, std::size_t> seen;
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
      ++line_no;
      std::string_view line = raw;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string_view value = detail::trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
      if (!known(key))
        throw ConfigError("line " + std::to_string(line_no) + ": unknown config key '" + key + "'");
      if (const auto [it, fresh] = seen.emplace(key, line_no); !fresh)
        throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key +
                          "' (first set on line " + std::to_string(it->second) + ")");
      try {
        apply(cfg, key, value);
      } catch (const ConfigError& e) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (!seen.count("schema_version")) throw ConfigError("missing schema_version");
    return cfg;
  }

 private:
  void add(const std::string& key, Setter s) { setters_.emplace(key, std::move(s)); }

  template <class Get>
  void add_double(const std::string& key, Get get) {
    add(key, [get](RunConfig& c, const std::string& k, std::string_view v) {
      get(c) = detail::config_double(k, v);
    });
  }
  template <class Get>
  void add_size(const std::string& key, Get get) {
    add(key, [get](RunConfig& c, const std::string& k, std::string_view v) {
      get(c) = static_cast<std::size_t>(detail::config_u64(k, v));
    });
  }
  template <class Get>
  void add_bool(const std::string& key, Get get) {
    add(key, [get](RunConfig& c, const std::string& k, std::string_view v) {
      get(c) = detail::config_bool(k, v);
    });
  }

  std::map<std::string, Setter> setters_;
};

inline RunConfig parse_config(const std::string& text) { return ConfigParser().parse(text); }

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Checks the map-related fields and builds the map. Errors name the field.
inline MagMap build_map(const MapSource& src) {
  if (!src.file) {
    const auto& g = src.geometry;
    if (!(g.cell_size > 0.0)) throw ConfigError("map.cell_size must be > 0");
    if (g.width < 2) throw ConfigError("map.width must be >= 2");
    if (g.height < 2) throw ConfigError("map.height must be >= 2");
    const auto& s = src.synthetic;
    if (!(s.base_field > 0.0)) throw ConfigError("map.base_field must be > 0");
    if (!(s.peak_sigma.x > 0.0)) throw ConfigError("map.peak_sigma_x must be > 0");
    if (!(s.peak_sigma.y > 0.0)) throw ConfigError("map.peak_sigma_y must be > 0");
  }
  try {
    return src.build();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("map: ") + e.what());
  }
}

}  // namespace magnav
