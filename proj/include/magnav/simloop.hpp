#pragma once

// Deterministic closed-loop episodes: plan from the belief, move the simulated
// robot, synthesize a measurement, then run the filter. The filter and the
// planner only ever see the measurement, never the simulated truth.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "magnav/error.hpp"
#include "magnav/infogain.hpp"
#include "magnav/magmap.hpp"
#include "magnav/models.hpp"
#include "magnav/pflocal.hpp"
#include "magnav/planner.hpp"
#include "magnav/random.hpp"

namespace magnav {

struct MapSource {
  std::optional<std::string> file;  // takes precedence over the synthetic spec
  // Defaults: the reproduction scenario. A 15 m x 13 m map with one peak
  // north of the start-goal line; the margin keeps the robot off the edges.
  SyntheticMapSpec synthetic{25000.0, {5.5, 6.0}, 1000.0, {1.5, 1.5}};
  MapGeometry geometry{{-3.0, -3.0}, 0.05, 301, 261};

  MagMap build() const { return file ? load_map(*file) : generate_synthetic(synthetic, geometry); }
};

struct EpisodeConfig {
  MapSource map;
  Pose start{1.0, 2.5, 0.0};
  Goal goal{{7.0, 2.5}, 0.1};
  PlannerWeights weights;
  ActionSet actions = default_actions();
  DistanceMode distance_mode = DistanceMode::kMeanPose;
  NoiseModels noise{MotionNoise::from_degrees(0.01, 0.01, 0.15), SensorNoise{150.0}};
  // Prior spread around the start pose: sigma_x, sigma_y (m), sigma_theta (rad).
  Eigen::Vector3d prior_sigma{0.1, 0.1, deg2rad(5.0)};
  std::size_t n_particles = 250;
  double resample_fraction = 0.5;  // resample when ESS < fraction * N
  EerOptions eer;
  double dt = 0.1;
  std::size_t max_steps = 700;
  std::uint64_t seed = 1;

  static ActionSet default_actions() {
    const double omegas[] = {-25.0, -15.0, -5.0, 5.0, 15.0, 25.0};
    return ActionSet::from_rates_deg(0.2, omegas);
  }

  PlannerParams planner_params() const {
    PlannerParams p{weights, eer, distance_mode};
    p.eer.dt = dt;
    return p;
  }

  void validate(const MagMap& m) const {
    if (!(dt > 0.0)) throw ConfigError("sim.dt must be > 0");
    if (max_steps < 1) throw ConfigError("sim.max_steps must be >= 1");
    if (n_particles < 2) throw ConfigError("filter.n_particles must be >= 2");
    if (!(resample_fraction >= 0.0 && resample_fraction <= 1.0))
      throw ConfigError("filter.resample_threshold must lie in [0, 1]");
    if (eer.m_count > n_particles) throw ConfigError("eer.m_count must not exceed filter.n_particles");
    if ((prior_sigma.array() < 0.0).any() || !prior_sigma.allFinite())
      throw ConfigError("prior sigmas must be finite and >= 0");
    if (!(goal.arrival_radius > 0.0)) throw ConfigError("goal.arrival_radius must be > 0");
    if (!m.contains(start.position())) throw ConfigError("start pose lies outside the map");
    if (!m.contains(goal.position)) throw ConfigError("goal lies outside the map");
    try {
      weights.validate();
      actions.validate();
      noise.motion.validate();
      noise.sensor.validate();
      EerOptions e = eer;
      e.dt = dt;
      e.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    if (noise.motion.degenerate()) throw ConfigError("motion noise sigmas must all be > 0");
  }
};

struct TraceRow {
  std::size_t step = 0;
  double time_s = 0.0;
  Pose truth;
  Pose estimate;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double detcov = 0.0;  // positional 2x2 block
  double entropy_bits = std::numeric_limits<double>::quiet_NaN();
  std::size_t action_index = 0;
  ControlInput action;
  double z = 0.0;
  bool resampled = false;
  bool weight_reset = false;
  std::vector<double> costs;
  std::vector<double> eers;
};

struct EpisodeTrace {
  Pose start;
  Goal goal;
  std::vector<TraceRow> rows;
  bool reached_goal = false;
};

// Failure during stepping; carries the 1-based step index.
class EpisodeFailure : public Error {
 public:
  EpisodeFailure(std::size_t step, const std::string& what)
      : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class ClosedLoop {
 public:
  ClosedLoop(EpisodeConfig cfg, const MagMap& map)
      : cfg_(std::move(cfg)),
        map_(map),
        truth_(cfg_.start),
        truth_rng_(derive_seed(cfg_.seed, Stream::kTruth)),
        sensor_rng_(derive_seed(cfg_.seed, Stream::kSensor)),
        hypothesis_rng_(derive_seed(cfg_.seed, Stream::kHypotheses)) {
    cfg_.validate(map_);
    const Eigen::Matrix3d prior_cov = cfg_.prior_sigma.cwiseAbs2().asDiagonal();
    belief_ = init_belief(cfg_.start, prior_cov, cfg_.n_particles,
                          derive_seed(cfg_.seed, Stream::kFilter));
    summary_ = estimate(belief_);
  }

  const EpisodeConfig& config() const { return cfg_; }
  const ParticleBelief& belief() const { return belief_; }
  const GaussianSummary& summary() const { return summary_; }
  const Pose& truth() const { return truth_; }
  // Test hook: overwrite the simulated truth.
  void set_truth(const Pose& p) { truth_ = p; }
  std::size_t steps_taken() const { return step_; }
  bool reached_goal() const { return reached_; }
  bool finished() const { return reached_ || step_ >= cfg_.max_steps; }

  // (1) choose an action from the current belief only.
  Selection plan() {
    return select_action(belief_, cfg_.goal, cfg_.actions, cfg_.planner_params(), map_, cfg_.noise,
                         hypothesis_rng_);
  }

  // (2) propagate the simulated truth with process noise.
  void advance_truth(const ControlInput& u) {
    truth_ = step_motion(truth_, u, cfg_.dt, cfg_.noise.motion, truth_rng_);
  }

  // (3) measurement at the current truth pose.
  double measure() { return simulate_measurement(truth_, map_, cfg_.noise.sensor, sensor_rng_); }

  struct FilterOutcome {
    double entropy_bits = std::numeric_limits<double>::quiet_NaN();
    bool resampled = false;
    bool weight_reset = false;
  };

  // (4)+(5) predict, weight, entropy, conditional resample.
  FilterOutcome filter(const ControlInput& u, double z) {
    FilterOutcome out;
    const StepContext ctx{u, cfg_.dt, cfg_.noise};
    ParticleBelief predicted = predict(belief_, u, cfg_.dt, cfg_.noise.motion);
    ParticleBelief posterior;
    try {
      posterior = update(predicted, z, map_, cfg_.noise.sensor);
      out.entropy_bits = entropy_posterior(belief_, posterior, z, map_, ctx).bits;
    } catch (const WeightCollapseError&) {
      posterior = std::move(predicted);
      reset_weights(posterior);
      out.weight_reset = true;
      out.entropy_bits = entropy_predicted(belief_, posterior, ctx).bits;
    } catch (const DegenerateEntropyError&) {
      // Left as NaN in the trace; the belief itself is still valid.
    }
    belief_ = resample_if_needed(std::move(posterior),
                                 cfg_.resample_fraction * static_cast<double>(cfg_.n_particles),
                                 &out.resampled);
    summary_ = estimate(belief_);
    return out;
  }

  TraceRow step() {
    if (finished()) throw Error("episode already finished");
    const std::size_t k = step_ + 1;
    try {
      Selection sel = plan();
      advance_truth(sel.action);
      const double z = measure();
      const FilterOutcome f = filter(sel.action, z);
      step_ = k;

      TraceRow row;
      row.step = k;
      row.time_s = static_cast<double>(k) * cfg_.dt;
      row.truth = truth_;
      row.estimate = summary_.mean;
      row.covariance = summary_.covariance;
      row.detcov = summary_.positional_det();
      row.entropy_bits = f.entropy_bits;
      row.action_index = sel.index;
      row.action = sel.action;
      row.z = z;
      row.resampled = f.resampled;
      row.weight_reset = f.weight_reset;
      for (const auto& ev : sel.evaluations) {
        row.costs.push_back(ev.cost);
        row.eers.push_back(ev.eer);
      }
      const double dx = summary_.mean.x - cfg_.goal.position.x;
      const double dy = summary_.mean.y - cfg_.goal.position.y;
      reached_ = std::hypot(dx, dy) <= cfg_.goal.arrival_radius;
      return row;
    } catch (const EpisodeFailure&) {
      throw;
    } catch (const Error& e) {
      throw EpisodeFailure(k, e.what());
    }
  }

 private:
  EpisodeConfig cfg_;
  const MagMap& map_;
  Pose truth_;
  Rng truth_rng_;
  Rng sensor_rng_;
  Rng hypothesis_rng_;
  ParticleBelief belief_;
  GaussianSummary summary_;
  std::size_t step_ = 0;
  bool reached_ = false;
};

inline EpisodeTrace run_episode(const EpisodeConfig& cfg, const MagMap& map) {
  ClosedLoop loop(cfg, map);
  EpisodeTrace trace{cfg.start, cfg.goal, {}, false};
  trace.rows.reserve(cfg.max_steps);
  while (!loop.finished()) trace.rows.push_back(loop.step());
  trace.reached_goal = loop.reached_goal();
  return trace;
}

inline EpisodeTrace run_episode(const EpisodeConfig& cfg) {
  const MagMap map = cfg.map.build();
  return run_episode(cfg, map);
}

struct EpisodeMetrics {
  std::size_t steps = 0;
  bool reached_goal = false;
  double final_detcov = 0.0;
  double mean_detcov = 0.0;
  double rmse = 0.0;  // position estimate vs truth
  double mean_error = 0.0;
  double final_error = 0.0;
  double path_length = 0.0;          // truth path
  double max_chord_deviation = 0.0;  // truth distance from the start-goal line
  std::vector<double> detcov;
  std::vector<double> entropy_raw;
  std::vector<double> entropy_filtered;
};

inline double chord_deviation(Vec2 start, Vec2 goal, Vec2 p) {
  const double cx = goal.x - start.x;
  const double cy = goal.y - start.y;
  const double len = std::hypot(cx, cy);
  if (len == 0.0) return std::hypot(p.x - start.x, p.y - start.y);
  return std::abs(cx * (p.y - start.y) - cy * (p.x - start.x)) / len;
}

inline EpisodeMetrics compute_metrics(const EpisodeTrace& trace) {
  if (trace.rows.empty()) throw InvalidArgument("cannot compute metrics of an empty trace");
  EpisodeMetrics m;
  m.steps = trace.rows.size();
  m.reached_goal = trace.reached_goal;
  double sq = 0.0, err_sum = 0.0, det_sum = 0.0;
  Vec2 prev = trace.start.position();
  for (const auto& r : trace.rows) {
    const double err = std::hypot(r.estimate.x - r.truth.x, r.estimate.y - r.truth.y);
    sq += err * err;
    err_sum += err;
    det_sum += r.detcov;
    m.detcov.push_back(r.detcov);
    m.entropy_raw.push_back(r.entropy_bits);
    m.path_length += std::hypot(r.truth.x - prev.x, r.truth.y - prev.y);
    prev = r.truth.position();
    m.max_chord_deviation = std::max(
        m.max_chord_deviation, chord_deviation(trace.start.position(), trace.goal.position,
                                               r.truth.position()));
  }
  const auto n = static_cast<double>(trace.rows.size());
  m.rmse = std::sqrt(sq / n);
  m.mean_error = err_sum / n;
  m.mean_detcov = det_sum / n;
  m.final_detcov = trace.rows.back().detcov;
  const auto& last = trace.rows.back();
  m.final_error = std::hypot(last.estimate.x - last.truth.x, last.estimate.y - last.truth.y);
  m.entropy_filtered =
      m.entropy_raw.size() >= 4 ? iqr_reject(m.entropy_raw) : m.entropy_raw;
  return m;
}

struct SweepRun {
  double w_h = 0.0;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  std::optional<EpisodeTrace> trace;
  std::optional<EpisodeMetrics> metrics;
  std::string error;
};

// Cross product of w_h values and seeds. Seed i is base.seed + i, so a
// one-value, one-seed sweep is exactly run_episode(base). Runs execute in
// parallel; results come back in (w_h, seed) order. Failed runs are recorded
// and the sweep continues.
inline std::vector<SweepRun> sweep(const EpisodeConfig& base, std::span<const double> w_h_values,
                                   std::size_t seed_count, const MagMap& map,
                                   unsigned threads = 0) {
  if (w_h_values.empty() || seed_count == 0)
    throw InvalidArgument("sweep needs at least one w_h value and one seed");
  std::vector<SweepRun> runs;
  for (double w : w_h_values)
    for (std::size_t s = 0; s < seed_count; ++s) runs.push_back({w, s, base.seed + s, {}, {}, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SweepRun& run = runs[i];
      EpisodeConfig cfg = base;
      cfg.weights.w_h = run.w_h;
      cfg.seed = run.seed;
      try {
        run.trace = run_episode(cfg, map);
        run.metrics = compute_metrics(*run.trace);
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, runs.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return runs;
}

// ---------------------------------------------------------------------------
// Trace files
//
// CSV with '#' comment lines, one header row, then one row per step:
//   step,time_s,true_x,true_y,true_theta,est_x,est_y,est_theta,
//   cov_xx,cov_xy,cov_xtheta,cov_yy,cov_ytheta,cov_thetatheta,detcov,
//   entropy_bits,action,v,omega,z,resampled,weight_reset,
//   cost_0..cost_{A-1},eer_0..eer_{A-1}
// A "# episode start=x,y,theta goal=x,y,radius reached_goal=0|1" comment
// records the chord needed for path metrics.

inline void write_trace(std::ostream& os, const EpisodeTrace& trace) {
  using detail::format_double;
  const std::size_t actions = trace.rows.empty() ? 0 : trace.rows.front().costs.size();
  os << "# episode start=" << format_double(trace.start.x) << ',' << format_double(trace.start.y)
     << ',' << format_double(trace.start.theta) << " goal=" << format_double(trace.goal.position.x)
     << ',' << format_double(trace.goal.position.y) << ','
     << format_double(trace.goal.arrival_radius) << " reached_goal=" << (trace.reached_goal ? 1 : 0)
     << '\n';
  os << "step,time_s,true_x,true_y,true_theta,est_x,est_y,est_theta,cov_xx,cov_xy,cov_xtheta,"
        "cov_yy,cov_ytheta,cov_thetatheta,detcov,entropy_bits,action,v,omega,z,resampled,"
        "weight_reset";
  for (std::size_t j = 0; j < actions; ++j) os << ",cost_" << j;
  for (std::size_t j = 0; j < actions; ++j) os << ",eer_" << j;
  os << '\n';
  for (const auto& r : trace.rows) {
    const auto& c = r.covariance;
    const double fields[] = {r.time_s,     r.truth.x,    r.truth.y,    r.truth.theta,
                             r.estimate.x, r.estimate.y, r.estimate.theta, c(0, 0),
                             c(0, 1),      c(0, 2),      c(1, 1),      c(1, 2),
                             c(2, 2),      r.detcov,     r.entropy_bits};
    os << r.step;
    for (double f : fields) os << ',' << format_double(f);
    os << ',' << r.action_index << ',' << format_double(r.action.v) << ','
       << format_double(r.action.omega) << ',' << format_double(r.z) << ','
       << (r.resampled ? 1 : 0) << ',' << (r.weight_reset ? 1 : 0);
    for (double v : r.costs) os << ',' << format_double(v);
    for (double v : r.eers) os << ',' << format_double(v);
    os << '\n';
  }
}

// Column-addressable view of a trace CSV.
struct TraceTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> comments;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ParseError(0, "trace has no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }
  std::vector<double> series(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline double parse_csv_number(std::string_view t, std::size_t line_no) {
  if (t == "nan" || t == "-nan") return std::numeric_limits<double>::quiet_NaN();
  if (t == "inf") return std::numeric_limits<double>::infinity();
  if (t == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  if (!detail::parse_double(t, v)) throw ParseError(line_no, "bad number '" + std::string(t) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = line.find(',');
    out.push_back(line.substr(0, comma));
    if (comma == std::string_view::npos) break;
    line.remove_prefix(comma + 1);
  }
  return out;
}

inline TraceTable read_trace(std::istream& is) {
  TraceTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      t.comments.push_back(line);
      continue;
    }
    const auto fields = split_csv(line);
    if (!have_header) {
      for (auto f : fields) t.columns.emplace_back(f);
      if (t.columns.empty() || t.columns.front() != "step")
        throw ParseError(line_no, "trace header must start with 'step'");
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size())
      throw ParseError(line_no, "expected " + std::to_string(t.columns.size()) + " fields");
    std::vector<double> row;
    row.reserve(fields.size());
    for (auto f : fields) row.push_back(parse_csv_number(f, line_no));
    t.rows.push_back(std::move(row));
  }
  if (!have_header) throw ParseError(0, "trace has no header row");
  return t;
}

inline void write_summary_header(std::ostream& os) {
  os << "w_h,seed_index,seed,status,steps,reached_goal,final_detcov,mean_detcov,rmse,mean_error,"
        "final_error,path_length,max_chord_deviation\n";
}

inline void write_summary_row(std::ostream& os, const SweepRun& run) {
  using detail::format_double;
  os << format_double(run.w_h) << ',' << run.seed_index << ',' << run.seed << ','
     << (run.error.empty() ? "ok" : "failed");
  if (run.metrics) {
    const auto& m = *run.metrics;
    os << ',' << m.steps << ',' << (m.reached_goal ? 1 : 0) << ',' << format_double(m.final_detcov)
       << ',' << format_double(m.mean_detcov) << ',' << format_double(m.rmse) << ','
       << format_double(m.mean_error) << ',' << format_double(m.final_error) << ','
       << format_double(m.path_length) << ',' << format_double(m.max_chord_deviation);
  } else {
    os << ",0,0,nan,nan,nan,nan,nan,nan,nan";
  }
  os << '\n';
}

}  // namespace magnav
