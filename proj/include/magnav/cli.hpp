#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure,
// 2 usage or configuration error.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "magnav/config.hpp"
#include "magnav/error.hpp"
#include "magnav/infogain.hpp"
#include "magnav/magmap.hpp"
#include "magnav/simloop.hpp"
#include "magnav/tlcal.hpp"

namespace magnav {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Thrown for bad input files or arguments discovered after option parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct BenchResult {
  std::size_t steps = 0;
  double mean_ms = 0.0;
  double max_ms = 0.0;
};

// Times select_action alone over `steps` closed-loop steps.
inline BenchResult benchmark_planning(const EpisodeConfig& cfg, const MagMap& map,
                                      std::size_t steps) {
  ClosedLoop loop(cfg, map);
  BenchResult r;
  double total = 0.0;
  while (r.steps < steps && !loop.finished()) {
    const auto t0 = std::chrono::steady_clock::now();
    const Selection sel = loop.plan();
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total += ms;
    r.max_ms = std::max(r.max_ms, ms);
    ++r.steps;
    loop.advance_truth(sel.action);
    loop.filter(sel.action, loop.measure());
  }
  r.mean_ms = r.steps ? total / static_cast<double>(r.steps) : 0.0;
  return r;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write '" + path.string() + "'");
  os << text;
  if (!os.flush()) throw Error("write failed for '" + path.string() + "'");
}

inline std::string export_csv(const TraceTable& t, const std::string& kind) {
  std::ostringstream os;
  const auto step = t.series("step");
  const auto time = t.series("time_s");
  if (kind == "trajectory") {
    const char* names[] = {"truth", "estimate"};
    const char* prefix[] = {"true_", "est_"};
    os << "step,time_s,source,x,y,theta\n";
    for (int s = 0; s < 2; ++s) {
      const auto x = t.series(std::string(prefix[s]) + "x");
      const auto y = t.series(std::string(prefix[s]) + "y");
      const auto th = t.series(std::string(prefix[s]) + "theta");
      for (std::size_t i = 0; i < t.rows.size(); ++i)
        os << format_double(step[i]) << ',' << format_double(time[i]) << ',' << names[s] << ','
           << format_double(x[i]) << ',' << format_double(y[i]) << ',' << format_double(th[i])
           << '\n';
    }
  } else if (kind == "detcov") {
    const auto det = t.series("detcov");
    os << "step,time_s,detcov\n";
    for (std::size_t i = 0; i < t.rows.size(); ++i)
      os << format_double(step[i]) << ',' << format_double(time[i]) << ','
         << format_double(det[i]) << '\n';
  } else if (kind == "entropy") {
    const auto raw = t.series("entropy_bits");
    // Non-finite entries are passed through and kept out of the quartiles.
    std::vector<double> finite;
    for (double v : raw)
      if (std::isfinite(v)) finite.push_back(v);
    const auto kept = finite.size() >= 4 ? iqr_reject(finite) : finite;
    os << "step,time_s,entropy_raw,entropy_filtered\n";
    std::size_t k = 0;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const double filtered = std::isfinite(raw[i]) ? kept[k++] : raw[i];
      os << format_double(step[i]) << ',' << format_double(time[i]) << ','
         << format_double(raw[i]) << ',' << format_double(filtered) << '\n';
    }
  } else {
    throw UsageError("unknown export kind '" + kind + "' (trajectory, detcov, entropy)");
  }
  return os.str();
}

inline std::string trace_text(const RunConfig& cfg, const EpisodeTrace& trace) {
  std::ostringstream os;
  os << provenance_line(cfg) << '\n';
  write_trace(os, trace);
  return os.str();
}

// Trace plus any export files switched on in the config.
inline void write_episode_outputs(const RunConfig& cfg, const EpisodeTrace& trace,
                                  const std::filesystem::path& dir, const std::string& stem) {
  const std::string text = trace_text(cfg, trace);
  if (cfg.output.trace) write_file(dir / (stem + ".csv"), text);
  std::istringstream is(text);
  const TraceTable table = read_trace(is);
  const std::pair<bool, const char*> kinds[] = {{cfg.output.trajectory, "trajectory"},
                                                {cfg.output.detcov, "detcov"},
                                                {cfg.output.entropy, "entropy"}};
  for (const auto& [on, kind] : kinds)
    if (on)
      write_file(dir / (stem + "_" + kind + ".csv"),
                 provenance_line(cfg) + "\n" + export_csv(table, kind));
}

}  // namespace detail

// Runs the CLI with argv-style arguments. Output goes to `out` and
// diagnostics to `err`; nothing is written to the process streams directly.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;

  CLI::App app{"Uncertainty-aware planning for magnetic-anomaly navigation", "magnav"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool quiet = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Config file (key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--quiet", quiet, "Suppress progress output");
  app.add_option("--set", overrides, "Override a config key, e.g. --set w_h=5");
  app.fallthrough();

  auto* genmap = app.add_subcommand("genmap", "Write the synthetic map as a magmap v1 file");
  std::string map_name = "map.magmap";
  genmap->add_option("-o,--output", map_name, "File name inside the output directory");

  auto* calibrate = app.add_subcommand("calibrate", "Fit Tolles-Lawson coefficients to a log");
  std::string log_path;
  calibrate->add_option("log", log_path, "maglog v1 file with a be_truth column")->required();

  auto* run = app.add_subcommand("run", "Run one closed-loop episode");
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the w_h x seed sweep");

  auto* exp = app.add_subcommand("export", "Convert a trace into plot-ready CSV");
  std::string trace_path;
  std::string kind;
  std::string export_name;
  exp->add_option("trace", trace_path, "Trace CSV written by run or sweep")->required();
  exp->add_option("--kind", kind, "trajectory, detcov or entropy")->required();
  exp->add_option("-o,--output", export_name, "File name inside the output directory");

  auto* bench = app.add_subcommand("bench", "Time the planning step");
  std::size_t bench_steps = 100;
  bench->add_option("--steps", bench_steps, "Number of planning steps to time")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto log = [&](const std::string& msg) {
    if (!quiet) out << msg << '\n';
  };

  // Configuration stage: everything here is a usage error.
  RunConfig cfg;
  std::optional<MagMap> map;
  const bool needs_map = !calibrate->parsed() && !exp->parsed();
  try {
    if (!config_path.empty()) {
      cfg = load_config(config_path);
    } else {
      cfg.hash = fnv1a("");
    }
    ConfigParser parser;
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      const std::string key(detail::trim(std::string_view(o).substr(0, eq)));
      parser.apply(cfg, key, detail::trim(std::string_view(o).substr(eq + 1)));
      cfg.hash = fnv1a(hex64(cfg.hash) + "\n" + o);
    }
    if (seed) cfg.episode.seed = *seed;
    if (genmap->parsed()) cfg.episode.map.file.reset();
    if (needs_map) {
      map = build_map(cfg.episode.map);
      if (!genmap->parsed()) cfg.episode.validate(*map);
    }
    if (sweep_cmd->parsed() && cfg.sweep_seeds == 0) throw ConfigError("sweep.seeds must be >= 1");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  const fs::path dir(out_dir);
  try {
    if (genmap->parsed()) {
      std::ostringstream os;
      write_map(os, *map);
      detail::write_file(dir / map_name, os.str());
      log("wrote " + (dir / map_name).string() + " (" + std::to_string(map->geometry().width) + "x" +
          std::to_string(map->geometry().height) + ")");
      return kExitOk;
    }

    if (calibrate->parsed()) {
      tl::CalibrationLog data;
      tl::FitResult result;
      try {
        data = tl::load_log(log_path);
        if (!data.be_truth) throw UsageError("log has no be_truth column; cannot fit");
        result = tl::fit(data.samples, *data.be_truth);
      } catch (const RankDeficientError&) {
        throw;
      } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
      }
      std::ostringstream coef;
      tl::write_coefficients(coef, result.eps);
      detail::write_file(dir / "coefficients.tlcoef", coef.str());

      std::ostringstream rep;
      rep << provenance_line(cfg) << '\n';
      rep << "log " << log_path << '\n';
      rep << "rows " << result.rows << '\n';
      rep << "residual_rms_nT " << detail::format_double(result.residual_rms) << '\n';
      rep << "excitation_warnings " << result.unexcited.size() << '\n';
      for (std::size_t c : result.unexcited)
        rep << "warning column " << c + 1 << " is not excited by the log\n";
      detail::write_file(dir / "calibration_report.txt", rep.str());
      if (!quiet) out << rep.str();
      return kExitOk;
    }

    if (run->parsed()) {
      EpisodeTrace trace;
      try {
        trace = run_episode(cfg.episode, *map);
      } catch (const EpisodeFailure& e) {
        err << "error: episode failed at " << e.what() << '\n';
        return kExitRuntime;
      }
      detail::write_episode_outputs(cfg, trace, dir, "trace");
      const EpisodeMetrics m = compute_metrics(trace);
      if (cfg.output.metrics) {
        std::ostringstream os;
        os << provenance_line(cfg) << '\n';
        write_summary_header(os);
        write_summary_row(os, SweepRun{cfg.episode.weights.w_h, 0, cfg.episode.seed, {}, m, {}});
        detail::write_file(dir / "metrics.csv", os.str());
      }
      std::ostringstream msg;
      msg << "steps " << m.steps << " reached_goal " << (m.reached_goal ? 1 : 0)
          << " final_detcov " << detail::format_double(m.final_detcov) << " rmse "
          << detail::format_double(m.rmse);
      log(msg.str());
      return kExitOk;
    }

    if (sweep_cmd->parsed()) {
      const auto runs = magnav::sweep(cfg.episode, cfg.sweep_w_h, cfg.sweep_seeds, *map,
                                      cfg.sweep_threads);
      std::ostringstream summary;
      summary << provenance_line(cfg) << '\n';
      write_summary_header(summary);
      bool any_failed = false;
      for (const auto& r : runs) {
        write_summary_row(summary, r);
        if (r.trace) {
          RunConfig rc = cfg;
          rc.episode.seed = r.seed;
          detail::write_episode_outputs(rc, *r.trace, dir,
                                        "trace_wh" + detail::format_double(r.w_h) + "_s" +
                                            std::to_string(r.seed_index));
        } else {
          any_failed = true;
          err << "error: w_h=" << detail::format_double(r.w_h) << " seed=" << r.seed << ": "
              << r.error << '\n';
        }
      }
      detail::write_file(dir / "summary.csv", summary.str());
      log("wrote " + std::to_string(runs.size()) + " runs to " + dir.string());
      return any_failed ? kExitRuntime : kExitOk;
    }

    if (exp->parsed()) {
      TraceTable table;
      {
        std::ifstream in(trace_path, std::ios::binary);
        if (!in) {
          err << "error: cannot open trace '" << trace_path << "'\n";
          return kExitUsage;
        }
        try {
          table = read_trace(in);
        } catch (const ParseError& e) {
          err << "error: " << trace_path << ": " << e.what() << '\n';
          return kExitRuntime;
        }
      }
      if (kind != "trajectory" && kind != "detcov" && kind != "entropy") {
        err << "error: unknown export kind '" << kind << "' (trajectory, detcov, entropy)\n";
        return kExitUsage;
      }
      if (table.rows.empty()) {
        err << "error: trace '" << trace_path << "' has no rows\n";
        return kExitRuntime;
      }
      if (export_name.empty()) export_name = kind + ".csv";
      detail::write_file(dir / export_name,
                         provenance_line(cfg) + "\n" + detail::export_csv(table, kind));
      log("wrote " + (dir / export_name).string());
      return kExitOk;
    }

    if (bench->parsed()) {
      const BenchResult r = benchmark_planning(cfg.episode, *map, bench_steps);
      std::ostringstream msg;
      msg << "planning steps " << r.steps << " particles " << cfg.episode.n_particles
          << " hypotheses " << cfg.episode.eer.m_count << " horizon "
          << cfg.episode.eer.horizon_steps << " actions " << cfg.episode.actions.size() << '\n'
          << "mean_ms " << detail::format_double(r.mean_ms) << '\n'
          << "max_ms " << detail::format_double(r.max_ms) << '\n';
      out << msg.str();
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace magnav
