// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "magnav/cli.hpp"
#include "support.hpp"

using namespace magnav;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string source(const std::string& rel) { return std::string(MAGNAV_SOURCE_DIR) + "/" + rel; }

// ---------------------------------------------------------------------------

Verdict tl_recovery() {
  const auto want = oracle::reference_coefficients();
  const auto clean = oracle::tl_forward(want, 2000, 0.0, 1);
  const auto fit = tl::fit(clean.samples, clean.b_earth);
  double worst_rel = 0.0;
  for (int i = 0; i < 20; ++i)
    worst_rel = std::max(worst_rel, std::abs(fit.eps(i) - want(i)) / std::abs(want(i)));

  double worst_rms = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto noisy = oracle::tl_forward(want, 2000, 1.0, 100 + seed);
    worst_rms = std::max(worst_rms, tl::fit(noisy.samples, noisy.b_earth).residual_rms);
  }

  const auto big = oracle::tl_forward(want, 10000, 1.0, 7);
  const auto t0 = std::chrono::steady_clock::now();
  const auto big_fit = tl::fit(big.samples, big.b_earth);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  (void)big_fit;

  return {worst_rel <= 1e-6 && worst_rms <= 2.0 && secs < 1.0,
          "max rel err " + fmt(worst_rel) + ", max noisy rms " + fmt(worst_rms) + " nT, 1e4 rows " +
              fmt(secs) + " s"};
}

Verdict filter_vs_grid() {
  const oracle::RampTracking scenario;
  int passing = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double gap = scenario.worst_gap(seed);
    worst = std::max(worst, gap);
    if (gap <= 2 * scenario.cell) ++passing;
  }
  return {passing >= 18, std::to_string(passing) + "/20 seeds within 2 cells, worst gap " +
                             fmt(worst) + " m"};
}

Verdict entropy_vs_kalman() {
  const oracle::LinearGaussian sys;
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) sum += sys.estimate_bits(2000, seed);
  const double bias = sum / 50.0 - sys.kalman_posterior_bits();
  int ordered = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double a = sys.estimate_bits(250, seed), b = sys.estimate_bits(1000, seed),
                 c = sys.estimate_bits(4000, seed);
    if (std::abs(c - b) < std::abs(b - a)) ++ordered;
  }
  return {std::abs(bias) < 0.2 && ordered >= 15,
          "mean bias " + fmt(bias) + " bits, self-convergence " + std::to_string(ordered) + "/20"};
}

Verdict uniform_map_zeroing() {
  const MagMap m({{-10, -10}, 0.5, 41, 41}, std::vector<double>(41 * 41, 25000.0));
  const EpisodeConfig cfg;
  double worst_eer = 0.0, worst_gap = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Eigen::Matrix3d cov = cfg.prior_sigma.cwiseAbs2().asDiagonal();
    const auto b = init_belief({0, 0, 0}, cov, cfg.n_particles, seed);
    for (const auto& a : cfg.actions.actions) {
      Rng r(seed);
      worst_eer = std::max(worst_eer, std::abs(eer(b, a, m, cfg.noise, cfg.eer, r).bits));
      const StepContext ctx{a, cfg.dt, cfg.noise};
      const auto pred = predict(b, a, cfg.dt, cfg.noise.motion);
      const auto post = update(pred, 25000.0 + 37.0 * double(seed), m, cfg.noise.sensor);
      const double h19 = entropy_posterior(b, post, 25000.0 + 37.0 * double(seed), m, ctx).bits;
      const double h20 = entropy_predicted(b, pred, ctx).bits;
      worst_gap = std::max(worst_gap, std::abs(h19 - h20));
    }
  }
  return {worst_eer <= 1e-9 && worst_gap <= 1e-9,
          "max |EER| " + fmt(worst_eer) + " bits, max posterior/predicted gap " + fmt(worst_gap)};
}

// Criteria 5 and 6 share one 10-seed sweep.
struct SweepResults {
  std::vector<double> levels;
  std::vector<std::vector<EpisodeMetrics>> by_level;  // [level][seed]
  std::string error;
};

SweepResults run_fig_sweep() {
  SweepResults out;
  RunConfig cfg = load_config(source("configs/fig4_sweep.cfg"));
  const MagMap m = build_map(cfg.episode.map);
  out.levels = cfg.sweep_w_h;
  const std::size_t seeds = 10;
  const auto runs = sweep(cfg.episode, cfg.sweep_w_h, seeds, m, cfg.sweep_threads);
  out.by_level.assign(out.levels.size(), {});
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (!runs[i].metrics) {
      out.error = "w_h=" + fmt(runs[i].w_h) + " seed " + std::to_string(runs[i].seed) + ": " + runs[i].error;
      continue;
    }
    out.by_level[i / seeds].push_back(*runs[i].metrics);
  }
  return out;
}

std::size_t level_index(const SweepResults& s, double w) {
  for (std::size_t i = 0; i < s.levels.size(); ++i)
    if (s.levels[i] == w) return i;
  throw Error("sweep has no level w_h=" + fmt(w));
}

Verdict chord_deviation_trend(const SweepResults& s) {
  if (!s.error.empty()) return {false, "sweep run failed: " + s.error};
  const auto& zero = s.by_level[level_index(s, 0.0)];
  double worst0 = 0.0;
  for (const auto& m : zero) worst0 = std::max(worst0, m.max_chord_deviation);
  std::vector<double> medians;
  std::string med;
  for (const auto& level : s.by_level) {
    std::vector<double> d;
    for (const auto& m : level) d.push_back(m.max_chord_deviation);
    medians.push_back(oracle::median(d));
    med += (med.empty() ? "" : " ") + fmt(medians.back());
  }
  const double rho = oracle::spearman(s.levels, medians);
  return {worst0 < 0.5 && zero.size() == 10 && rho > 0.8,
          "(a) w_h=0 max deviation " + fmt(worst0) + " m; (b) medians [" + med + "] rho " + fmt(rho)};
}

Verdict detcov_reduction(const SweepResults& s) {
  if (!s.error.empty()) return {false, "sweep run failed: " + s.error};
  const auto& zero = s.by_level[level_index(s, 0.0)];
  const auto& five = s.by_level[level_index(s, 5.0)];
  const auto& ten = s.by_level[level_index(s, 10.0)];
  int smaller = 0;
  for (std::size_t k = 0; k < std::min(zero.size(), five.size()); ++k)
    if (five[k].final_detcov < zero[k].final_detcov) ++smaller;
  double avg0 = 0.0, avg10 = 0.0;
  for (const auto& m : zero) avg0 += m.mean_detcov / double(zero.size());
  for (const auto& m : ten) avg10 += m.mean_detcov / double(ten.size());
  return {smaller >= 8 && avg10 < avg0,
          "final det w_h=5 < w_h=0 in " + std::to_string(smaller) + "/10 seeds; time-averaged det w_h=0 " +
              fmt(avg0) + ", w_h=10 " + fmt(avg10)};
}

Verdict planning_budget() {
  const RunConfig cfg = load_config(source("configs/episode.cfg"));
  const MagMap m = build_map(cfg.episode.map);
  const auto& e = cfg.episode;
  if (e.n_particles != 250 || e.eer.m_count != 30 || e.eer.horizon_steps != 10 || e.actions.size() != 6)
    return {false, "episode.cfg does not use N=250, M=30, H=10, 6 actions"};
  const BenchResult r = benchmark_planning(e, m, 100);
  return {r.mean_ms < 100.0, "mean " + fmt(r.mean_ms) + " ms, max " + fmt(r.max_ms) + " ms over " +
                                 std::to_string(r.steps) + " steps"};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "magnav");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every file of a against the same name in b.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = b / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) return false;
    ++files;
  }
  std::size_t count_b = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(b)) ++count_b;
  return count_b == files && files > 0;
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "magnav_acceptance_determinism";
  fs::remove_all(root);
  const std::vector<std::string> run_args{"--config", source("configs/episode.cfg"), "--quiet"};
  const std::vector<std::string> sweep_args{"--config", source("configs/fig4_sweep.cfg"), "--quiet",
                                            "--set", "sim.max_steps=150", "--set", "sweep.seeds=2"};
  for (const char* rep : {"1", "2"}) {
    auto r = run_args;
    r.insert(r.end(), {"--out", (root / (std::string("run") + rep)).string(), "run"});
    auto s = sweep_args;
    s.insert(s.end(), {"--out", (root / (std::string("sweep") + rep)).string(), "sweep"});
    if (cli(r) != 0 || cli(s) != 0) return {false, "run or sweep exited nonzero"};
  }
  std::size_t run_files = 0, sweep_files = 0;
  const bool ok = same_tree(root / "run1", root / "run2", run_files) &&
                  same_tree(root / "sweep1", root / "sweep2", sweep_files);
  fs::remove_all(root);
  return {ok, std::to_string(run_files) + " run files and " + std::to_string(sweep_files) +
                  " sweep files compared byte for byte"};
}

Verdict iqr_contract() {
  Rng r(99);
  std::size_t series = 0, violations = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 4 + r.next() % 300;
    std::vector<double> v(n);
    const double spread = 0.1 + 10.0 * r.uniform();
    for (auto& x : v) {
      x = spread * r.gaussian();
      if (r.uniform() < 0.08) x += 50.0 * spread * r.gaussian();
    }
    const auto out = iqr_reject(v);
    const auto f = iqr_fences(v);
    ++series;
    if (out.size() != n || out[0] != v[0]) ++violations;
    for (std::size_t k = 1; k < n; ++k) {
      // Inside the fences, or a copy of the previous output (which traces
      // back to an inlier or to the untouched first element).
      if (f.contains(out[k])) continue;
      if (out[k] != out[k - 1] || out[k] != v[0]) ++violations;
    }
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> c(4 + trial, 1.0 + trial);
    if (iqr_reject(c) != c) ++violations;
  }
  return {violations == 0, std::to_string(series) + " random series, " + std::to_string(violations) +
                               " violations; constant series unchanged"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Verdict()> check;
  };
  std::optional<SweepResults> sweep_results;
  auto fig_sweep = [&]() -> const SweepResults& {
    if (!sweep_results) sweep_results = run_fig_sweep();
    return *sweep_results;
  };
  const std::vector<Criterion> criteria = {
      {"tl-coefficient-recovery", tl_recovery},
      {"filter-vs-grid-oracle", filter_vs_grid},
      {"entropy-vs-kalman-oracle", entropy_vs_kalman},
      {"uniform-map-zeroing", uniform_map_zeroing},
      {"sweep-chord-deviation", [&] { return chord_deviation_trend(fig_sweep()); }},
      {"sweep-detcov-reduction", [&] { return detcov_reduction(fig_sweep()); }},
      {"planning-time-budget", planning_budget},
      {"determinism", determinism},
      {"iqr-filter-contract", iqr_contract},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      v = criteria[i].check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << i + 1 << ' ' << criteria[i].name << ": "
              << v.detail << " (" << fmt(secs) << " s)" << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failed) << '/' << criteria.size()
            << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
