#pragma once

// Reference computations and shared scenarios for the unit tests and the
// acceptance runner. The oracles use only plain data types; the scenario
// drivers at the bottom call the estimators under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "magnav/magmap.hpp"
#include "magnav/infogain.hpp"
#include "magnav/pflocal.hpp"
#include "magnav/tlcal.hpp"

namespace magnav::oracle {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return std::nan("");
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

// Spearman rank correlation as the Pearson correlation of ranks.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(ra.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Tolles-Lawson forward model.
//
// Interference is linear in the coefficients, but the induced and eddy
// terms scale with the measured total field itself, so for a given
// attitude the total field solves
//   B_t = B_e + p + B_t q + e19 + e20 V
// with p the permanent part and q the per-nT induced and eddy part.

struct TlScenario {
  std::vector<tl::MagSample> samples;
  std::vector<double> b_earth;
};

inline Eigen::Matrix<double, 20, 1> reference_coefficients() {
  Eigen::Matrix<double, 20, 1> e;
  e << 40.0, -25.0, 15.0,                                    // permanent, nT
      0.002, -0.0015, 0.001, 0.0008, -0.0005, 0.0012,        // induced, per nT
      0.0004, -0.0003, 0.0002, 0.0001, 0.0005, -0.0002,      // eddy, per nT s
      0.0003, -0.0004, 0.00025,
      7.0,                                                   // bias, nT
      3.0;                                                   // velocity, nT s/m
  return e;
}

// A coning attitude sweep: direction cosines from smoothly varying
// roll/pitch/yaw-like angles, speed varying along the track.
inline TlScenario tl_forward(const Eigen::Matrix<double, 20, 1>& eps, std::size_t n, double noise_nt,
                             std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, noise_nt);
  TlScenario s;
  const double dt = 0.1;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double az = 0.7 * t + 0.4 * std::sin(0.31 * t);
    const double el = 0.9 * std::sin(0.23 * t) + 0.3 * std::cos(1.7 * t);
    Eigen::Vector3d u(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    u.normalize();
    const double speed = 0.5 + 0.3 * std::sin(0.05 * t) + 0.1 * std::cos(0.9 * t);
    const double be = 50000.0 + 20.0 * std::sin(0.01 * t);
    s.samples.push_back({t, u, 0.0, speed});
    s.b_earth.push_back(be);
  }
  // Rates by backward difference of the (exact) direction cosines.
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d c = s.samples[k].b_vec;
    const Eigen::Vector3d r =
        k == 0 ? Eigen::Vector3d::Zero() : Eigen::Vector3d((c - s.samples[k - 1].b_vec) / dt);
    double p = eps(0) * c.x() + eps(1) * c.y() + eps(2) * c.z();
    double q = eps(3) * c.x() * c.x() + eps(4) * c.y() * c.y() + eps(5) * c.z() * c.z() +
               eps(6) * c.x() * c.y() + eps(7) * c.x() * c.z() + eps(8) * c.y() * c.z();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) q += eps(9 + 3 * a + b) * c(a) * r(b);
    const double bt = (s.b_earth[k] + p + eps(18) + eps(19) * s.samples[k].speed) / (1.0 - q);
    s.samples[k].b_total = bt;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double bt = s.samples[k].b_total + noise(gen);
    s.samples[k].b_vec = s.samples[k].b_vec * bt;
    s.samples[k].b_total = bt;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dense-grid Bayes filter for x on a map that varies in x only, with a
// straight eastward motion x' = x + v dt + N(0, sx^2).

struct GridFilter {
  double x0, h;
  std::vector<double> p;

  GridFilter(double lo, double hi, double cell, double mean, double sigma)
      : x0(lo), h(cell), p(static_cast<std::size_t>((hi - lo) / cell) + 1) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = (x(i) - mean) / sigma;
      p[i] = std::exp(-0.5 * d * d);
    }
    normalize();
  }

  double x(std::size_t i) const { return x0 + h * static_cast<double>(i); }

  void normalize() {
    double s = 0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
  }

  void predict(double shift, double sigma) {
    std::vector<double> q(p.size(), 0.0);
    const int reach = static_cast<int>(std::ceil(6.0 * sigma / h)) + 1;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j] == 0.0) continue;
      const double m = x(j) + shift;
      const int c = static_cast<int>(std::lround((m - x0) / h));
      for (int i = std::max(0, c - reach);
           i <= std::min(static_cast<int>(p.size()) - 1, c + reach); ++i) {
        const double d = (x(static_cast<std::size_t>(i)) - m) / sigma;
        q[static_cast<std::size_t>(i)] += p[j] * std::exp(-0.5 * d * d);
      }
    }
    p = std::move(q);
    normalize();
  }

  template <class Field>
  void update(double z, double sigma_z, Field&& field) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = (z - field(x(i))) / sigma_z;
      p[i] *= std::exp(-0.5 * d * d);
    }
    normalize();
  }

  double mean() const {
    double m = 0;
    for (std::size_t i = 0; i < p.size(); ++i) m += p[i] * x(i);
    return m;
  }
};

// Differential entropy in bits of a Gaussian with the given variances.
inline double gaussian_entropy_bits(std::initializer_list<double> variances) {
  double nats = 0.0;
  for (double v : variances) nats += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * v);
  return nats / std::numbers::ln2;
}

// ---------------------------------------------------------------------------
// Linear-Gaussian scalar system for the entropy estimator:
//   x' ~ N(0, p0),  x = x' + N(0, q),  z = x + N(0, r).
// Particle draws for a seed are nested: the first n of a larger run are the
// particles of the smaller run.

struct LinearGaussian {
  double p0 = 1.0;
  double q = 0.25;
  double r = 0.5;

  double kalman_posterior_bits() const {
    const double pred = p0 + q;
    return gaussian_entropy_bits({pred * r / (pred + r)});
  }
  double predicted_bits() const { return gaussian_entropy_bits({p0 + q}); }

  // Returns the estimate with n particles; `measured` false gives the
  // no-measurement estimator.
  double estimate_bits(std::size_t n, std::uint64_t seed, bool measured = true,
                       std::size_t pool = 4000) const {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    const double truth = std::sqrt(p0 + q) * unit(gen);
    const double z = truth + std::sqrt(r) * unit(gen);
    std::vector<double> prev(std::max(n, pool)), cur(prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i) {
      prev[i] = std::sqrt(p0) * unit(gen);
      cur[i] = prev[i] + std::sqrt(q) * unit(gen);
    }
    prev.resize(n);
    cur.resize(n);

    const double lq = -0.5 * std::log(2.0 * std::numbers::pi * q);
    auto log_tr = [&](std::size_t i, std::size_t j) {
      const double d = cur[i] - prev[j];
      return lq - 0.5 * d * d / q;
    };
    std::vector<double> w_prev(n, 1.0 / static_cast<double>(n));
    if (!measured) return info::boers_entropy_bits({}, w_prev, w_prev, log_tr);

    std::vector<double> log_lik(n), w(n);
    double hi = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = z - cur[i];
      log_lik[i] = -0.5 * std::log(2.0 * std::numbers::pi * r) - 0.5 * d * d / r;
      hi = std::max(hi, log_lik[i]);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (w[i] = std::exp(log_lik[i] - hi));
    for (auto& v : w) v /= s;
    return info::boers_entropy_bits(log_lik, w_prev, w, log_tr);
  }
};

// ---------------------------------------------------------------------------
// Particle filter against GridFilter: straight eastward motion along a map
// 25000 + g x, heading held exactly. Returns the largest |mean difference|
// over the run.

struct RampTracking {
  double g = 200.0;
  double sigma_z = 150.0;
  double sigma_x = 0.01;
  double prior = 0.3;
  double cell = 0.01;
  std::size_t particles = 1000;
  int steps = 100;

  MagMap map() const {
    const double x0 = -3.0, x1 = 8.0, h = 0.05;
    const auto w = static_cast<std::size_t>(std::lround((x1 - x0) / h)) + 1;
    std::vector<double> v;
    for (int j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < w; ++i) v.push_back(25000.0 + g * (x0 + h * static_cast<double>(i)));
    return MagMap({{x0, -50.0}, h, w, 2}, v);
  }

  double worst_gap(std::uint64_t seed) const {
    const MagMap m = map();
    auto field = [&](double x) { return 25000.0 + g * x; };
    const MotionNoise motion{sigma_x, sigma_x, 0.0};
    const ControlInput u{0.2, 0.0};
    const double dt = 0.1;
    Rng truth_rng(1000 + seed);
    Pose truth{0.0, 0.0, 0.0};
    const Eigen::Matrix3d cov = Eigen::Vector3d(prior * prior, prior * prior, 0.0).asDiagonal();
    auto b = init_belief({0, 0, 0}, cov, particles, seed);
    GridFilter grid(-3.0, 6.0, cell, 0.0, prior);
    double worst = 0.0;
    for (int k = 0; k < steps; ++k) {
      truth = step_motion(truth, u, dt, motion, truth_rng);
      const double z = field(truth.x) + truth_rng.gaussian(sigma_z);
      b = update(predict(b, u, dt, motion), z, m, {sigma_z});
      b = resample_if_needed(b, 0.5 * static_cast<double>(particles));
      grid.predict(u.v * dt, sigma_x);
      grid.update(z, sigma_z, field);
      worst = std::max(worst, std::abs(estimate(b).mean.x - grid.mean()));
    }
    return worst;
  }
};

}  // namespace magnav::oracle
