#pragma once

// Particle-filter localization on a prior magnetic map.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "magnav/error.hpp"
#include "magnav/models.hpp"
#include "magnav/random.hpp"

namespace magnav {

struct ParticleBelief {
  std::vector<Pose> particles;
  std::vector<double> weights;
  Rng rng;

  std::size_t size() const { return particles.size(); }
};

struct GaussianSummary {
  Pose mean;
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();  // (x, y, theta)

  double positional_det() const {
    return covariance(0, 0) * covariance(1, 1) - covariance(0, 1) * covariance(1, 0);
  }
};

inline ParticleBelief init_belief(const Pose& prior_mean, const Eigen::Matrix3d& prior_cov,
                                  std::size_t n, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("particle count must be >= 2");
  if (!prior_cov.allFinite() || !prior_cov.isApprox(prior_cov.transpose(), 1e-12))
    throw InvalidArgument("prior covariance must be finite and symmetric");

  // LDLT tolerates the zero matrix; reject negative pivots as non-PSD.
  Eigen::LDLT<Eigen::Matrix3d> ldlt(prior_cov);
  const Eigen::Vector3d d = ldlt.vectorD();
  const double tol = 1e-12 * std::max(1.0, prior_cov.diagonal().cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || (d.array() < -tol).any())
    throw InvalidArgument("prior covariance is not positive semidefinite");
  // Factor L such that L L^T = prior_cov.
  const Eigen::Matrix3d factor = ldlt.transpositionsP().transpose() *
                                 Eigen::Matrix3d(ldlt.matrixL()) *
                                 d.cwiseMax(0.0).cwiseSqrt().asDiagonal();

  ParticleBelief b{{}, std::vector<double>(n, 1.0 / static_cast<double>(n)), Rng(seed)};
  b.particles.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d e;
    for (int k = 0; k < 3; ++k) e(k) = b.rng.gaussian();
    const Eigen::Vector3d offset = factor * e;
    b.particles.push_back({prior_mean.x + offset(0), prior_mean.y + offset(1),
                           wrap_angle(prior_mean.theta + offset(2))});
  }
  return b;
}

inline ParticleBelief predict(ParticleBelief b, const ControlInput& u, double dt,
                              const MotionNoise& noise) {
  for (auto& p : b.particles) p = step_motion(p, u, dt, noise, b.rng);
  return b;
}

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

}  // namespace detail

inline constexpr double kWeightCollapseFloor = 1e-300;

// Bayes weighting by the measurement likelihood, in log space. Throws
// WeightCollapseError when the unnormalized mass falls below 1e-300.
inline ParticleBelief update(ParticleBelief b, double z, const MagMap& map,
                             const SensorNoise& noise) {
  std::vector<double> log_w(b.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    log_w[i] = std::log(b.weights[i]) + log_measurement_likelihood(z, b.particles[i], map, noise);
  const double log_total = detail::log_sum_exp(log_w);
  if (!(log_total >= std::log(kWeightCollapseFloor)))
    throw WeightCollapseError("particle weights collapsed (log mass " + std::to_string(log_total) +
                              ")");
  for (std::size_t i = 0; i < b.size(); ++i) b.weights[i] = std::exp(log_w[i] - log_total);
  return b;
}

inline void reset_weights(ParticleBelief& b) {
  std::fill(b.weights.begin(), b.weights.end(), 1.0 / static_cast<double>(b.size()));
}

inline double effective_sample_size(const ParticleBelief& b) {
  double sq = 0.0;
  for (double w : b.weights) sq += w * w;
  return 1.0 / sq;
}

// Systematic (low-variance) resampling: one uniform offset, N evenly spaced
// pointers. Returns the parent index of each offspring.
inline std::vector<std::size_t> systematic_indices(const std::vector<double>& weights,
                                                   std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx;
  idx.reserve(count);
  const double step = 1.0 / static_cast<double>(count);
  const double u0 = rng.uniform() * step;
  double cumulative = weights.empty() ? 0.0 : weights[0];
  std::size_t i = 0;
  for (std::size_t m = 0; m < count; ++m) {
    const double u = u0 + static_cast<double>(m) * step;
    while (u > cumulative && i + 1 < weights.size()) cumulative += weights[++i];
    idx.push_back(i);
  }
  return idx;
}

inline ParticleBelief resample(ParticleBelief b) {
  const auto idx = systematic_indices(b.weights, b.size(), b.rng);
  std::vector<Pose> offspring;
  offspring.reserve(b.size());
  for (std::size_t i : idx) offspring.push_back(b.particles[i]);
  b.particles = std::move(offspring);
  reset_weights(b);
  return b;
}

// Resamples when ESS < threshold. `resampled` reports whether it happened.
inline ParticleBelief resample_if_needed(ParticleBelief b, double threshold,
                                         bool* resampled = nullptr) {
  const bool trigger = effective_sample_size(b) < threshold;
  if (resampled) *resampled = trigger;
  return trigger ? resample(std::move(b)) : b;
}

inline GaussianSummary estimate(const ParticleBelief& b) {
  GaussianSummary s;
  double mx = 0.0, my = 0.0, ms = 0.0, mc = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double w = b.weights[i];
    const Pose& p = b.particles[i];
    mx += w * p.x;
    my += w * p.y;
    ms += w * std::sin(p.theta);
    mc += w * std::cos(p.theta);
  }
  s.mean = {mx, my, wrap_angle(std::atan2(ms, mc))};

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const Pose& p = b.particles[i];
    const Eigen::Vector3d r(p.x - mx, p.y - my, wrap_angle(p.theta - s.mean.theta));
    cov.noalias() += b.weights[i] * r * r.transpose();
  }
  s.covariance = 0.5 * (cov + cov.transpose());
  return s;
}

}  // namespace magnav
