#pragma once

// Particle approximations of belief entropy and expected entropy reduction.
//
// With particles x_i at step k descending from x_i at step k-1, prior weights
// w'_j (step k-1) and posterior weights w_i (step k), the posterior entropy
// in bits is estimated as
//
//   H ~= log( sum_i p(z|x_i) w'_i )
//        - sum_i w_i log( p(z|x_i) * sum_j p(x_i | x'_j) w'_j )
//
// and, with no measurement (w_i = w'_i),
//
//   H ~= - sum_i w_i log( sum_j p(x_i | x'_j) w'_j ).
//
// The second sum is weighted by the posterior weights, which makes the
// estimator consistent: the inner mixture approximates the predictive density
// and the outer weighted sum approximates an expectation under the posterior.
// All sums run in log space.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "magnav/error.hpp"
#include "magnav/magmap.hpp"
#include "magnav/models.hpp"
#include "magnav/pflocal.hpp"
#include "magnav/random.hpp"

namespace magnav {

struct EntropyEstimate {
  double bits = 0.0;
  std::size_t n_particles = 0;
  bool with_measurement = false;
};

// Control, step and noise models that produced `cur` from `prev`.
struct StepContext {
  ControlInput u;
  double dt = 0.1;
  NoiseModels noise;
};

namespace info {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Running log-sum-exp that keeps the reduction order fixed.
class LogSumExp {
 public:
  void add(double x) {
    if (x == kNegInf) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const { return max_ == kNegInf ? kNegInf : max_ + std::log(sum_); }

 private:
  double max_ = kNegInf;
  double sum_ = 0.0;
};

inline double safe_log(double w) { return w > 0.0 ? std::log(w) : kNegInf; }

// log of the predictive mixture sum_j p(x_i | x'_j) w'_j for every i.
template <class LogTransition>
std::vector<double> log_predictive(std::size_t n, std::span<const double> prev_weights,
                                   LogTransition&& log_transition) {
  std::vector<double> log_prev(prev_weights.size());
  for (std::size_t j = 0; j < prev_weights.size(); ++j) log_prev[j] = safe_log(prev_weights[j]);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    LogSumExp acc;
    for (std::size_t j = 0; j < prev_weights.size(); ++j) {
      if (log_prev[j] == kNegInf) continue;
      acc.add(log_transition(i, j) + log_prev[j]);
    }
    out[i] = acc.value();
  }
  return out;
}

// Entropy in bits from precomputed log predictive densities.
// `log_likelihood` empty means no measurement.
inline double entropy_from_predictive(std::span<const double> log_likelihood,
                                      std::span<const double> prev_weights,
                                      std::span<const double> cur_weights,
                                      std::span<const double> log_pred) {
  const std::size_t n = cur_weights.size();
  const bool measured = !log_likelihood.empty();
  if (measured && (log_likelihood.size() != n || prev_weights.size() != n))
    throw InvalidArgument("entropy: likelihood, prior and posterior sizes differ");

  double nats = 0.0;
  if (measured) {
    LogSumExp evidence;
    for (std::size_t i = 0; i < n; ++i) evidence.add(log_likelihood[i] + safe_log(prev_weights[i]));
    nats = evidence.value();
    if (!std::isfinite(nats)) throw DegenerateEntropyError("entropy: zero measurement evidence");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double w = cur_weights[i];
    if (!(w > 0.0)) continue;
    const double term = log_pred[i] + (measured ? log_likelihood[i] : 0.0);
    if (!std::isfinite(term))
      throw DegenerateEntropyError("entropy: particle " + std::to_string(i) +
                                   " has zero predictive density");
    nats -= w * term;
  }
  if (!std::isfinite(nats)) throw DegenerateEntropyError("entropy estimate is not finite");
  return nats / std::numbers::ln2;
}

// Generic estimator. log_transition(i, j) = log p(x_i | x'_j).
template <class LogTransition>
double boers_entropy_bits(std::span<const double> log_likelihood,
                          std::span<const double> prev_weights,
                          std::span<const double> cur_weights, LogTransition&& log_transition) {
  const auto log_pred = log_predictive(cur_weights.size(), prev_weights,
                                       std::forward<LogTransition>(log_transition));
  return entropy_from_predictive(log_likelihood, prev_weights, cur_weights, log_pred);
}

}  // namespace info

namespace detail {

inline void check_consecutive(const ParticleBelief& prev, const ParticleBelief& cur) {
  if (prev.size() != cur.size() || prev.weights.size() != cur.weights.size())
    throw InvalidArgument("entropy: consecutive beliefs must have the same particle count");
}

inline auto pose_transition(const ParticleBelief& prev, const ParticleBelief& cur,
                            const StepContext& ctx) {
  if (ctx.noise.motion.degenerate())
    throw InvalidArgument("entropy needs all motion sigmas > 0");
  // Noise-free predictions of the parents, computed once.
  std::vector<Pose> means;
  means.reserve(prev.size());
  for (const auto& p : prev.particles) means.push_back(predict_mean(p, ctx.u, ctx.dt));
  return [&cur, means = std::move(means), kernel = PoseResidualKernel(ctx.noise.motion)](
             std::size_t i, std::size_t j) {
    const Pose& x = cur.particles[i];
    const Pose& m = means[j];
    return kernel.log_density(x.x - m.x, x.y - m.y, x.theta - m.theta);
  };
}

}  // namespace detail

// Posterior entropy after measurement z. `cur` must be update(predict(prev)).
inline EntropyEstimate entropy_posterior(const ParticleBelief& prev, const ParticleBelief& cur,
                                         double z, const MagMap& map, const StepContext& ctx) {
  detail::check_consecutive(prev, cur);
  std::vector<double> log_lik(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i)
    log_lik[i] = log_measurement_likelihood(z, cur.particles[i], map, ctx.noise.sensor);
  const double bits = info::boers_entropy_bits(log_lik, prev.weights, cur.weights,
                                               detail::pose_transition(prev, cur, ctx));
  return {bits, cur.size(), true};
}

// Entropy of a predicted belief (no measurement). `cur` must be predict(prev).
inline EntropyEstimate entropy_predicted(const ParticleBelief& prev, const ParticleBelief& cur,
                                         const StepContext& ctx) {
  detail::check_consecutive(prev, cur);
  const double bits = info::boers_entropy_bits({}, prev.weights, cur.weights,
                                               detail::pose_transition(prev, cur, ctx));
  return {bits, cur.size(), false};
}

// M pose hypotheses drawn from a belief and rolled out under one action.
struct EerHypothesisSet {
  std::vector<Pose> start;       // x_k^[j]
  std::vector<double> weights;   // w_k^[j], normalized
  std::vector<Pose> end;         // noise-free rollout after horizon_steps
  std::vector<double> predicted; // map value at each end pose (nT)
  std::vector<double> log_penalty;  // out-of-map penalty at each end pose
  std::size_t horizon_steps = 0;

  std::size_t size() const { return start.size(); }
};

struct EerValue {
  double bits = 0.0;
  ControlInput action;
};

struct EerOptions {
  std::size_t m_count = 30;
  std::size_t horizon_steps = 10;
  double dt = 0.1;
  // Sum the reduction over every step of the rollout instead of using only
  // the terminal step.
  bool cumulative = false;

  void validate() const {
    if (m_count < 2) throw InvalidArgument("eer.m_count must be >= 2");
    if (horizon_steps < 1) throw InvalidArgument("eer.horizon_steps must be >= 1");
    if (!(dt > 0.0)) throw InvalidArgument("eer dt must be > 0");
  }
};

// Subsamples M hypotheses proportionally to weight (systematic draw); the
// hypotheses carry uniform weights.
inline EerHypothesisSet draw_hypotheses(const ParticleBelief& b, std::size_t m_count, Rng& rng) {
  if (m_count < 2) throw InvalidArgument("hypothesis count must be >= 2");
  if (m_count > b.size()) throw InvalidArgument("hypothesis count exceeds particle count");
  EerHypothesisSet h;
  for (std::size_t i : systematic_indices(b.weights, m_count, rng)) h.start.push_back(b.particles[i]);
  h.weights.assign(m_count, 1.0 / static_cast<double>(m_count));
  h.end = h.start;
  h.predicted.assign(m_count, 0.0);
  h.log_penalty.assign(m_count, 0.0);
  return h;
}

// Advances the end poses by `steps` noise-free steps under `a` and refreshes
// the predicted measurements.
inline void roll_forward(EerHypothesisSet& h, const ControlInput& a, double dt, std::size_t steps,
                         const MagMap& map) {
  for (std::size_t j = 0; j < h.size(); ++j) {
    for (std::size_t s = 0; s < steps; ++s) h.end[j] = predict_mean(h.end[j], a, dt);
    h.predicted[j] = clamped_field(map, h.end[j], h.log_penalty[j]);
  }
  h.horizon_steps += steps;
}

inline EerHypothesisSet propagate(EerHypothesisSet h, const ControlInput& a, double dt,
                                  std::size_t horizon, const MagMap& map) {
  h.end = h.start;
  h.horizon_steps = 0;
  roll_forward(h, a, dt, horizon, map);
  return h;
}

namespace detail {

// Horizon transition density: Gaussian about the noise-free rollout of the
// parent, with the per-step covariance accumulated over the horizon. For a
// one-step horizon this is exactly log_transition_density.
inline auto horizon_transition(const EerHypothesisSet& h, const MotionNoise& step_noise) {
  if (step_noise.degenerate()) throw InvalidArgument("EER needs all motion sigmas > 0");
  const double k = std::sqrt(static_cast<double>(std::max<std::size_t>(h.horizon_steps, 1)));
  const PoseResidualKernel kernel(
      MotionNoise{step_noise.sigma_x * k, step_noise.sigma_y * k, step_noise.sigma_theta * k});
  return [&h, kernel](std::size_t i, std::size_t l) {
    const Pose& x = h.end[i];
    const Pose& m = h.end[l];
    return kernel.log_density(x.x - m.x, x.y - m.y, x.theta - m.theta);
  };
}

inline std::vector<double> hypothesis_log_likelihoods(const EerHypothesisSet& h, double z,
                                                      const SensorNoise& sensor) {
  std::vector<double> out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i)
    out[i] = log_gaussian(z - h.predicted[i], sensor.sigma_z) + h.log_penalty[i];
  return out;
}

}  // namespace detail

// Entropy of the hypothesis belief at the rollout horizon after observing
// z_future there.
inline EntropyEstimate future_entropy(const EerHypothesisSet& h, double z_future, const MagMap&,
                                      const NoiseModels& noise) {
  const auto log_pred =
      info::log_predictive(h.size(), h.weights, detail::horizon_transition(h, noise.motion));
  const auto log_lik = detail::hypothesis_log_likelihoods(h, z_future, noise.sensor);

  std::vector<double> post(h.size());
  info::LogSumExp evidence;
  for (std::size_t i = 0; i < h.size(); ++i) evidence.add(log_lik[i] + info::safe_log(h.weights[i]));
  for (std::size_t i = 0; i < h.size(); ++i)
    post[i] = std::exp(log_lik[i] + info::safe_log(h.weights[i]) - evidence.value());

  return {info::entropy_from_predictive(log_lik, h.weights, post, log_pred), h.size(), true};
}

// Entropy reduction expected from the measurement at the rollout horizon:
//   H(no measurement) - sum_j p_j H(z^[j]),  p_j ∝ p(z^[j] | x^[j]),
// where z^[j] is the map value at hypothesis j. The p_j are normalized so the
// sum is an expectation over the representative measurements.
inline double expected_entropy_reduction(const EerHypothesisSet& h, const NoiseModels& noise) {
  const std::size_t m = h.size();
  const auto log_pred =
      info::log_predictive(m, h.weights, detail::horizon_transition(h, noise.motion));
  const double prior_bits = info::entropy_from_predictive({}, h.weights, h.weights, log_pred);

  std::vector<double> log_w(m);
  for (std::size_t i = 0; i < m; ++i) log_w[i] = info::safe_log(h.weights[i]);

  std::vector<double> future(m);
  std::vector<double> log_pz(m);
  std::vector<double> post(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto log_lik = detail::hypothesis_log_likelihoods(h, h.predicted[j], noise.sensor);
    info::LogSumExp evidence;
    for (std::size_t i = 0; i < m; ++i) evidence.add(log_lik[i] + log_w[i]);
    const double log_evidence = evidence.value();
    for (std::size_t i = 0; i < m; ++i) post[i] = std::exp(log_lik[i] + log_w[i] - log_evidence);
    future[j] = info::entropy_from_predictive(log_lik, h.weights, post, log_pred);
    log_pz[j] = log_lik[j];
  }

  info::LogSumExp norm;
  for (double v : log_pz) norm.add(v);
  double expected = 0.0;
  for (std::size_t j = 0; j < m; ++j) expected += std::exp(log_pz[j] - norm.value()) * future[j];
  return prior_bits - expected;
}

// EER of one action for a fixed hypothesis draw.
inline EerValue eer_for_hypotheses(const EerHypothesisSet& drawn, const ControlInput& a,
                                   const MagMap& map, const NoiseModels& noise,
                                   const EerOptions& opt) {
  opt.validate();
  EerHypothesisSet h = drawn;
  h.end = h.start;
  h.horizon_steps = 0;
  double bits = 0.0;
  if (opt.cumulative) {
    for (std::size_t s = 0; s < opt.horizon_steps; ++s) {
      roll_forward(h, a, opt.dt, 1, map);
      bits += expected_entropy_reduction(h, noise);
    }
  } else {
    roll_forward(h, a, opt.dt, opt.horizon_steps, map);
    bits = expected_entropy_reduction(h, noise);
  }
  if (!std::isfinite(bits)) throw DegenerateEntropyError("EER is not finite");
  return {bits, a};
}

inline EerValue eer(const ParticleBelief& b, const ControlInput& a, const MagMap& map,
                    const NoiseModels& noise, const EerOptions& opt, Rng& rng) {
  opt.validate();
  return eer_for_hypotheses(draw_hypotheses(b, opt.m_count, rng), a, map, noise, opt);
}

// Quartile by linear interpolation between order statistics.
inline double quantile_linear(std::vector<double> sorted_copy, double q) {
  std::sort(sorted_copy.begin(), sorted_copy.end());
  const double pos = q * static_cast<double>(sorted_copy.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted_copy.size() - 1);
  return sorted_copy[lo] + (pos - static_cast<double>(lo)) * (sorted_copy[hi] - sorted_copy[lo]);
}

struct IqrFences {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double v) const { return v >= lower && v <= upper; }
};

inline IqrFences iqr_fences(std::span<const double> series) {
  std::vector<double> v(series.begin(), series.end());
  const double q1 = quantile_linear(v, 0.25);
  const double q3 = quantile_linear(v, 0.75);
  const double iqr = q3 - q1;
  return {q1 - 1.5 * iqr, q3 + 1.5 * iqr};
}

// Replaces values outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR] with the most recent
// kept value. The first element is always kept.
inline std::vector<double> iqr_reject(std::span<const double> series) {
  if (series.size() < 4) throw InvalidArgument("iqr_reject needs at least 4 values");
  const IqrFences f = iqr_fences(series);
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t k = 1; k < out.size(); ++k)
    if (!f.contains(out[k])) out[k] = out[k - 1];
  return out;
}

}  // namespace magnav
