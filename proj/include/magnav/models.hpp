#pragma once

// Unicycle motion model and Gaussian scalar-field sensor model.

#include <cmath>
#include <numbers>

#include "magnav/error.hpp"
#include "magnav/magmap.hpp"
#include "magnav/random.hpp"

namespace magnav {

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

struct Pose {
  double x = 0.0;      // m
  double y = 0.0;      // m
  double theta = 0.0;  // rad, (-pi, pi]

  Vec2 position() const { return {x, y}; }
};

struct ControlInput {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
};

// Per-step standard deviations of the additive motion noise.
struct MotionNoise {
  double sigma_x = 0.0;      // m
  double sigma_y = 0.0;      // m
  double sigma_theta = 0.0;  // rad

  static MotionNoise from_degrees(double sx, double sy, double stheta_deg) {
    return {sx, sy, deg2rad(stheta_deg)};
  }

  bool degenerate() const { return !(sigma_x > 0.0 && sigma_y > 0.0 && sigma_theta > 0.0); }

  void validate() const {
    if (!(sigma_x >= 0.0) || !(sigma_y >= 0.0) || !(sigma_theta >= 0.0))
      throw InvalidArgument("motion noise sigmas must be >= 0");
  }
};

struct SensorNoise {
  double sigma_z = 150.0;  // nT

  void validate() const {
    if (!(sigma_z > 0.0)) throw InvalidArgument("sensor sigma_z must be > 0");
  }
};

struct NoiseModels {
  MotionNoise motion;
  SensorNoise sensor;
};

// Likelihood multiplier applied to poses outside the map extent; the field
// is then evaluated at the nearest in-map point.
inline constexpr double kOutOfMapPenalty = 1e-3;

inline Pose predict_mean(const Pose& p, const ControlInput& u, double dt) {
  return {p.x + u.v * std::cos(p.theta) * dt, p.y + u.v * std::sin(p.theta) * dt,
          wrap_angle(p.theta + u.omega * dt)};
}

inline Pose step_motion(const Pose& p, const ControlInput& u, double dt, const MotionNoise& noise,
                        Rng& rng) {
  if (!(dt > 0.0)) throw InvalidArgument("step_motion: dt must be > 0");
  const double ex = rng.gaussian(noise.sigma_x);
  const double ey = rng.gaussian(noise.sigma_y);
  const double et = rng.gaussian(noise.sigma_theta);
  return {p.x + u.v * std::cos(p.theta) * dt + ex, p.y + u.v * std::sin(p.theta) * dt + ey,
          wrap_angle(p.theta + u.omega * dt + et)};
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))

inline double log_gaussian(double residual, double sigma) {
  const double r = residual / sigma;
  return -0.5 * r * r - std::log(sigma) - kLogSqrt2Pi;
}

// Log density of a pose residual under independent Gaussians, with the
// angular residual wrapped first. Normalizers are precomputed because the
// entropy estimators evaluate this for every particle pair.
class PoseResidualKernel {
 public:
  explicit PoseResidualKernel(const MotionNoise& noise)
      : inv_x_(1.0 / noise.sigma_x),
        inv_y_(1.0 / noise.sigma_y),
        inv_t_(1.0 / noise.sigma_theta),
        log_norm_(-std::log(noise.sigma_x) - std::log(noise.sigma_y) -
                  std::log(noise.sigma_theta) - 3.0 * kLogSqrt2Pi) {}

  double log_density(double dx, double dy, double dtheta) const {
    if (dtheta > kPi || dtheta <= -kPi) dtheta = wrap_angle(dtheta);
    const double a = dx * inv_x_;
    const double b = dy * inv_y_;
    const double c = dtheta * inv_t_;
    return log_norm_ - 0.5 * (a * a + b * b + c * c);
  }

 private:
  double inv_x_;
  double inv_y_;
  double inv_t_;
  double log_norm_;
};

inline double log_residual_density(double dx, double dy, double dtheta, const MotionNoise& noise) {
  return PoseResidualKernel(noise).log_density(dx, dy, dtheta);
}

inline double log_transition_density(const Pose& next, const Pose& p, const ControlInput& u,
                                     double dt, const MotionNoise& noise) {
  if (noise.degenerate())
    throw InvalidArgument("transition density needs all motion sigmas > 0");
  const Pose mean = predict_mean(p, u, dt);
  return log_residual_density(next.x - mean.x, next.y - mean.y, next.theta - mean.theta, noise);
}

inline double transition_density(const Pose& next, const Pose& p, const ControlInput& u, double dt,
                                 const MotionNoise& noise) {
  return std::exp(log_transition_density(next, p, u, dt, noise));
}

// Field at the pose, following the out-of-map clamp policy. Returns the log
// of the penalty factor through `log_penalty` (0 inside the map).
inline double clamped_field(const MagMap& map, const Pose& p, double& log_penalty) {
  const Vec2 q = p.position();
  if (map.contains(q)) {
    log_penalty = 0.0;
    return map.sample(q);
  }
  log_penalty = std::log(kOutOfMapPenalty);
  return map.sample(map.clamp(q));
}

inline double log_measurement_likelihood(double z, const Pose& p, const MagMap& map,
                                         const SensorNoise& noise) {
  double log_penalty = 0.0;
  const double mean = clamped_field(map, p, log_penalty);
  return log_gaussian(z - mean, noise.sigma_z) + log_penalty;
}

inline double measurement_likelihood(double z, const Pose& p, const MagMap& map,
                                     const SensorNoise& noise) {
  return std::exp(log_measurement_likelihood(z, p, map, noise));
}

// sigma_z == 0 is accepted here and yields the noiseless map value.
inline double simulate_measurement(const Pose& p, const MagMap& map, const SensorNoise& noise,
                                   Rng& rng) {
  const double mean = map.sample(p.position());
  return mean + rng.gaussian(noise.sigma_z);
}

}  // namespace magnav
