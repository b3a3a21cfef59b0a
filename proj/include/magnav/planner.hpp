#pragma once

// Receding-horizon action selection: each candidate action is scored by
//   J(a) = w_h * alpha^EER(a) + w_d * d(a)
// and the lowest-cost action is executed.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "magnav/error.hpp"
#include "magnav/infogain.hpp"
#include "magnav/magmap.hpp"
#include "magnav/models.hpp"
#include "magnav/pflocal.hpp"
#include "magnav/random.hpp"

namespace magnav {

struct ActionSet {
  std::vector<ControlInput> actions;

  // Constant linear speed, one action per angular rate (deg/s).
  static ActionSet from_rates_deg(double v, std::span<const double> omegas_deg) {
    ActionSet set;
    for (double w : omegas_deg) set.actions.push_back({v, deg2rad(w)});
    set.validate();
    return set;
  }

  std::size_t size() const { return actions.size(); }

  void validate() const {
    if (actions.empty()) throw InvalidArgument("action set must not be empty");
    for (const auto& a : actions) {
      if (!std::isfinite(a.v) || !std::isfinite(a.omega))
        throw InvalidArgument("actions must be finite");
      if (a.v != actions.front().v)
        throw InvalidArgument("all actions must share the same linear speed");
    }
  }
};

struct PlannerWeights {
  double w_h = 0.0;
  double w_d = 1.0 / 500.0;
  double alpha = 0.9;

  void validate() const {
    if (!(w_h >= 0.0) || !std::isfinite(w_h)) throw InvalidArgument("w_h must be >= 0");
    if (!(w_d > 0.0) || !std::isfinite(w_d)) throw InvalidArgument("w_d must be > 0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  }
};

struct Goal {
  Vec2 position;
  double arrival_radius = 0.1;  // m
};

// Position one step ahead after turning first, as used for the distance term.
inline Vec2 expected_position(const Pose& p, const ControlInput& a, double dt) {
  const double heading = p.theta + a.omega * dt;
  return {p.x + a.v * dt * std::cos(heading), p.y + a.v * dt * std::sin(heading)};
}

inline double expected_distance(const Pose& p, const ControlInput& a, const Goal& goal, double dt) {
  const Vec2 e = expected_position(p, a, dt);
  return std::hypot(e.x - goal.position.x, e.y - goal.position.y);
}

inline double action_cost(double eer_bits, double dist_m, const PlannerWeights& w) {
  return w.w_h * std::pow(w.alpha, eer_bits) + w.w_d * dist_m;
}

// Where the distance term is evaluated: at the weighted-mean pose, or as the
// weighted expectation over particles.
enum class DistanceMode { kMeanPose, kParticleExpectation };

struct PlannerParams {
  PlannerWeights weights;
  EerOptions eer;
  DistanceMode distance_mode = DistanceMode::kMeanPose;
};

struct ActionEvaluation {
  ControlInput action;
  double eer = 0.0;       // bits
  double distance = 0.0;  // m
  double cost = 0.0;      // +inf when the evaluation failed
  std::string error;
};

struct Selection {
  std::size_t index = 0;
  ControlInput action;
  std::vector<ActionEvaluation> evaluations;
};

// Scores every action against one shared hypothesis draw and returns the
// argmin. Ties go to the lowest action index.
inline Selection select_action(const ParticleBelief& b, const Goal& goal, const ActionSet& aset,
                               const PlannerParams& params, const MagMap& map,
                               const NoiseModels& noise, Rng& hypothesis_rng) {
  aset.validate();
  params.weights.validate();
  params.eer.validate();

  const GaussianSummary est = estimate(b);
  const EerHypothesisSet drawn = draw_hypotheses(b, params.eer.m_count, hypothesis_rng);

  Selection sel;
  sel.evaluations.reserve(aset.size());
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t j = 0; j < aset.size(); ++j) {
    ActionEvaluation ev;
    ev.action = aset.actions[j];
    try {
      ev.eer = eer_for_hypotheses(drawn, ev.action, map, noise, params.eer).bits;
      if (params.distance_mode == DistanceMode::kMeanPose) {
        ev.distance = expected_distance(est.mean, ev.action, goal, params.eer.dt);
      } else {
        ev.distance = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i)
          ev.distance +=
              b.weights[i] * expected_distance(b.particles[i], ev.action, goal, params.eer.dt);
      }
      ev.cost = action_cost(ev.eer, ev.distance, params.weights);
      if (!std::isfinite(ev.cost)) throw DegenerateEntropyError("action cost is not finite");
    } catch (const Error& e) {
      ev.cost = std::numeric_limits<double>::infinity();
      ev.error = e.what();
    }
    if (!found || ev.cost < best) {
      best = ev.cost;
      sel.index = j;
      found = true;
    }
    sel.evaluations.push_back(std::move(ev));
  }
  sel.action = aset.actions[sel.index];
  return sel;
}

}  // namespace magnav
