#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

#include "metatrace/env.hpp"
#include "metatrace/model.hpp"
#include "metatrace/rng.hpp"

namespace metatrace {

// Raised when weights or tuner state stop being finite.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Online AC(lambda): accumulating eligibility trace over dU/dw =
// dV/dw + (1/2) dlogpi/dw, weight update w += alpha . (z delta + psi dH/dw).
class AcLearner {
 public:
  AcLearner(Eigen::VectorXd initial_params, double gamma, double lambda, double psi)
      : w_(std::move(initial_params)),
        z_(Eigen::VectorXd::Zero(w_.size())),
        gamma_(gamma),
        lambda_(lambda),
        psi_(psi) {}

  void start_episode() { z_.setZero(); }

  double td_error(const GradientBundle& g, double reward) const {
    return reward + gamma_ * g.value_s_next - g.value_s;
  }

  void accumulate_trace(const GradientBundle& g) {
    z_ = gamma_ * lambda_ * z_ + g.grad_v_s + 0.5 * g.grad_logpi;
  }

  void apply_update(double alpha, double delta, const GradientBundle& g) {
    w_ += alpha * (delta * z_ + psi_ * g.grad_entropy);
    check_finite();
  }

  void apply_update(const Eigen::ArrayXd& alpha, double delta, const GradientBundle& g) {
    w_.array() += alpha * (delta * z_.array() + psi_ * g.grad_entropy.array());
    check_finite();
  }

  const Eigen::VectorXd& params() const { return w_; }
  Eigen::VectorXd& params() { return w_; }
  const Eigen::VectorXd& trace() const { return z_; }
  double gamma() const { return gamma_; }
  double lambda() const { return lambda_; }
  double psi() const { return psi_; }

 private:
  void check_finite() const {
    if (!w_.allFinite()) throw DivergenceError("AcLearner: non-finite weights");
  }

  Eigen::VectorXd w_;
  Eigen::VectorXd z_;
  double gamma_;
  double lambda_;
  double psi_;
};

struct EpisodeRecord {
  double total_reward = 0.0;
  int steps = 0;
};

// Pass-through "encoders" so run_episode can treat the plain, drifting and
// raw-state observation paths uniformly. on_env_step() runs once per
// environment transition, before the new state is encoded.
class TileEncoder {
 public:
  SparseFeatures encode(const McState& s) const { return coder_.encode(s.position, s.velocity); }
  void on_env_step() {}

 private:
  TileCoder coder_;
};

class DriftEncoder {
 public:
  DriftEncoder(double drift_rate, int n_noisy, std::uint64_t seed)
      : drift_(drift_rate, n_noisy, seed) {}

  SparseFeatures encode(const McState& s) {
    return drift_.encode(coder_.encode(s.position, s.velocity));
  }
  void on_env_step() { drift_.drift_step(); }
  DriftFeatures& drift() { return drift_; }

 private:
  TileCoder coder_;
  DriftFeatures drift_;
};

class RawStateEncoder {
 public:
  Eigen::Vector2d encode(const McState& s) const { return MlpModel::observe(s); }
  void on_env_step() {}
};

// One online episode. Per step: encode S_t (carried over), sample A_t,
// env step, gradients and TD error, trace accumulation, tuner step, weight
// update with the alpha the tuner just emitted. Episode-local tuner state
// is reset at episode start.
template <class Model, class Encoder, class Tuner>
EpisodeRecord run_episode(AcLearner& learner, MountainCar& env, const Model& model,
                          Encoder& encoder, Tuner& tuner, Rng& rng,
                          GradientBundle& bundle) {
  learner.start_episode();
  tuner.episode_reset();

  McState state = env.reset(rng);
  auto obs = encoder.encode(state);

  EpisodeRecord rec;
  while (true) {
    auto [value, dist] = model.evaluate(learner.params(), obs);
    const int action = sample_action(dist, rng);
    const StepOutcome out = env.step(action);

    encoder.on_env_step();
    auto obs_next = encoder.encode(out.next_state);

    model.gradients(learner.params(), obs, obs_next, action, out.terminal, bundle);
    const double delta = learner.td_error(bundle, out.reward);
    learner.accumulate_trace(bundle);
    const auto& alpha = tuner.step(delta, learner.trace(), bundle);
    learner.apply_update(alpha, delta, bundle);

    rec.total_reward += out.reward;
    ++rec.steps;
    if (out.terminal) break;
    obs = std::move(obs_next);
  }
  return rec;
}

template <class Model, class Encoder, class Tuner>
EpisodeRecord run_episode(AcLearner& learner, MountainCar& env, const Model& model,
                          Encoder& encoder, Tuner& tuner, Rng& rng) {
  GradientBundle bundle;
  return run_episode(learner, env, model, encoder, tuner, rng, bundle);
}

}  // namespace metatrace
