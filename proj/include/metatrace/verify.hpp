#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "metatrace/ac.hpp"
#include "metatrace/env.hpp"
#include "metatrace/meta.hpp"
#include "metatrace/model.hpp"
#include "metatrace/rng.hpp"

// Independent oracles for property tests: forward-view lambda returns,
// central finite differences, and a forced-action replay that measures the
// true sensitivity of the weights to the log step-size. The main library
// never includes this header; it is compiled into the test surface and the
// CLI `check` subcommand only.
namespace metatrace::verify {

struct Trajectory {
  std::vector<GradientBundle> bundles;  // carry value_s / value_s_next
  std::vector<double> rewards;
  std::vector<int> actions;
  bool terminal = true;
};

// Forward-view lambda returns by backward recursion, cross-checked against
// the delta-sum expansion G_t = V(S_t) + sum_k (gamma lambda)^(k-t) delta_k.
// The final bootstrap is the last step's value_s_next (zero at terminal).
inline Eigen::VectorXd forward_lambda_return(const Trajectory& traj, double gamma,
                                             double lambda, double tol = 1e-10) {
  const int T = static_cast<int>(traj.rewards.size());
  if (T == 0) throw std::invalid_argument("forward_lambda_return: empty trajectory");

  Eigen::VectorXd g(T);
  double g_next = traj.bundles.back().value_s_next;
  for (int t = T - 1; t >= 0; --t) {
    const double v_next = traj.bundles[t].value_s_next;
    g[t] = traj.rewards[t] + gamma * ((1.0 - lambda) * v_next + lambda * g_next);
    g_next = g[t];
  }

  // delta-sum route, accumulated backward
  double tail = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double delta = traj.rewards[t] + gamma * traj.bundles[t].value_s_next -
                         traj.bundles[t].value_s;
    tail = delta + gamma * lambda * tail;
    const double g_sum = traj.bundles[t].value_s + tail;
    if (std::abs(g_sum - g[t]) > tol)
      throw std::runtime_error("forward_lambda_return: recursion/delta-sum mismatch");
  }
  return g;
}

// Central difference of fn along parameter entry `index`.
inline double finite_diff(const std::function<double(const Eigen::VectorXd&)>& fn,
                          const Eigen::VectorXd& at, Eigen::Index index, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("finite_diff: eps must be positive");
  Eigen::VectorXd p = at;
  p[index] = at[index] + eps;
  const double hi = fn(p);
  p[index] = at[index] - eps;
  const double lo = fn(p);
  return (hi - lo) / (2.0 * eps);
}

struct HOracleResult {
  Eigen::VectorXd empirical_dw_dbeta;
  Eigen::VectorXd tuner_h;
  std::vector<int> actions;
};

// Runs two fixed-alpha linear AC(lambda) learners at exp(beta) and
// exp(beta + eps) over the same mountain-car stream with a forced
// identical action sequence, and in parallel the h trace a scalar tuner
// (mu = 0, so beta never moves) would have produced on the base stream.
// reward_override replaces the environment reward when set.
inline HOracleResult replay_h_oracle(double beta, double eps, int horizon,
                                     std::uint64_t seed, double gamma = 0.99,
                                     double lambda = 0.8,
                                     std::optional<double> reward_override = {}) {
  const TileCoder coder;
  const LinearModel model(TileCoder::kDim);
  const int n = model.param_dim();

  TunerConfig tcfg;
  tcfg.mu = 0.0;
  tcfg.gamma = gamma;
  tcfg.lambda = lambda;
  tcfg.normalized = false;  // beta must stay put while h accumulates

  // Base pass: follow the softmax policy, record actions, track h.
  std::vector<int> actions;
  HOracleResult res;
  {
    Rng rng(seed);
    MountainCar env;
    AcLearner learner(Eigen::VectorXd::Zero(n), gamma, lambda, 0.0);
    ScalarMetatrace tuner(n, std::exp(beta), tcfg);
    tuner.episode_reset();
    McState s = env.reset(rng);
    SparseFeatures obs = coder.encode(s.position, s.velocity);
    GradientBundle bundle;
    for (int t = 0; t < horizon; ++t) {
      auto [value, dist] = model.evaluate(learner.params(), obs);
      const int a = sample_action(dist, rng);
      actions.push_back(a);
      StepOutcome out = env.step(a);
      if (reward_override) out.reward = *reward_override;
      SparseFeatures obs_next =
          coder.encode(out.next_state.position, out.next_state.velocity);
      model.gradients(learner.params(), obs, obs_next, a, out.terminal, bundle);
      const double delta = learner.td_error(bundle, out.reward);
      learner.accumulate_trace(bundle);
      const double alpha = tuner.step(delta, learner.trace(), bundle);
      learner.apply_update(alpha, delta, bundle);
      if (out.terminal) break;
      obs = std::move(obs_next);
    }
    res.tuner_h = tuner.h();
    res.empirical_dw_dbeta = learner.params();  // w(beta), reused below
  }

  // Perturbed pass: identical start state and forced actions, alpha bumped.
  {
    Rng rng(seed);
    MountainCar env;
    AcLearner learner(Eigen::VectorXd::Zero(n), gamma, lambda, 0.0);
    const double alpha = std::exp(beta + eps);
    McState s = env.reset(rng);
    SparseFeatures obs = coder.encode(s.position, s.velocity);
    GradientBundle bundle;
    for (int a : actions) {
      StepOutcome out = env.step(a);
      if (reward_override) out.reward = *reward_override;
      SparseFeatures obs_next =
          coder.encode(out.next_state.position, out.next_state.velocity);
      model.gradients(learner.params(), obs, obs_next, a, out.terminal, bundle);
      const double delta = learner.td_error(bundle, out.reward);
      learner.accumulate_trace(bundle);
      learner.apply_update(alpha, delta, bundle);
      if (out.terminal) break;
      obs = std::move(obs_next);
    }
    res.empirical_dw_dbeta = (learner.params() - res.empirical_dw_dbeta) / eps;
  }

  res.actions = std::move(actions);
  return res;
}

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace metatrace::verify
