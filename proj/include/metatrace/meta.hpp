#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "metatrace/ac.hpp"
#include "metatrace/model.hpp"

namespace metatrace {

struct TunerConfig {
  double mu = 0.0;
  double gamma = 0.99;
  double lambda = 0.8;
  double psi = 0.0;
  // When false, the running-max normalization of the beta update and the
  // effective step-size clipping are both disabled and beta moves by the
  // raw mu * Delta_beta.
  bool normalized = true;

  double gamma_lambda() const { return gamma * lambda; }
};

// No-tuning baseline: constant alpha, ignores everything it is fed.
class FixedStepSize {
 public:
  explicit FixedStepSize(double alpha0) : alpha_(alpha0) {}

  void episode_reset() {}
  double step(double, const Eigen::VectorXd&, const GradientBundle&) { return alpha_; }
  double alpha() const { return alpha_; }
  double beta() const { return std::log(alpha_); }

 private:
  double alpha_;
};

// Single log-step-size beta shared by all weights, tuned by meta-gradient
// descent with a meta eligibility trace z_beta and sensitivity trace
// h ~ dw/dbeta. beta, h and the running maximum v persist across episodes;
// z_beta and the effective step-size maximum u are episodic.
class ScalarMetatrace {
 public:
  ScalarMetatrace(Eigen::Index n, double alpha0, const TunerConfig& cfg)
      : cfg_(cfg), beta_(std::log(alpha0)), alpha_(alpha0), h_(Eigen::VectorXd::Zero(n)) {}

  void episode_reset() {
    z_beta_ = 0.0;
    u_ = 0.0;
  }

  double step(double delta, const Eigen::VectorXd& z, const GradientBundle& g) {
    const double gl = cfg_.gamma_lambda();
    grad_u_ = g.grad_v_s + 0.5 * g.grad_logpi;

    z_beta_ = gl * z_beta_ + grad_u_.dot(h_);
    const double dbeta = z_beta_ * delta + cfg_.psi * g.grad_entropy.dot(h_);

    // alpha = exp(beta) is cached and only recomputed when beta moves, so
    // mu = 0 keeps the exact alpha0 the caller handed in.
    const double beta_before = beta_;
    if (cfg_.normalized) {
      v_ = std::max(std::abs(dbeta), v_ + cfg_.mu * (std::abs(dbeta) - v_));
      beta_ += cfg_.mu * dbeta / (v_ > 0.0 ? v_ : 1.0);
      if (beta_ != beta_before) alpha_ = std::exp(beta_);
      const double eff = alpha_ * grad_u_.squaredNorm();
      u_ = std::max(eff, u_ + (1.0 - gl) * (eff - u_));
      const double clip = std::max(u_, 1.0);
      if (clip > 1.0) {
        beta_ -= std::log(clip);
        alpha_ = std::exp(beta_);
      }
    } else {
      beta_ += cfg_.mu * dbeta;
      if (beta_ != beta_before) alpha_ = std::exp(beta_);
    }

    const double ddelta_h = (cfg_.gamma * g.grad_v_s_next - g.grad_v_s).dot(h_);
    h_ += alpha_ * (z * (delta + ddelta_h) + cfg_.psi * g.grad_entropy);

    if (!std::isfinite(beta_) || !std::isfinite(z_beta_))
      throw DivergenceError("ScalarMetatrace: non-finite tuner state");
    return alpha_;
  }

  double beta() const { return beta_; }
  double z_beta() const { return z_beta_; }
  double v() const { return v_; }
  double u() const { return u_; }
  const Eigen::VectorXd& h() const { return h_; }

 private:
  TunerConfig cfg_;
  double beta_;
  double alpha_;
  double z_beta_ = 0.0;
  double v_ = 0.0;
  double u_ = 0.0;
  Eigen::VectorXd h_;
  Eigen::VectorXd grad_u_;
};

// One log-step-size per weight; elementwise analogue of the scalar tuner.
// The clip decrement -log(max(u,1)) is applied uniformly to every element.
class VectorMetatrace {
 public:
  VectorMetatrace(Eigen::Index n, double alpha0, const TunerConfig& cfg)
      : cfg_(cfg),
        beta_(Eigen::ArrayXd::Constant(n, std::log(alpha0))),
        h_(Eigen::ArrayXd::Zero(n)),
        z_beta_(Eigen::ArrayXd::Zero(n)),
        v_(Eigen::ArrayXd::Zero(n)),
        alpha_(Eigen::ArrayXd::Constant(n, alpha0)) {}

  void episode_reset() {
    z_beta_.setZero();
    u_ = 0.0;
  }

  const Eigen::ArrayXd& step(double delta, const Eigen::VectorXd& z,
                             const GradientBundle& g) {
    const double gl = cfg_.gamma_lambda();
    grad_u_ = g.grad_v_s.array() + 0.5 * g.grad_logpi.array();

    z_beta_ = gl * z_beta_ + grad_u_ * h_;
    dbeta_ = z_beta_ * delta + cfg_.psi * g.grad_entropy.array() * h_;

    // alpha = exp(beta) is cached and only recomputed when beta moves, so
    // mu = 0 keeps the exact alpha0 the caller handed in.
    beta_before_ = beta_;
    if (cfg_.normalized) {
      v_ = dbeta_.abs().max(v_ + cfg_.mu * (dbeta_.abs() - v_));
      beta_ += cfg_.mu * dbeta_ / (v_ > 0.0).select(v_, 1.0);
      if ((beta_ != beta_before_).any()) alpha_ = beta_.exp();
      const double eff = (alpha_ * grad_u_.square()).sum();
      u_ = std::max(eff, u_ + (1.0 - gl) * (eff - u_));
      const double clip = std::max(u_, 1.0);
      if (clip > 1.0) {
        beta_ -= std::log(clip);
        alpha_ = beta_.exp();
      }
    } else {
      beta_ += cfg_.mu * dbeta_;
      if ((beta_ != beta_before_).any()) alpha_ = beta_.exp();
    }

    h_ += alpha_ * (z.array() * (delta + (cfg_.gamma * g.grad_v_s_next.array() -
                                          g.grad_v_s.array()) *
                                             h_) +
                    cfg_.psi * g.grad_entropy.array());

    if (!alpha_.allFinite() || !std::isfinite(u_))
      throw DivergenceError("VectorMetatrace: non-finite tuner state");
    return alpha_;
  }

  const Eigen::ArrayXd& beta() const { return beta_; }
  const Eigen::ArrayXd& z_beta() const { return z_beta_; }
  const Eigen::ArrayXd& v() const { return v_; }
  double u() const { return u_; }
  const Eigen::ArrayXd& h() const { return h_; }

 private:
  TunerConfig cfg_;
  Eigen::ArrayXd beta_;
  Eigen::ArrayXd h_;
  Eigen::ArrayXd z_beta_;
  Eigen::ArrayXd v_;
  double u_ = 0.0;
  Eigen::ArrayXd alpha_;
  Eigen::ArrayXd grad_u_;
  Eigen::ArrayXd dbeta_;
  Eigen::ArrayXd beta_before_;
};

// Global beta_hat plus per-weight corrections beta_vec; the step-size of
// weight i is exp(beta_hat + beta_vec_i). Both the scalar and the vector
// meta pipelines run side by side; only beta_hat takes the clip decrement,
// and both h traces are driven by the combined exp(beta_hat + beta_vec).
class MixedMetatrace {
 public:
  MixedMetatrace(Eigen::Index n, double alpha0, const TunerConfig& cfg)
      : cfg_(cfg),
        beta_hat_(std::log(alpha0)),
        beta_vec_(Eigen::ArrayXd::Zero(n)),
        h_hat_(Eigen::ArrayXd::Zero(n)),
        h_vec_(Eigen::ArrayXd::Zero(n)),
        z_beta_vec_(Eigen::ArrayXd::Zero(n)),
        v_vec_(Eigen::ArrayXd::Zero(n)),
        alpha_(Eigen::ArrayXd::Constant(n, alpha0)) {}

  void episode_reset() {
    z_beta_vec_.setZero();
    z_beta_hat_ = 0.0;
    u_ = 0.0;
  }

  const Eigen::ArrayXd& step(double delta, const Eigen::VectorXd& z,
                             const GradientBundle& g) {
    const double gl = cfg_.gamma_lambda();
    grad_u_ = g.grad_v_s.array() + 0.5 * g.grad_logpi.array();

    z_beta_vec_ = gl * z_beta_vec_ + grad_u_ * h_vec_;
    z_beta_hat_ = gl * z_beta_hat_ + (grad_u_ * h_hat_).sum();
    dbeta_vec_ = z_beta_vec_ * delta + cfg_.psi * g.grad_entropy.array() * h_vec_;
    const double dbeta_hat =
        z_beta_hat_ * delta + cfg_.psi * (g.grad_entropy.array() * h_hat_).sum();

    // alpha = exp(beta_hat + beta_vec) is cached and only recomputed when
    // either part moves, so mu = 0 keeps the exact alpha0 the caller gave.
    const double hat_before = beta_hat_;
    vec_before_ = beta_vec_;
    if (cfg_.normalized) {
      v_vec_ = dbeta_vec_.abs().max(v_vec_ + cfg_.mu * (dbeta_vec_.abs() - v_vec_));
      v_hat_ = std::max(std::abs(dbeta_hat), v_hat_ + cfg_.mu * (std::abs(dbeta_hat) - v_hat_));
      beta_vec_ += cfg_.mu * dbeta_vec_ / (v_vec_ > 0.0).select(v_vec_, 1.0);
      beta_hat_ += cfg_.mu * dbeta_hat / (v_hat_ > 0.0 ? v_hat_ : 1.0);
      if (beta_hat_ != hat_before || (beta_vec_ != vec_before_).any())
        alpha_ = (beta_hat_ + beta_vec_).exp();
      const double eff = (alpha_ * grad_u_.square()).sum();
      u_ = std::max(eff, u_ + (1.0 - gl) * (eff - u_));
      const double clip = std::max(u_, 1.0);
      if (clip > 1.0) {
        beta_hat_ -= std::log(clip);
        alpha_ = (beta_hat_ + beta_vec_).exp();
      }
    } else {
      beta_vec_ += cfg_.mu * dbeta_vec_;
      beta_hat_ += cfg_.mu * dbeta_hat;
      if (beta_hat_ != hat_before || (beta_vec_ != vec_before_).any())
        alpha_ = (beta_hat_ + beta_vec_).exp();
    }

    const Eigen::ArrayXd ddelta =
        cfg_.gamma * g.grad_v_s_next.array() - g.grad_v_s.array();
    h_vec_ += alpha_ * (z.array() * (delta + ddelta * h_vec_) +
                        cfg_.psi * g.grad_entropy.array());
    const double ddelta_hhat = (ddelta * h_hat_).sum();
    h_hat_ += alpha_ * (z.array() * (delta + ddelta_hhat) +
                        cfg_.psi * g.grad_entropy.array());

    if (!alpha_.allFinite() || !std::isfinite(beta_hat_) || !std::isfinite(u_))
      throw DivergenceError("MixedMetatrace: non-finite tuner state");
    return alpha_;
  }

  double beta_hat() const { return beta_hat_; }
  const Eigen::ArrayXd& beta_vec() const { return beta_vec_; }
  Eigen::ArrayXd beta() const { return beta_hat_ + beta_vec_; }
  double z_beta_hat() const { return z_beta_hat_; }
  const Eigen::ArrayXd& z_beta_vec() const { return z_beta_vec_; }
  double v_hat() const { return v_hat_; }
  const Eigen::ArrayXd& v_vec() const { return v_vec_; }
  double u() const { return u_; }
  const Eigen::ArrayXd& h_vec() const { return h_vec_; }
  const Eigen::ArrayXd& h_hat() const { return h_hat_; }

 private:
  TunerConfig cfg_;
  double beta_hat_;
  Eigen::ArrayXd beta_vec_;
  Eigen::ArrayXd h_hat_;
  Eigen::ArrayXd h_vec_;
  double z_beta_hat_ = 0.0;
  Eigen::ArrayXd z_beta_vec_;
  double v_hat_ = 0.0;
  Eigen::ArrayXd v_vec_;
  double u_ = 0.0;
  Eigen::ArrayXd alpha_;
  Eigen::ArrayXd grad_u_;
  Eigen::ArrayXd dbeta_vec_;
  Eigen::ArrayXd vec_before_;
};

}  // namespace metatrace
