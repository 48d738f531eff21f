#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "metatrace/features.hpp"
#include "metatrace/rng.hpp"

namespace metatrace {

struct ActionDistribution {
  Eigen::VectorXd probs;
};

// Per-step gradients over the flat parameter vector plus the scalars the
// learner and tuners consume. grad_v_s_next is the zero vector when the
// next state is terminal.
struct GradientBundle {
  Eigen::VectorXd grad_v_s;
  Eigen::VectorXd grad_v_s_next;
  Eigen::VectorXd grad_logpi;
  Eigen::VectorXd grad_entropy;
  double value_s = 0.0;
  double value_s_next = 0.0;
  double logpi = 0.0;
  double entropy = 0.0;

  void resize(Eigen::Index n) {
    grad_v_s.setZero(n);
    grad_v_s_next.setZero(n);
    grad_logpi.setZero(n);
    grad_entropy.setZero(n);
    value_s = value_s_next = logpi = entropy = 0.0;
  }
};

inline ActionDistribution softmax(const Eigen::VectorXd& prefs) {
  Eigen::VectorXd e = (prefs.array() - prefs.maxCoeff()).exp();
  return {e / e.sum()};
}

inline int sample_action(const ActionDistribution& dist, Rng& rng) {
  return rng.categorical(dist.probs);
}

// Linear actor-critic over sparse signed features. Parameter layout:
// [critic block | actor block per action], each block feat_dim wide.
class LinearModel {
 public:
  explicit LinearModel(int feat_dim, int num_actions = 3)
      : feat_dim_(feat_dim), num_actions_(num_actions) {}

  int feat_dim() const { return feat_dim_; }
  int num_actions() const { return num_actions_; }
  int param_dim() const { return feat_dim_ * (1 + num_actions_); }
  int critic_offset() const { return 0; }
  int actor_offset(int a) const { return feat_dim_ * (1 + a); }

  std::pair<double, ActionDistribution> evaluate(const Eigen::VectorXd& params,
                                                 const SparseFeatures& obs) const {
    check_dims(params, obs);
    double value = 0.0;
    Eigen::VectorXd prefs = Eigen::VectorXd::Zero(num_actions_);
    for (const auto& [i, v] : obs.active) {
      value += params[i] * v;
      for (int a = 0; a < num_actions_; ++a) prefs[a] += params[actor_offset(a) + i] * v;
    }
    return {value, softmax(prefs)};
  }

  void gradients(const Eigen::VectorXd& params, const SparseFeatures& obs_t,
                 const SparseFeatures& obs_next, int action, bool terminal_next,
                 GradientBundle& out) const {
    check_dims(params, obs_t);
    out.resize(param_dim());

    auto [value, dist] = evaluate(params, obs_t);
    const Eigen::VectorXd& pi = dist.probs;
    out.value_s = value;
    out.logpi = std::log(pi[action]);
    out.entropy = 0.0;
    for (int a = 0; a < num_actions_; ++a) out.entropy -= pi[a] * std::log(pi[a]);

    for (const auto& [i, v] : obs_t.active) {
      out.grad_v_s[i] = v;
      for (int a = 0; a < num_actions_; ++a) {
        const double indicator = (a == action) ? 1.0 : 0.0;
        out.grad_logpi[actor_offset(a) + i] = v * (indicator - pi[a]);
        out.grad_entropy[actor_offset(a) + i] =
            v * (-pi[a] * (std::log(pi[a]) + out.entropy));
      }
    }

    if (!terminal_next) {
      check_dims(params, obs_next);
      for (const auto& [i, v] : obs_next.active) {
        out.grad_v_s_next[i] = v;
        out.value_s_next += params[i] * v;
      }
    }
  }

  GradientBundle gradients(const Eigen::VectorXd& params, const SparseFeatures& obs_t,
                           const SparseFeatures& obs_next, int action,
                           bool terminal_next) const {
    GradientBundle out;
    gradients(params, obs_t, obs_next, action, terminal_next, out);
    return out;
  }

 private:
  void check_dims(const Eigen::VectorXd& params, const SparseFeatures& obs) const {
    if (params.size() != param_dim())
      throw std::invalid_argument("LinearModel: parameter dimension mismatch");
    if (obs.dim != feat_dim_)
      throw std::invalid_argument("LinearModel: feature dimension mismatch");
  }

  int feat_dim_;
  int num_actions_;
};

enum class Activation { kSilu, kDSilu };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x * sigmoid(x); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}
inline double dsilu(double x) { return silu_grad(x); }
inline double dsilu_grad(double x) {
  const double s = sigmoid(x);
  const double sp = s * (1.0 - s);
  return sp * (1.0 + x * (1.0 - s)) + s * ((1.0 - s) - x * sp);
}

// Small one-hidden-layer network over the raw 2-d mountain-car state with a
// linear value head and softmax policy head sharing the hidden layer.
// Inputs are rescaled to roughly [-1, 1] for conditioning.
// Parameter layout: [W1 (H x 2, row major) | b1 (H) | value w (H) |
// value b | policy W (A x H, row major) | policy b (A)].
class MlpModel {
 public:
  explicit MlpModel(int hidden = 32, int num_actions = 3,
                    Activation act = Activation::kSilu)
      : hidden_(hidden), num_actions_(num_actions), act_(act) {}

  int hidden() const { return hidden_; }
  int num_actions() const { return num_actions_; }
  int param_dim() const { return 4 * hidden_ + 1 + num_actions_ * (hidden_ + 1); }

  // Hidden weights uniform in [-0.05, 0.05], output heads zero.
  Eigen::VectorXd init_params(Rng& rng) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(param_dim());
    for (int i = 0; i < 3 * hidden_; ++i) w[i] = rng.uniform(-0.05, 0.05);
    return w;
  }

  std::pair<double, ActionDistribution> evaluate(const Eigen::VectorXd& params,
                                                 const Eigen::Vector2d& obs) const {
    check_dims(params);
    Forward f = forward(params, obs);
    return {f.value, softmax(f.prefs)};
  }

  void gradients(const Eigen::VectorXd& params, const Eigen::Vector2d& obs_t,
                 const Eigen::Vector2d& obs_next, int action, bool terminal_next,
                 GradientBundle& out) const {
    check_dims(params);
    out.resize(param_dim());

    Forward f = forward(params, obs_t);
    const Eigen::VectorXd pi = softmax(f.prefs).probs;
    out.value_s = f.value;
    out.logpi = std::log(pi[action]);
    out.entropy = 0.0;
    for (int a = 0; a < num_actions_; ++a) out.entropy -= pi[a] * std::log(pi[a]);

    backprop_value(params, f, out.grad_v_s);

    // log pi and entropy heads: seed with per-preference gradients.
    Eigen::VectorXd dpref_logpi(num_actions_), dpref_ent(num_actions_);
    for (int a = 0; a < num_actions_; ++a) {
      dpref_logpi[a] = ((a == action) ? 1.0 : 0.0) - pi[a];
      dpref_ent[a] = -pi[a] * (std::log(pi[a]) + out.entropy);
    }
    backprop_policy(params, f, dpref_logpi, out.grad_logpi);
    backprop_policy(params, f, dpref_ent, out.grad_entropy);

    if (!terminal_next) {
      Forward fn = forward(params, obs_next);
      out.value_s_next = fn.value;
      backprop_value(params, fn, out.grad_v_s_next);
    }
  }

  GradientBundle gradients(const Eigen::VectorXd& params, const Eigen::Vector2d& obs_t,
                           const Eigen::Vector2d& obs_next, int action,
                           bool terminal_next) const {
    GradientBundle out;
    gradients(params, obs_t, obs_next, action, terminal_next, out);
    return out;
  }

  static Eigen::Vector2d observe(const McState& s) {
    return {(s.position + 0.3) / 0.9, s.velocity / MountainCar::kMaxVelocity};
  }

 private:
  struct Forward {
    Eigen::Vector2d x;
    Eigen::VectorXd pre;   // hidden pre-activations
    Eigen::VectorXd hid;   // hidden activations
    double value = 0.0;
    Eigen::VectorXd prefs;
  };

  // offsets into the flat parameter vector
  int off_w1() const { return 0; }
  int off_b1() const { return 2 * hidden_; }
  int off_vw() const { return 3 * hidden_; }
  int off_vb() const { return 4 * hidden_; }
  int off_pw() const { return 4 * hidden_ + 1; }
  int off_pb() const { return 4 * hidden_ + 1 + num_actions_ * hidden_; }

  double act(double x) const { return act_ == Activation::kSilu ? silu(x) : dsilu(x); }
  double act_grad(double x) const {
    return act_ == Activation::kSilu ? silu_grad(x) : dsilu_grad(x);
  }

  Forward forward(const Eigen::VectorXd& p, const Eigen::Vector2d& obs) const {
    Forward f;
    f.x = obs;
    f.pre.resize(hidden_);
    f.hid.resize(hidden_);
    for (int h = 0; h < hidden_; ++h) {
      f.pre[h] = p[off_w1() + 2 * h] * f.x[0] + p[off_w1() + 2 * h + 1] * f.x[1] +
                 p[off_b1() + h];
      f.hid[h] = act(f.pre[h]);
    }
    f.value = p[off_vb()];
    for (int h = 0; h < hidden_; ++h) f.value += p[off_vw() + h] * f.hid[h];
    f.prefs.setZero(num_actions_);
    for (int a = 0; a < num_actions_; ++a) {
      f.prefs[a] = p[off_pb() + a];
      for (int h = 0; h < hidden_; ++h) f.prefs[a] += p[off_pw() + a * hidden_ + h] * f.hid[h];
    }
    return f;
  }

  void backprop_value(const Eigen::VectorXd& p, const Forward& f,
                      Eigen::VectorXd& g) const {
    g[off_vb()] += 1.0;
    for (int h = 0; h < hidden_; ++h) {
      g[off_vw() + h] += f.hid[h];
      const double dh = p[off_vw() + h] * act_grad(f.pre[h]);
      g[off_w1() + 2 * h] += dh * f.x[0];
      g[off_w1() + 2 * h + 1] += dh * f.x[1];
      g[off_b1() + h] += dh;
    }
  }

  void backprop_policy(const Eigen::VectorXd& p, const Forward& f,
                       const Eigen::VectorXd& dpref, Eigen::VectorXd& g) const {
    for (int h = 0; h < hidden_; ++h) {
      double ds = 0.0;
      for (int a = 0; a < num_actions_; ++a) {
        g[off_pw() + a * hidden_ + h] += dpref[a] * f.hid[h];
        ds += dpref[a] * p[off_pw() + a * hidden_ + h];
      }
      const double dh = ds * act_grad(f.pre[h]);
      g[off_w1() + 2 * h] += dh * f.x[0];
      g[off_w1() + 2 * h + 1] += dh * f.x[1];
      g[off_b1() + h] += dh;
    }
    for (int a = 0; a < num_actions_; ++a) g[off_pb() + a] += dpref[a];
  }

  void check_dims(const Eigen::VectorXd& params) const {
    if (params.size() != param_dim())
      throw std::invalid_argument("MlpModel: parameter dimension mismatch");
  }

  int hidden_;
  int num_actions_;
  Activation act_;
};

// Flat little-endian f64 checkpoint with a 16-byte header: magic "MTRC",
// u32 version, u64 count.
inline void save_params(const std::string& path, const Eigen::VectorXd& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  const char magic[4] = {'M', 'T', 'R', 'C'};
  const std::uint32_t version = 1;
  const std::uint64_t n = static_cast<std::uint64_t>(params.size());
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

inline Eigen::VectorXd load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&n), 8);
  if (!in || std::memcmp(magic, "MTRC", 4) != 0)
    throw std::runtime_error("load_params: bad header in " + path);
  if (version != 1) throw std::runtime_error("load_params: unsupported version");
  Eigen::VectorXd params(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw std::runtime_error("load_params: truncated file " + path);
  return params;
}

}  // namespace metatrace
