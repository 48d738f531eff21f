#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include <cmath>
#include <cstdio>
#include <set>
#include <filesystem>

#include "metatrace/features.hpp"
#include "metatrace/model.hpp"
#include "metatrace/verify.hpp"

using namespace metatrace;

namespace {

Eigen::VectorXd random_params(int n, Rng& rng, double scale = 0.5) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = rng.uniform(-scale, scale);
  return w;
}

// Central-difference check of every gradient in the bundle against the
// matching scalar output, at the given parameter point.
template <class Model, class Obs>
void check_bundle_fd(const Model& model, const Eigen::VectorXd& w, const Obs& obs,
                     const Obs& obs_next, int action, Rng& rng, int probes = 25) {
  GradientBundle g = model.gradients(w, obs, obs_next, action, false);
  auto value_fn = [&](const Eigen::VectorXd& p) { return model.evaluate(p, obs).first; };
  auto value_next_fn = [&](const Eigen::VectorXd& p) {
    return model.evaluate(p, obs_next).first;
  };
  auto logpi_fn = [&](const Eigen::VectorXd& p) {
    return std::log(model.evaluate(p, obs).second.probs[action]);
  };
  auto entropy_fn = [&](const Eigen::VectorXd& p) {
    const Eigen::VectorXd pi = model.evaluate(p, obs).second.probs;
    double h = 0.0;
    for (int a = 0; a < pi.size(); ++a) h -= pi[a] * std::log(pi[a]);
    return h;
  };
  for (int k = 0; k < probes; ++k) {
    const int idx = static_cast<int>(rng.uniform() * w.size());
    auto close = [&](double fd, double analytic) {
      return std::abs(fd - analytic) <= 1e-4 * std::max(1.0, std::abs(fd));
    };
    REQUIRE(close(verify::finite_diff(value_fn, w, idx, 1e-6), g.grad_v_s[idx]));
    REQUIRE(close(verify::finite_diff(value_next_fn, w, idx, 1e-6), g.grad_v_s_next[idx]));
    REQUIRE(close(verify::finite_diff(logpi_fn, w, idx, 1e-6), g.grad_logpi[idx]));
    REQUIRE(close(verify::finite_diff(entropy_fn, w, idx, 1e-6), g.grad_entropy[idx]));
  }
}

}  // namespace

TEST_CASE("zero weights give value 0 and a uniform policy") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  auto [value, dist] =
      model.evaluate(Eigen::VectorXd::Zero(model.param_dim()), coder.encode(-0.5, 0.0));
  REQUIRE(value == 0.0);
  for (int a = 0; a < 3; ++a) REQUIRE(dist.probs[a] == Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("adding a constant to all action preferences leaves the policy unchanged") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  SparseFeatures obs = coder.encode(-0.2, -0.01);
  Rng rng(4);
  Eigen::VectorXd w = random_params(model.param_dim(), rng);
  auto before = model.evaluate(w, obs).second.probs;
  for (int a = 0; a < 3; ++a)
    for (const auto& [i, v] : obs.active) w[model.actor_offset(a) + i] += 2.5 / v;
  auto after = model.evaluate(w, obs).second.probs;
  for (int a = 0; a < 3; ++a) REQUIRE(after[a] == Approx(before[a]).epsilon(1e-9));
}

TEST_CASE("indicator critic weights count the active features") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  SparseFeatures obs = coder.encode(0.1, 0.03);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(model.param_dim());
  for (const auto& [i, v] : obs.active) w[i] = 1.0;
  REQUIRE(model.evaluate(w, obs).first == 16.0);
}

TEST_CASE("policy normalization holds after every evaluate") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  Rng rng(5);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd w = random_params(model.param_dim(), rng, 2.0);
    auto dist = model.evaluate(w, coder.encode(rng.uniform(-1.2, 0.6),
                                               rng.uniform(-0.07, 0.07)))
                    .second;
    REQUIRE(std::abs(dist.probs.sum() - 1.0) < 1e-12);
    REQUIRE(dist.probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("sample_action follows the distribution") {
  Rng rng(6);
  SECTION("degenerate distribution") {
    ActionDistribution d{Eigen::Vector3d(1.0, 0.0, 0.0)};
    for (int i = 0; i < 100; ++i) REQUIRE(sample_action(d, rng) == 0);
  }
  SECTION("uniform frequencies") {
    ActionDistribution d{Eigen::Vector3d(1.0 / 3, 1.0 / 3, 1.0 / 3)};
    int counts[3] = {0, 0, 0};
    const int n = 30000;
    for (int i = 0; i < n; ++i) ++counts[sample_action(d, rng)];
    for (int a = 0; a < 3; ++a)
      REQUIRE(std::abs(counts[a] / static_cast<double>(n) - 1.0 / 3) < 0.01);
  }
  SECTION("same rng state gives the same action") {
    ActionDistribution d{Eigen::Vector3d(0.2, 0.5, 0.3)};
    Rng a(123), b(123);
    for (int i = 0; i < 20; ++i) REQUIRE(sample_action(d, a) == sample_action(d, b));
  }
}

TEST_CASE("linear gradients at the uniform policy match the softmax formula") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  SparseFeatures obs = coder.encode(-0.5, 0.0);
  SparseFeatures obs2 = coder.encode(-0.49, 0.001);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(model.param_dim());
  GradientBundle g = model.gradients(w, obs, obs2, 1, false);

  for (const auto& [i, v] : obs.active) {
    REQUIRE(g.grad_logpi[model.actor_offset(1) + i] == Approx(1.0 - 1.0 / 3));
    REQUIRE(g.grad_logpi[model.actor_offset(0) + i] == Approx(-1.0 / 3));
    REQUIRE(g.grad_logpi[model.actor_offset(2) + i] == Approx(-1.0 / 3));
  }
  // entropy is maximal at the uniform policy
  REQUIRE(g.grad_entropy.norm() <= 1e-12);
  REQUIRE(g.entropy == Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("linear gradient sparsity matches the active feature set per block") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  SparseFeatures obs = coder.encode(0.2, -0.03);
  SparseFeatures obs2 = coder.encode(0.21, -0.028);
  Rng rng(8);
  Eigen::VectorXd w = random_params(model.param_dim(), rng);
  GradientBundle g = model.gradients(w, obs, obs2, 0, false);

  std::set<int> active;
  for (const auto& [i, v] : obs.active) active.insert(i);
  for (int i = 0; i < TileCoder::kDim; ++i) {
    REQUIRE((g.grad_v_s[i] != 0.0) == (active.count(i) > 0));
    // critic block entries of actor gradients are zero and vice versa
    REQUIRE(g.grad_logpi[i] == 0.0);
    REQUIRE(g.grad_entropy[i] == 0.0);
    for (int a = 0; a < 3; ++a) REQUIRE(g.grad_v_s[model.actor_offset(a) + i] == 0.0);
  }
}

TEST_CASE("grad_v_s_next is zero at terminal transitions") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  Rng rng(10);
  Eigen::VectorXd w = random_params(model.param_dim(), rng);
  GradientBundle g = model.gradients(w, coder.encode(0.45, 0.06),
                                     coder.encode(0.5, 0.06), 2, true);
  REQUIRE(g.grad_v_s_next.norm() == 0.0);
  REQUIRE(g.value_s_next == 0.0);
}

TEST_CASE("linear gradients match central finite differences") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd w = random_params(model.param_dim(), rng);
    SparseFeatures obs = coder.encode(rng.uniform(-1.2, 0.6), rng.uniform(-0.07, 0.07));
    SparseFeatures obs2 = coder.encode(rng.uniform(-1.2, 0.6), rng.uniform(-0.07, 0.07));
    check_bundle_fd(model, w, obs, obs2, rep % 3, rng);
  }
}

TEST_CASE("silu basics") {
  REQUIRE(silu(0.0) == 0.0);
  REQUIRE(silu(30.0) == Approx(30.0).epsilon(1e-9));
  REQUIRE(silu(-30.0) == Approx(0.0).margin(1e-9));
}

TEST_CASE("mlp with zero output heads gives value 0 and a uniform policy") {
  MlpModel model;
  Rng rng(12);
  Eigen::VectorXd w = model.init_params(rng);  // heads are zero
  auto [value, dist] = model.evaluate(w, Eigen::Vector2d(0.3, -0.2));
  REQUIRE(value == 0.0);
  for (int a = 0; a < 3; ++a) REQUIRE(dist.probs[a] == Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("mlp gradients match central finite differences") {
  Rng rng(13);
  for (Activation act : {Activation::kSilu, Activation::kDSilu}) {
    MlpModel model(32, 3, act);
    Eigen::VectorXd w = random_params(model.param_dim(), rng, 0.3);
    Eigen::Vector2d obs(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Eigen::Vector2d obs2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    check_bundle_fd(model, w, obs, obs2, 1, rng, 40);
  }
}

TEST_CASE("dimension mismatches are rejected") {
  LinearModel model(TileCoder::kDim);
  TileCoder coder;
  REQUIRE_THROWS_AS(model.evaluate(Eigen::VectorXd::Zero(10), coder.encode(-0.5, 0.0)),
                    std::invalid_argument);
  MlpModel mlp;
  REQUIRE_THROWS_AS(mlp.evaluate(Eigen::VectorXd::Zero(10), Eigen::Vector2d(0, 0)),
                    std::invalid_argument);
}

TEST_CASE("parameter checkpoints round-trip") {
  Rng rng(14);
  Eigen::VectorXd w = random_params(100, rng);
  const auto path = std::filesystem::temp_directory_path() / "mtrc_test.ckpt";
  save_params(path.string(), w);
  Eigen::VectorXd back = load_params(path.string());
  REQUIRE(back.size() == w.size());
  REQUIRE((back - w).norm() == 0.0);
  std::filesystem::remove(path);
}
