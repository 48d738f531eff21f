// Command-line experiment runner: `run` a single configuration, `sweep` a
// grid (optionally from a named preset), or `check` the oracle suite.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "metatrace/harness.hpp"
#include "metatrace/verify.hpp"

namespace {

using namespace metatrace;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitAllDiverged = 2;

struct CliOptions {
  ExperimentConfig cfg;
  std::string env = "mountain_car";
  std::string model = "linear";
  std::string tuner = "fixed";
  std::string out_dir = "out";
  std::string preset;
};

void add_common_flags(CLI::App* app, CliOptions& opt) {
  app->add_option("--env", opt.env, "mountain_car or drifting_mountain_car");
  app->add_option("--model", opt.model, "linear or mlp");
  app->add_option("--tuner", opt.tuner, "fixed, scalar, vector or mixed");
  app->add_flag("--normalized,!--unnormalized", opt.cfg.normalized,
                "toggle running-max normalization and step-size clipping");
  app->add_option("--alpha0", opt.cfg.alpha0, "initial step-size");
  app->add_option("--mu", opt.cfg.mu, "meta step-size");
  app->add_option("--gamma", opt.cfg.gamma, "discount factor");
  app->add_option("--lambda", opt.cfg.lambda, "trace decay");
  app->add_option("--psi", opt.cfg.psi, "entropy bonus weight");
  app->add_option("--episodes", opt.cfg.episodes, "episodes per seed");
  app->add_option("--seeds", opt.cfg.seeds, "seed list")->delimiter(',');
  app->add_option("--drift-rate", opt.cfg.drift_rate, "per-feature flip probability");
  app->add_option("--noisy-features", opt.cfg.n_noisy, "noisy feature count");
  app->add_option("--window", opt.cfg.smoothing_window, "smoothing window");
  app->add_flag("--log-beta", opt.cfg.log_beta, "emit per-group beta means");
  app->add_option("--out", opt.out_dir, "output directory");
  app->set_config("--config")->configurable(false);
}

bool resolve_enums(CliOptions& opt) {
  if (opt.env == "mountain_car") opt.cfg.env = EnvKind::kMountainCar;
  else if (opt.env == "drifting_mountain_car") opt.cfg.env = EnvKind::kDriftingMountainCar;
  else return false;
  if (opt.model == "linear") opt.cfg.model = ModelKind::kLinear;
  else if (opt.model == "mlp") opt.cfg.model = ModelKind::kMlp;
  else return false;
  if (opt.tuner == "fixed") opt.cfg.tuner = TunerKind::kFixed;
  else if (opt.tuner == "scalar") opt.cfg.tuner = TunerKind::kScalar;
  else if (opt.tuner == "vector") opt.cfg.tuner = TunerKind::kVector;
  else if (opt.tuner == "mixed") opt.cfg.tuner = TunerKind::kMixed;
  else return false;
  if (opt.cfg.env == EnvKind::kDriftingMountainCar && opt.cfg.drift_rate == 0.0)
    opt.cfg.drift_rate = 6e-6;
  return true;
}

int do_run(const CliOptions& opt) {
  LearningCurve curve = run_experiment(opt.cfg);
  std::filesystem::create_directories(opt.out_dir);
  const std::string name =
      fmt::format("run_{}_{}_{}_{}.csv", to_string(opt.cfg.env), to_string(opt.cfg.tuner),
                  opt.cfg.alpha0, opt.cfg.config_hash().substr(0, 8));
  const auto path = std::filesystem::path(opt.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  write_csv(curve, out);
  fmt::print("wrote {}\n", path.string());
  if (!opt.cfg.seeds.empty() && curve.diverged.size() == opt.cfg.seeds.size())
    return kExitAllDiverged;
  return kExitOk;
}

int do_sweep(const CliOptions& opt) {
  SweepGrid grid;
  if (!opt.preset.empty()) {
    grid = preset(opt.preset);
  } else {
    grid.base = opt.cfg;
  }
  const int all_diverged = sweep(grid, opt.out_dir);
  fmt::print("sweep complete: {} cells in {}\n", sweep_cells(grid).size(), opt.out_dir);
  if (all_diverged > 0 && all_diverged == static_cast<int>(sweep_cells(grid).size()))
    return kExitAllDiverged;
  return kExitOk;
}

int do_check() {
  using namespace metatrace::verify;
  int failures = 0;
  auto report = [&](bool ok, const std::string& what) {
    fmt::print("{}  {}\n", ok ? "PASS" : "FAIL", what);
    if (!ok) ++failures;
  };

  // lambda-return: forward recursion vs delta-sum on random trajectories
  bool lr_ok = true;
  Rng rng(7);
  for (int i = 0; i < 200 && lr_ok; ++i) {
    Trajectory traj;
    const int T = 1 + static_cast<int>(rng.uniform() * 19);
    double v_next = rng.uniform(-5, 5);
    for (int t = 0; t < T; ++t) {
      GradientBundle b;
      b.value_s = v_next;
      v_next = (t == T - 1) ? 0.0 : rng.uniform(-5, 5);
      b.value_s_next = v_next;
      traj.bundles.push_back(b);
      traj.rewards.push_back(rng.uniform(-2, 2));
    }
    try {
      forward_lambda_return(traj, 0.99, 0.8, 1e-9);
    } catch (const std::exception&) {
      lr_ok = false;
    }
  }
  report(lr_ok, "lambda-return forward recursion matches delta-sum expansion");

  // gradient spot check, linear model
  bool fd_ok = true;
  {
    LinearModel model(TileCoder::kDim);
    TileCoder coder;
    Rng grng(11);
    Eigen::VectorXd w(model.param_dim());
    for (int i = 0; i < w.size(); ++i) w[i] = grng.uniform(-0.5, 0.5);
    SparseFeatures obs = coder.encode(-0.3, 0.01);
    SparseFeatures obs2 = coder.encode(-0.29, 0.012);
    GradientBundle g = model.gradients(w, obs, obs2, 1, false);
    for (int k = 0; k < 50; ++k) {
      const int idx = static_cast<int>(grng.uniform() * w.size());
      auto fn = [&](const Eigen::VectorXd& p) {
        auto [v, d] = model.evaluate(p, obs);
        return std::log(d.probs[1]);
      };
      const double fd = finite_diff(fn, w, idx, 1e-6);
      if (std::abs(fd - g.grad_logpi[idx]) > 1e-4 * std::max(1.0, std::abs(fd)))
        fd_ok = false;
    }
  }
  report(fd_ok, "linear log-pi gradient matches central differences");

  // h-trace sensitivity oracle
  bool h_ok = true;
  double worst = 1.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    HOracleResult r = replay_h_oracle(std::log(std::ldexp(1.0, -7)), 1e-4, 30, s);
    const double cos = cosine_similarity(r.empirical_dw_dbeta, r.tuner_h);
    worst = std::min(worst, cos);
    if (cos < 0.99) h_ok = false;
  }
  report(h_ok, fmt::format("h trace tracks dw/dbeta (worst cosine {:.4f})", worst));

  return failures == 0 ? kExitOk : kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online actor-critic step-size tuning experiments"};
  app.require_subcommand(1);

  CliOptions run_opt, sweep_opt;
  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment configuration");
  add_common_flags(run_cmd, run_opt);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run a grid of configurations");
  add_common_flags(sweep_cmd, sweep_opt);
  sweep_cmd->add_option("--preset", sweep_opt.preset, "fig1, fig2, fig6 or fig7");
  CLI::App* check_cmd = app.add_subcommand("check", "run the oracle verification suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run_cmd->parsed()) {
      if (!resolve_enums(run_opt)) {
        fmt::print(stderr, "invalid --env/--model/--tuner value\n");
        return kExitUsage;
      }
      return do_run(run_opt);
    }
    if (sweep_cmd->parsed()) {
      if (!resolve_enums(sweep_opt)) {
        fmt::print(stderr, "invalid --env/--model/--tuner value\n");
        return kExitUsage;
      }
      return do_sweep(sweep_opt);
    }
    if (check_cmd->parsed()) return do_check();
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
