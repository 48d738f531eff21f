#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "metatrace/ac.hpp"
#include "metatrace/env.hpp"
#include "metatrace/features.hpp"
#include "metatrace/meta.hpp"
#include "metatrace/model.hpp"
#include "metatrace/rng.hpp"

namespace metatrace {

enum class EnvKind { kMountainCar, kDriftingMountainCar };
enum class ModelKind { kLinear, kMlp };
enum class TunerKind { kFixed, kScalar, kVector, kMixed };

inline std::string to_string(EnvKind e) {
  return e == EnvKind::kMountainCar ? "mountain_car" : "drifting_mountain_car";
}
inline std::string to_string(ModelKind m) { return m == ModelKind::kLinear ? "linear" : "mlp"; }
inline std::string to_string(TunerKind t) {
  switch (t) {
    case TunerKind::kFixed: return "fixed";
    case TunerKind::kScalar: return "scalar";
    case TunerKind::kVector: return "vector";
    default: return "mixed";
  }
}

struct ExperimentConfig {
  EnvKind env = EnvKind::kMountainCar;
  ModelKind model = ModelKind::kLinear;
  TunerKind tuner = TunerKind::kFixed;
  bool normalized = true;
  double alpha0 = 0.0078125;  // 2^-7
  double mu = 0.0;
  double gamma = 0.99;
  double lambda = 0.8;
  double psi = 0.0;
  int episodes = 1000;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double drift_rate = 0.0;
  int n_noisy = 32;
  int smoothing_window = 20;
  bool log_beta = false;

  void validate() const {
    if (alpha0 <= 0.0) throw std::invalid_argument("config: alpha0 must be positive");
    if (mu < 0.0) throw std::invalid_argument("config: mu must be >= 0");
    if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0)
      throw std::invalid_argument("config: gamma and lambda must be in [0,1]");
    if (episodes < 0) throw std::invalid_argument("config: episodes must be >= 0");
    if (env == EnvKind::kDriftingMountainCar && model == ModelKind::kMlp)
      throw std::invalid_argument("config: drifting environment requires the linear model");
  }

  std::string canonical() const {
    std::string s = fmt::format(
        "env={} model={} tuner={} normalized={} alpha0={} mu={} gamma={} lambda={} "
        "psi={} episodes={} drift_rate={} n_noisy={} window={} log_beta={} seeds=",
        to_string(env), to_string(model), to_string(tuner), normalized, alpha0, mu,
        gamma, lambda, psi, episodes, drift_rate, n_noisy, smoothing_window, log_beta);
    for (auto v : seeds) s += fmt::format("{},", v);
    return s;
  }

  std::string config_hash() const {
    // FNV-1a over the canonical form
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical()) h = (h ^ c) * 0x100000001b3ULL;
    return fmt::format("{:016x}", h);
  }
};

inline constexpr int kBetaGroups = 4;  // critic/actor x informative/noisy

struct EpisodeRow {
  std::uint64_t seed = 0;
  int episode = 0;
  double ret = 0.0;
  int steps = 0;
  bool has_beta = false;
  std::array<double, kBetaGroups> beta_means{};
};

struct LearningCurve {
  std::vector<EpisodeRow> rows;
  // seed -> episode index at which the run diverged (run truncated there)
  std::map<std::uint64_t, int> diverged;
  int episodes = 0;
  std::vector<std::uint64_t> seeds;
  bool has_beta = false;
};

// Partition of the flat parameter indices for beta-evolution logging.
struct BetaGroup {
  std::string name;
  std::vector<int> indices;
};

// Linear models only: critic/actor blocks split into informative (tile)
// and, when a noisy tail exists, noisy indices.
inline std::vector<BetaGroup> beta_groups(int feat_dim, int num_actions) {
  const bool noisy = feat_dim > TileCoder::kDim;
  std::vector<BetaGroup> groups;
  groups.push_back({"critic_info", {}});
  if (noisy) groups.push_back({"critic_noise", {}});
  groups.push_back({"actor_info", {}});
  if (noisy) groups.push_back({"actor_noise", {}});

  auto& critic_info = groups[0].indices;
  auto* critic_noise = noisy ? &groups[1].indices : nullptr;
  auto& actor_info = groups[noisy ? 2 : 1].indices;
  auto* actor_noise = noisy ? &groups[3].indices : nullptr;

  for (int i = 0; i < feat_dim; ++i)
    (i < TileCoder::kDim ? critic_info : *critic_noise).push_back(i);
  for (int a = 0; a < num_actions; ++a)
    for (int i = 0; i < feat_dim; ++i) {
      const int idx = feat_dim * (1 + a) + i;
      (i < TileCoder::kDim ? actor_info : *actor_noise).push_back(idx);
    }
  return groups;
}

namespace detail {

// Column order: critic_info, critic_noise, actor_info, actor_noise; groups
// absent from the model (no noisy tail) stay NaN.
inline std::array<double, kBetaGroups> group_means(const Eigen::ArrayXd& beta,
                                                   const std::vector<BetaGroup>& groups) {
  std::array<double, kBetaGroups> means;
  means.fill(std::numeric_limits<double>::quiet_NaN());
  for (const BetaGroup& g : groups) {
    double sum = 0.0;
    for (int idx : g.indices) sum += beta[idx];
    int col = 3;
    if (g.name == "critic_info") col = 0;
    else if (g.name == "critic_noise") col = 1;
    else if (g.name == "actor_info") col = 2;
    means[col] = sum / static_cast<double>(g.indices.size());
  }
  return means;
}

template <class Tuner>
Eigen::ArrayXd tuner_log_alpha(const Tuner& tuner, Eigen::Index n);

inline Eigen::ArrayXd tuner_log_alpha(const FixedStepSize& t, Eigen::Index n) {
  return Eigen::ArrayXd::Constant(n, t.beta());
}
inline Eigen::ArrayXd tuner_log_alpha(const ScalarMetatrace& t, Eigen::Index n) {
  return Eigen::ArrayXd::Constant(n, t.beta());
}
inline Eigen::ArrayXd tuner_log_alpha(const VectorMetatrace& t, Eigen::Index) {
  return t.beta();
}
inline Eigen::ArrayXd tuner_log_alpha(const MixedMetatrace& t, Eigen::Index) {
  return t.beta();
}

template <class Model, class Encoder, class Tuner>
void run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const Model& model,
              Encoder& encoder, Tuner& tuner, AcLearner& learner,
              const std::vector<BetaGroup>& groups, LearningCurve& curve) {
  Rng rng(mix_seed(seed, 0));
  MountainCar env;
  GradientBundle bundle;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    EpisodeRow row;
    row.seed = seed;
    row.episode = ep;
    try {
      EpisodeRecord rec = run_episode(learner, env, model, encoder, tuner, rng, bundle);
      row.ret = rec.total_reward;
      row.steps = rec.steps;
    } catch (const DivergenceError&) {
      curve.diverged[seed] = ep;
      return;
    }
    if (cfg.log_beta && !groups.empty()) {
      row.has_beta = true;
      row.beta_means =
          group_means(tuner_log_alpha(tuner, learner.params().size()), groups);
    }
    curve.rows.push_back(row);
  }
}

template <class Model, class MakeEncoder>
void run_all_tuners(const ExperimentConfig& cfg, const Model& model,
                    const MakeEncoder& make_encoder, Eigen::Index n,
                    const std::vector<BetaGroup>& groups, LearningCurve& curve) {
  TunerConfig tcfg;
  tcfg.mu = cfg.mu;
  tcfg.gamma = cfg.gamma;
  tcfg.lambda = cfg.lambda;
  tcfg.psi = cfg.psi;
  tcfg.normalized = cfg.normalized;

  for (std::uint64_t seed : cfg.seeds) {
    Eigen::VectorXd w0;
    if constexpr (std::is_same_v<Model, MlpModel>) {
      Rng init_rng(mix_seed(seed, 2));
      w0 = model.init_params(init_rng);
    } else {
      w0 = Eigen::VectorXd::Zero(n);
    }
    AcLearner learner(std::move(w0), cfg.gamma, cfg.lambda, cfg.psi);
    auto encoder = make_encoder(seed);
    switch (cfg.tuner) {
      case TunerKind::kFixed: {
        FixedStepSize tuner(cfg.alpha0);
        run_seed(cfg, seed, model, encoder, tuner, learner, groups, curve);
        break;
      }
      case TunerKind::kScalar: {
        ScalarMetatrace tuner(n, cfg.alpha0, tcfg);
        run_seed(cfg, seed, model, encoder, tuner, learner, groups, curve);
        break;
      }
      case TunerKind::kVector: {
        VectorMetatrace tuner(n, cfg.alpha0, tcfg);
        run_seed(cfg, seed, model, encoder, tuner, learner, groups, curve);
        break;
      }
      case TunerKind::kMixed: {
        MixedMetatrace tuner(n, cfg.alpha0, tcfg);
        run_seed(cfg, seed, model, encoder, tuner, learner, groups, curve);
        break;
      }
    }
  }
}

}  // namespace detail

// Independent run per seed; raw per-episode rows, smoothing only at
// aggregation. A diverged run is truncated and marked, never a crash.
inline LearningCurve run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  LearningCurve curve;
  curve.episodes = cfg.episodes;
  curve.seeds = cfg.seeds;
  curve.has_beta = cfg.log_beta;

  if (cfg.model == ModelKind::kMlp) {
    MlpModel model;
    auto make_encoder = [](std::uint64_t) { return RawStateEncoder(); };
    detail::run_all_tuners(cfg, model, make_encoder, model.param_dim(), {}, curve);
  } else if (cfg.env == EnvKind::kDriftingMountainCar) {
    const int feat_dim = TileCoder::kDim + cfg.n_noisy;
    LinearModel model(feat_dim);
    auto groups = cfg.log_beta ? beta_groups(feat_dim, model.num_actions())
                               : std::vector<BetaGroup>{};
    auto make_encoder = [&](std::uint64_t seed) {
      return DriftEncoder(cfg.drift_rate, cfg.n_noisy, mix_seed(seed, 1));
    };
    detail::run_all_tuners(cfg, model, make_encoder, model.param_dim(), groups, curve);
  } else {
    LinearModel model(TileCoder::kDim);
    auto groups = cfg.log_beta ? beta_groups(TileCoder::kDim, model.num_actions())
                               : std::vector<BetaGroup>{};
    auto make_encoder = [](std::uint64_t) { return TileEncoder(); };
    detail::run_all_tuners(cfg, model, make_encoder, model.param_dim(), groups, curve);
  }

  std::stable_sort(curve.rows.begin(), curve.rows.end(),
                   [](const EpisodeRow& a, const EpisodeRow& b) {
                     return a.seed != b.seed ? a.seed < b.seed : a.episode < b.episode;
                   });
  return curve;
}

// Per-episode mean over seeds of the trailing-window average (window
// clipped at the episode start). Only seeds with a full-length run count.
inline std::vector<double> aggregate(const LearningCurve& curve, int window) {
  if (window < 1) throw std::invalid_argument("aggregate: window must be >= 1");
  std::map<std::uint64_t, std::vector<double>> per_seed;
  for (const auto& row : curve.rows) per_seed[row.seed].push_back(row.ret);

  std::vector<double> mean(curve.episodes, 0.0);
  int n_full = 0;
  for (const auto& [seed, returns] : per_seed) {
    if (static_cast<int>(returns.size()) != curve.episodes) continue;
    ++n_full;
    double running = 0.0;
    for (int e = 0; e < curve.episodes; ++e) {
      running += returns[e];
      if (e >= window) running -= returns[e - window];
      mean[e] += running / std::min(e + 1, window);
    }
  }
  if (n_full > 0)
    for (double& m : mean) m /= n_full;
  return mean;
}

// Mean return over the final `tail` episodes of the seed-mean curve.
inline double final_mean_return(const LearningCurve& curve, int tail) {
  auto mean = aggregate(curve, 1);
  if (static_cast<int>(mean.size()) < tail || tail <= 0) return 0.0;
  double sum = 0.0;
  for (int e = curve.episodes - tail; e < curve.episodes; ++e) sum += mean[e];
  return sum / tail;
}

inline void write_csv(const LearningCurve& curve, std::ostream& out) {
  out << "seed,episode,return,steps";
  if (curve.has_beta)
    out << ",beta_critic_info,beta_critic_noise,beta_actor_info,beta_actor_noise";
  out << "\n";
  for (const auto& row : curve.rows) {
    out << fmt::format("{},{},{},{}", row.seed, row.episode, row.ret, row.steps);
    if (curve.has_beta) {
      if (row.has_beta)
        out << fmt::format(",{},{},{},{}", row.beta_means[0], row.beta_means[1],
                           row.beta_means[2], row.beta_means[3]);
      else
        out << ",,,,";
    }
    out << "\n";
  }
  for (const auto& [seed, ep] : curve.diverged)
    out << fmt::format("# diverged seed={} episode={}\n", seed, ep);
}

inline std::string csv_string(const LearningCurve& curve) {
  std::ostringstream os;
  write_csv(curve, os);
  return os.str();
}

struct SweepGrid {
  ExperimentConfig base;
  std::vector<double> alpha0;
  std::vector<double> mu;
  std::vector<TunerKind> tuners;
  std::vector<double> drift_rates;
};

struct SweepCell {
  ExperimentConfig cfg;
  std::string file;
};

inline std::vector<SweepCell> sweep_cells(const SweepGrid& grid) {
  auto alphas = grid.alpha0.empty() ? std::vector<double>{grid.base.alpha0} : grid.alpha0;
  auto mus = grid.mu.empty() ? std::vector<double>{grid.base.mu} : grid.mu;
  auto tuners =
      grid.tuners.empty() ? std::vector<TunerKind>{grid.base.tuner} : grid.tuners;
  auto drifts = grid.drift_rates.empty() ? std::vector<double>{grid.base.drift_rate}
                                         : grid.drift_rates;
  std::vector<SweepCell> cells;
  for (TunerKind t : tuners)
    for (double dr : drifts)
      for (double a : alphas)
        for (double m : mus) {
          ExperimentConfig cfg = grid.base;
          cfg.tuner = t;
          cfg.drift_rate = dr;
          cfg.alpha0 = a;
          cfg.mu = m;
          std::string file = fmt::format("tuner={}_alpha0={:g}_mu={:g}", to_string(t), a, m);
          if (cfg.env == EnvKind::kDriftingMountainCar)
            file += fmt::format("_drift={:g}", dr);
          cells.push_back({cfg, file + ".csv"});
        }
  return cells;
}

// Cartesian-product sweep: one CSV per cell plus a manifest listing every
// cell with its config hash. Returns the number of cells where every seed
// diverged.
inline int sweep(const SweepGrid& grid, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream manifest(out_dir / "manifest.csv");
  manifest << "file,env,model,tuner,normalized,alpha0,mu,drift_rate,episodes,seeds,"
              "config_hash\n";
  int all_diverged = 0;
  for (const SweepCell& cell : sweep_cells(grid)) {
    LearningCurve curve = run_experiment(cell.cfg);
    std::ofstream out(out_dir / cell.file, std::ios::binary);
    write_csv(curve, out);
    manifest << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", cell.file,
                            to_string(cell.cfg.env), to_string(cell.cfg.model),
                            to_string(cell.cfg.tuner), cell.cfg.normalized,
                            cell.cfg.alpha0, cell.cfg.mu, cell.cfg.drift_rate,
                            cell.cfg.episodes, cell.cfg.seeds.size(),
                            cell.cfg.config_hash());
    if (curve.diverged.size() == cell.cfg.seeds.size() && !cell.cfg.seeds.empty())
      ++all_diverged;
  }
  return all_diverged;
}

inline std::vector<double> pow2_range(int hi_exp, int lo_exp) {
  std::vector<double> v;
  for (int e = hi_exp; e >= lo_exp; --e) v.push_back(std::ldexp(1.0, e));
  return v;
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::uint64_t i = 0; i < count; ++i) s[i] = i;
  return s;
}

// Named sweep presets mirroring the desk-scale experiment grids.
inline SweepGrid preset(const std::string& name) {
  SweepGrid g;
  g.base.env = EnvKind::kMountainCar;
  g.base.model = ModelKind::kLinear;
  g.base.episodes = 1000;
  g.base.seeds = seed_range(10);
  g.base.smoothing_window = 20;
  if (name == "fig1") {
    g.base.tuner = TunerKind::kFixed;
    g.alpha0 = pow2_range(-5, -12);
  } else if (name == "fig2") {
    g.base.tuner = TunerKind::kScalar;
    g.alpha0 = pow2_range(-5, -12);
    g.mu = pow2_range(-6, -11);
  } else if (name == "fig6") {
    g.base.env = EnvKind::kDriftingMountainCar;
    g.base.seeds = seed_range(20);
    g.base.smoothing_window = 40;
    g.base.alpha0 = std::ldexp(1.0, -10);
    g.base.mu = std::ldexp(1.0, -10);
    g.tuners = {TunerKind::kFixed, TunerKind::kScalar, TunerKind::kVector,
                TunerKind::kMixed};
    g.drift_rates = {4e-6, 6e-6, 8e-6, 1e-5};
  } else if (name == "fig7") {
    g.base.env = EnvKind::kDriftingMountainCar;
    g.base.seeds = seed_range(20);
    g.base.smoothing_window = 40;
    g.base.alpha0 = std::ldexp(1.0, -10);
    g.base.mu = std::ldexp(1.0, -10);
    g.base.drift_rate = 6e-6;
    g.base.log_beta = true;
    g.tuners = {TunerKind::kScalar, TunerKind::kVector, TunerKind::kMixed};
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return g;
}

}  // namespace metatrace
