#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "metatrace/env.hpp"
#include "metatrace/rng.hpp"

namespace metatrace {

// Signed sparse feature vector: active (index, value) pairs over [0, dim).
// Tile features carry value +1 (or -1 once a drifted sign flips them);
// active noisy features carry +1, inactive ones are simply absent.
struct SparseFeatures {
  int dim = 0;
  std::vector<std::pair<int, double>> active;

  int num_tile_active() const {
    int c = 0;
    for (const auto& [i, v] : active)
      if (i < TileDim()) ++c;
    return c;
  }

  static constexpr int TileDim() { return 1600; }
};

// 16 asymmetrically offset 10x10 tilings over the mountain-car box.
// Tiling i is displaced diagonally by i/16 of one cell width; displaced
// cells are clamped at the boundary. Feature index = 100*tiling + 10*row
// + column with row from velocity and column from position.
class TileCoder {
 public:
  static constexpr int kTilings = 16;
  static constexpr int kCells = 10;  // per dimension
  static constexpr int kDim = kTilings * kCells * kCells;  // 1600

  SparseFeatures encode(double position, double velocity) const {
    if (position < MountainCar::kMinPosition || position > MountainCar::kMaxPosition ||
        velocity < -MountainCar::kMaxVelocity || velocity > MountainCar::kMaxVelocity)
      throw std::invalid_argument("TileCoder::encode: state out of range");

    const double up = (position - MountainCar::kMinPosition) /
                      (MountainCar::kMaxPosition - MountainCar::kMinPosition);
    const double uv = (velocity + MountainCar::kMaxVelocity) /
                      (2.0 * MountainCar::kMaxVelocity);

    SparseFeatures f;
    f.dim = kDim;
    f.active.reserve(kTilings);
    for (int t = 0; t < kTilings; ++t) {
      const double shift = static_cast<double>(t) / kTilings;
      const int col = cell(up, shift);
      const int row = cell(uv, shift);
      f.active.emplace_back(t * kCells * kCells + row * kCells + col, 1.0);
    }
    return f;
  }

 private:
  static int cell(double u, double shift) {
    int c = static_cast<int>(std::floor(u * kCells + shift));
    return std::clamp(c, 0, kCells - 1);
  }
};

// Drifting/noisy representation wrapper: every environment time-step each
// tile feature's sign may flip with probability drift_rate, and each
// encoding carries a fresh block of Bernoulli(0.5) noisy features at
// indices [1600, 1600 + n_noisy).
class DriftFeatures {
 public:
  DriftFeatures(double drift_rate, int n_noisy, std::uint64_t seed)
      : drift_rate_(drift_rate), n_noisy_(n_noisy), signs_(TileCoder::kDim, 1.0),
        rng_(seed) {
    if (drift_rate < 0.0 || drift_rate > 1.0)
      throw std::invalid_argument("DriftFeatures: drift_rate must be in [0,1]");
    if (n_noisy < 0) throw std::invalid_argument("DriftFeatures: n_noisy < 0");
  }

  int dim() const { return TileCoder::kDim + n_noisy_; }
  double drift_rate() const { return drift_rate_; }
  const std::vector<double>& signs() const { return signs_; }

  // One drift pass over all 1600 signs; each flips independently with
  // probability drift_rate. Geometric gap sampling keeps the common
  // low-rate case O(flips) while drawing the exact iid Bernoulli law.
  void drift_step() {
    if (drift_rate_ <= 0.0) return;
    if (drift_rate_ >= 1.0) {
      for (double& s : signs_) s = -s;
      return;
    }
    const double log1mp = std::log1p(-drift_rate_);
    std::size_t pos = 0;
    while (pos < signs_.size()) {
      const double u = rng_.uniform();
      const double gap = std::floor(std::log1p(-u) / log1mp);
      if (gap >= static_cast<double>(signs_.size() - pos)) break;
      pos += static_cast<std::size_t>(gap);
      signs_[pos] = -signs_[pos];
      ++pos;
    }
  }

  // Applies the current signs to a plain tile encoding and appends the
  // freshly sampled noisy block (active entries only).
  SparseFeatures encode(const SparseFeatures& base) {
    SparseFeatures f;
    f.dim = dim();
    f.active.reserve(base.active.size() + n_noisy_);
    for (const auto& [i, v] : base.active) f.active.emplace_back(i, v * signs_[i]);
    for (int j = 0; j < n_noisy_; ++j)
      if (rng_.bernoulli(0.5)) f.active.emplace_back(TileCoder::kDim + j, 1.0);
    return f;
  }

 private:
  double drift_rate_;
  int n_noisy_;
  std::vector<double> signs_;
  Rng rng_;
};

}  // namespace metatrace
