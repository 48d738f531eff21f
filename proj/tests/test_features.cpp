#include <catch2/catch_amalgamated.hpp>

using Catch::Approx;

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "metatrace/features.hpp"

using namespace metatrace;

namespace {

std::set<int> indices(const SparseFeatures& f) {
  std::set<int> s;
  for (const auto& [i, v] : f.active) s.insert(i);
  return s;
}

}  // namespace

TEST_CASE("tile encoding activates exactly one index per tiling") {
  TileCoder coder;
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const double p = rng.uniform(MountainCar::kMinPosition, MountainCar::kMaxPosition);
    const double v = rng.uniform(-MountainCar::kMaxVelocity, MountainCar::kMaxVelocity);
    SparseFeatures f = coder.encode(p, v);
    REQUIRE(f.dim == 1600);
    REQUIRE(f.active.size() == 16);
    REQUIRE(indices(f).size() == 16);  // no duplicates
    for (int t = 0; t < 16; ++t) {
      const int idx = f.active[t].first;
      REQUIRE(idx >= 100 * t);
      REQUIRE(idx < 100 * (t + 1));
      REQUIRE(f.active[t].second == 1.0);
    }
  }
}

TEST_CASE("tile encoding is deterministic") {
  TileCoder coder;
  REQUIRE(indices(coder.encode(-0.37, 0.021)) == indices(coder.encode(-0.37, 0.021)));
}

TEST_CASE("nearby states in the same cells share features; opposite corners are disjoint") {
  TileCoder coder;
  // both states sit at normalized coordinates 0.001 and 0.002, which fall in
  // cell 0 for every one of the 16 offset tilings (enumerated by hand: the
  // shifted coordinates 10u + t/16 never cross an integer between them)
  const double p1 = MountainCar::kMinPosition + 0.001 * 1.8;
  const double p2 = MountainCar::kMinPosition + 0.002 * 1.8;
  const double v1 = -MountainCar::kMaxVelocity + 0.001 * 0.14;
  const double v2 = -MountainCar::kMaxVelocity + 0.002 * 0.14;
  REQUIRE(indices(coder.encode(p1, v1)) == indices(coder.encode(p2, v2)));

  auto lo = indices(coder.encode(MountainCar::kMinPosition, -MountainCar::kMaxVelocity));
  auto hi = indices(coder.encode(MountainCar::kMaxPosition, MountainCar::kMaxVelocity));
  std::vector<int> common;
  std::set_intersection(lo.begin(), lo.end(), hi.begin(), hi.end(),
                        std::back_inserter(common));
  REQUIRE(common.empty());
}

TEST_CASE("tile encoding rejects out-of-range states") {
  TileCoder coder;
  REQUIRE_THROWS_AS(coder.encode(-1.3, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(coder.encode(0.0, 0.08), std::invalid_argument);
}

TEST_CASE("a dense state grid covers all 1600 features") {
  TileCoder coder;
  std::set<int> seen;
  const int grid = 200;
  for (int i = 0; i <= grid; ++i)
    for (int j = 0; j <= grid; ++j) {
      const double p =
          std::min(MountainCar::kMinPosition + 1.8 * i / grid, MountainCar::kMaxPosition);
      const double v =
          std::min(-MountainCar::kMaxVelocity + 0.14 * j / grid, MountainCar::kMaxVelocity);
      for (const auto& [idx, val] : coder.encode(p, v).active) seen.insert(idx);
    }
  REQUIRE(seen.size() == 1600);
}

TEST_CASE("drift rate 0 leaves signs fixed; rate 1 flips every sign") {
  DriftFeatures still(0.0, 32, 1);
  still.drift_step();
  REQUIRE(std::all_of(still.signs().begin(), still.signs().end(),
                      [](double s) { return s == 1.0; }));

  DriftFeatures flip(1.0, 32, 1);
  flip.drift_step();
  REQUIRE(std::all_of(flip.signs().begin(), flip.signs().end(),
                      [](double s) { return s == -1.0; }));
  flip.drift_step();
  REQUIRE(std::all_of(flip.signs().begin(), flip.signs().end(),
                      [](double s) { return s == 1.0; }));
}

TEST_CASE("drift flip count over 1e6 feature-steps matches the binomial mean") {
  // drift rate 6e-6, 625 steps x 1600 features -> expectation 6 flips
  DriftFeatures drift(6e-6, 0, 12345);
  long flips = 0;
  std::vector<double> prev = drift.signs();
  for (int t = 0; t < 625; ++t) {
    drift.drift_step();
    for (int i = 0; i < 1600; ++i)
      if (drift.signs()[i] != prev[i]) ++flips;
    prev = drift.signs();
  }
  REQUIRE(flips >= 1);
  REQUIRE(flips <= 18);  // ~5 sigma around a Poisson(6) count
}

TEST_CASE("drift encoding applies signs and appends the noisy tail") {
  TileCoder coder;
  SparseFeatures base = coder.encode(-0.5, 0.0);

  SECTION("identity signs reproduce the base tile values") {
    DriftFeatures drift(0.0, 32, 3);
    SparseFeatures f = drift.encode(base);
    REQUIRE(f.dim == 1632);
    for (std::size_t k = 0; k < base.active.size(); ++k) {
      REQUIRE(f.active[k].first == base.active[k].first);
      REQUIRE(f.active[k].second == 1.0);
    }
    for (std::size_t k = base.active.size(); k < f.active.size(); ++k) {
      REQUIRE(f.active[k].first >= 1600);
      REQUIRE(f.active[k].first < 1632);
      REQUIRE(f.active[k].second == 1.0);
    }
  }

  SECTION("a flipped sign reports -1 for that active feature") {
    DriftFeatures drift(1.0, 0, 3);
    drift.drift_step();  // all signs now -1
    SparseFeatures f = drift.encode(base);
    for (const auto& [i, v] : f.active) REQUIRE(v == -1.0);
  }

  SECTION("drift never changes which tile indices are active") {
    DriftFeatures drift(0.01, 32, 3);
    for (int t = 0; t < 100; ++t) {
      drift.drift_step();
      SparseFeatures f = drift.encode(base);
      for (std::size_t k = 0; k < base.active.size(); ++k)
        REQUIRE(f.active[k].first == base.active[k].first);
    }
  }
}

TEST_CASE("noisy features average 16 active per encode") {
  TileCoder coder;
  SparseFeatures base = coder.encode(-0.5, 0.0);
  DriftFeatures drift(0.0, 32, 77);
  long active = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    active += static_cast<long>(drift.encode(base).active.size()) - 16;
  const double mean = static_cast<double>(active) / n;
  REQUIRE(std::abs(mean - 16.0) < 0.2);
}

TEST_CASE("noisy features are independent across time-steps") {
  // coarse lag-1 correlation check on the first noisy feature
  TileCoder coder;
  SparseFeatures base = coder.encode(-0.5, 0.0);
  DriftFeatures drift(0.0, 32, 99);
  const int n = 20000;
  std::vector<int> x(n);
  for (int t = 0; t < n; ++t) {
    SparseFeatures f = drift.encode(base);
    x[t] = 0;
    for (const auto& [i, v] : f.active)
      if (i == 1600) x[t] = 1;
  }
  double mean = 0.0;
  for (int v : x) mean += v;
  mean /= n;
  double cov = 0.0, var = 0.0;
  for (int t = 0; t + 1 < n; ++t) cov += (x[t] - mean) * (x[t + 1] - mean);
  for (int t = 0; t < n; ++t) var += (x[t] - mean) * (x[t] - mean);
  REQUIRE(std::abs(cov / var) < 0.03);
  REQUIRE(std::abs(mean - 0.5) < 0.02);
}
