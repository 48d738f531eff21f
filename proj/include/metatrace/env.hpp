#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metatrace/rng.hpp"

namespace metatrace {

struct McState {
  double position = 0.0;
  double velocity = 0.0;
};

struct StepOutcome {
  McState next_state;
  double reward = -1.0;
  bool terminal = false;
  int steps_elapsed = 0;
};

// Classic mountain car with the standard gym MountainCar-v0 constants.
// Reward is -1 on every step; the episode ends at the goal or after
// 200 steps (the timeout is treated as termination, bootstrap target 0).
class MountainCar {
 public:
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxVelocity = 0.07;
  static constexpr double kGoalPosition = 0.5;
  static constexpr double kForce = 0.001;
  static constexpr double kGravity = 0.0025;
  static constexpr int kNumActions = 3;
  static constexpr int kMaxEpisodeSteps = 200;

  McState reset(Rng& rng) {
    state_.position = rng.uniform(-0.6, -0.4);
    state_.velocity = 0.0;
    steps_ = 0;
    return state_;
  }

  StepOutcome step(int action) {
    if (action < 0 || action >= kNumActions)
      throw std::invalid_argument("MountainCar::step: action must be 0, 1 or 2");

    double vel = state_.velocity + kForce * (action - 1) -
                 kGravity * std::cos(3.0 * state_.position);
    vel = std::clamp(vel, -kMaxVelocity, kMaxVelocity);
    double pos = std::clamp(state_.position + vel, kMinPosition, kMaxPosition);
    if (pos <= kMinPosition) vel = 0.0;  // left wall zeroes velocity

    state_ = {pos, vel};
    ++steps_;

    StepOutcome out;
    out.next_state = state_;
    out.reward = -1.0;
    out.steps_elapsed = steps_;
    out.terminal = pos >= kGoalPosition || steps_ >= kMaxEpisodeSteps;
    return out;
  }

  const McState& state() const { return state_; }
  void set_state(const McState& s) { state_ = s; }
  int steps() const { return steps_; }

 private:
  McState state_;
  int steps_ = 0;
};

}  // namespace metatrace
