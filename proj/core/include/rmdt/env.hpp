// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/rng.hpp"

namespace rmdt {

struct Action {
  int id = 0;                // discrete spaces
  std::vector<double> vec;   // continuous spaces
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string id() const = 0;
  virtual int d_obs() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual int step_cap() const = 0;
  virtual std::vector<double> reset(uint64_t episode_seed) = 0;
  virtual StepResult step(const Action& action) = 0;
};

/// Corridor memory probe. The key color is visible only for the first
/// key_window steps; the agent is carried down the corridor one cell per
/// step and reaches the door at t = key_window + corridor - 1, where only a
/// matching pick scores. Movement actions are accepted but do not steer, so
/// any policy that picks without key knowledge succeeds with probability
/// exactly 1/colors.
///
/// Observation: [position/corridor, at_door, key one-hot x colors], with the
/// one-hot replaced by -1 sentinels once the key window has passed.
/// Actions: 0 left, 1 right, 2+c pick color c.
class KeyDoorEnv : public Env {
 public:
  struct Params {
    int colors = 4;
    int key_window = 3;
    int corridor = 25;
    int step_cap = 40;
  };

  KeyDoorEnv() : KeyDoorEnv(Params{}) {}
  explicit KeyDoorEnv(Params params);

  std::string id() const override { return "keydoor"; }
  int d_obs() const override { return 2 + params_.colors; }
  ActionSpec action_spec() const override {
    return {true, 2 + params_.colors, 0};
  }
  int step_cap() const override { return params_.step_cap; }
  std::vector<double> reset(uint64_t episode_seed) override;
  StepResult step(const Action& action) override;

  const Params& params() const { return params_; }
  // Privileged accessors for scripted policies.
  int key_color() const { return key_; }
  bool at_door() const;
  int door_time() const { return params_.key_window + params_.corridor - 1; }

 private:
  std::vector<double> observe() const;

  Params params_;
  int key_ = 0;
  int t_ = 0;
  int pos_ = 0;
  bool done_ = true;
};

/// Double-integrator point mass on the plane. The target is revealed only
/// in the t=0 observation; reward each step is the negative distance to the
/// target after the transition. Fixed horizon.
///
/// Observation: [px, py, vx, vy, tx*vis, ty*vis, vis]. Action: force in
/// [-1,1]^2 (clamped).
class MassPointEnv : public Env {
 public:
  struct Params {
    int horizon = 60;
    double dt = 0.1;
  };

  MassPointEnv() : MassPointEnv(Params{}) {}
  explicit MassPointEnv(Params params);

  std::string id() const override { return "masspoint"; }
  int d_obs() const override { return 7; }
  ActionSpec action_spec() const override { return {false, 0, 2}; }
  int step_cap() const override { return params_.horizon; }
  std::vector<double> reset(uint64_t episode_seed) override;
  StepResult step(const Action& action) override;

  const Params& params() const { return params_; }
  const double* target() const { return target_; }
  const double* position() const { return pos_; }
  const double* velocity() const { return vel_; }

 private:
  std::vector<double> observe() const;

  Params params_;
  double pos_[2] = {0, 0};
  double vel_[2] = {0, 0};
  double target_[2] = {0, 0};
  int t_ = 0;
  bool done_ = true;
};

std::unique_ptr<Env> make_env(const std::string& env_id);

/// Scripted data-collection policies. `expert` plays optimally using
/// privileged env state, `medium` follows the expert with probability 0.5
/// per step and acts uniformly otherwise, `random` is uniform.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action act(const Env& env, const std::vector<double>& obs,
                     Rng& rng) = 0;
};

/// kind: "expert" | "medium" | "random" (policy ids 0 | 1 | 2).
std::unique_ptr<Policy> make_policy(const std::string& kind, const Env& env);
int policy_id_from_kind(const std::string& kind);
std::string policy_kind_from_id(int id);

}  // namespace rmdt
