// SPDX-License-Identifier: Apache-2.0
#include "rmdt/env.hpp"

#include <algorithm>
#include <cmath>

#include "rmdt/errors.hpp"

namespace rmdt {

// ---------------------------------------------------------------------------
// KeyDoor
// ---------------------------------------------------------------------------

KeyDoorEnv::KeyDoorEnv(Params params) : params_(params) {
  if (params_.colors < 2 || params_.key_window < 1 || params_.corridor < 1)
    throw UsageError("keydoor: bad parameters");
  if (params_.step_cap <= door_time())
    throw UsageError("keydoor: step cap must exceed the door time");
}

std::vector<double> KeyDoorEnv::reset(uint64_t episode_seed) {
  Rng rng(episode_seed);
  key_ = static_cast<int>(rng.uniform_int(0, params_.colors - 1));
  t_ = 0;
  pos_ = 0;
  done_ = false;
  return observe();
}

bool KeyDoorEnv::at_door() const { return pos_ == params_.corridor; }

std::vector<double> KeyDoorEnv::observe() const {
  std::vector<double> obs(d_obs(), 0.0);
  obs[0] = static_cast<double>(pos_) / params_.corridor;
  obs[1] = at_door() ? 1.0 : 0.0;
  if (t_ < params_.key_window) {
    obs[2 + key_] = 1.0;
  } else {
    for (int c = 0; c < params_.colors; ++c) obs[2 + c] = -1.0;
  }
  return obs;
}

StepResult KeyDoorEnv::step(const Action& action) {
  if (done_) throw UsageError("keydoor: step after episode end");
  if (action.id < 0 || action.id >= 2 + params_.colors)
    throw UsageError("keydoor: action out of range");

  double reward = 0.0;
  if (at_door() && action.id >= 2) {
    reward = (action.id - 2 == key_) ? 1.0 : 0.0;
    done_ = true;
  }
  ++t_;
  pos_ = std::clamp(t_ - params_.key_window + 1, 0, params_.corridor);
  if (!done_ && t_ >= params_.step_cap) done_ = true;  // truncation
  return {observe(), reward, done_};
}

// ---------------------------------------------------------------------------
// MassPoint
// ---------------------------------------------------------------------------

MassPointEnv::MassPointEnv(Params params) : params_(params) {
  if (params_.horizon < 1 || params_.dt <= 0.0)
    throw UsageError("masspoint: bad parameters");
}

std::vector<double> MassPointEnv::reset(uint64_t episode_seed) {
  Rng rng(episode_seed);
  target_[0] = rng.uniform(-1.0, 1.0);
  target_[1] = rng.uniform(-1.0, 1.0);
  pos_[0] = pos_[1] = 0.0;
  vel_[0] = vel_[1] = 0.0;
  t_ = 0;
  done_ = false;
  return observe();
}

std::vector<double> MassPointEnv::observe() const {
  double vis = t_ == 0 ? 1.0 : 0.0;
  return {pos_[0],           pos_[1],           vel_[0], vel_[1],
          target_[0] * vis,  target_[1] * vis,  vis};
}

StepResult MassPointEnv::step(const Action& action) {
  if (done_) throw UsageError("masspoint: step after episode end");
  if (action.vec.size() != 2)
    throw UsageError("masspoint: action must be 2-d");
  for (int i = 0; i < 2; ++i) {
    double a = std::clamp(action.vec[i], -1.0, 1.0);
    vel_[i] += a * params_.dt;
    pos_[i] += vel_[i] * params_.dt;
  }
  ++t_;
  double dx = pos_[0] - target_[0], dy = pos_[1] - target_[1];
  double reward = -std::sqrt(dx * dx + dy * dy);
  done_ = t_ >= params_.horizon;
  return {observe(), reward, done_};
}

std::unique_ptr<Env> make_env(const std::string& env_id) {
  if (env_id == "keydoor") return std::make_unique<KeyDoorEnv>();
  if (env_id == "masspoint") return std::make_unique<MassPointEnv>();
  throw UsageError("unknown environment: " + env_id);
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

namespace {

Action keydoor_expert(const KeyDoorEnv& env) {
  if (env.at_door()) return {2 + env.key_color(), {}};
  return {1, {}};  // stroll right; movement is cosmetic
}

Action keydoor_random(const KeyDoorEnv& env, Rng& rng) {
  return {static_cast<int>(rng.uniform_int(0, 1 + env.params().colors)), {}};
}

Action masspoint_expert(const MassPointEnv& env) {
  // Saturating PD controller toward the (privileged) target.
  constexpr double kP = 6.0, kD = 5.0;
  Action a;
  a.vec.resize(2);
  for (int i = 0; i < 2; ++i) {
    double force = kP * (env.target()[i] - env.position()[i]) -
                   kD * env.velocity()[i];
    a.vec[i] = std::clamp(force, -1.0, 1.0);
  }
  return a;
}

Action masspoint_random(Rng& rng) {
  return {0, {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)}};
}

class ExpertPolicy : public Policy {
 public:
  Action act(const Env& env, const std::vector<double>&, Rng&) override {
    if (auto* kd = dynamic_cast<const KeyDoorEnv*>(&env))
      return keydoor_expert(*kd);
    if (auto* mp = dynamic_cast<const MassPointEnv*>(&env))
      return masspoint_expert(*mp);
    throw UsageError("expert policy: unsupported environment");
  }
};

class RandomPolicy : public Policy {
 public:
  Action act(const Env& env, const std::vector<double>&, Rng& rng) override {
    if (auto* kd = dynamic_cast<const KeyDoorEnv*>(&env))
      return keydoor_random(*kd, rng);
    if (dynamic_cast<const MassPointEnv*>(&env)) return masspoint_random(rng);
    throw UsageError("random policy: unsupported environment");
  }
};

class MediumPolicy : public Policy {
 public:
  Action act(const Env& env, const std::vector<double>& obs,
             Rng& rng) override {
    // Epsilon draw first so the stream advances identically on both arms.
    bool follow = rng.uniform() >= 0.5;
    Action random_arm = random_.act(env, obs, rng);
    return follow ? expert_.act(env, obs, rng) : random_arm;
  }

 private:
  ExpertPolicy expert_;
  RandomPolicy random_;
};

}  // namespace

std::unique_ptr<Policy> make_policy(const std::string& kind, const Env&) {
  if (kind == "expert") return std::make_unique<ExpertPolicy>();
  if (kind == "medium") return std::make_unique<MediumPolicy>();
  if (kind == "random") return std::make_unique<RandomPolicy>();
  throw UsageError("unknown policy kind: " + kind);
}

int policy_id_from_kind(const std::string& kind) {
  if (kind == "expert") return 0;
  if (kind == "medium") return 1;
  if (kind == "random") return 2;
  throw UsageError("unknown policy kind: " + kind);
}

std::string policy_kind_from_id(int id) {
  switch (id) {
    case 0: return "expert";
    case 1: return "medium";
    case 2: return "random";
  }
  throw DataError("unknown policy id");
}

}  // namespace rmdt
