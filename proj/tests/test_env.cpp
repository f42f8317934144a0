// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <doctest.h>

#include "rmdt/env.hpp"
#include "rmdt/errors.hpp"

using namespace rmdt;

namespace {

double run_episode(Env& env, Policy& policy, uint64_t episode_seed,
                   Rng& policy_rng) {
  std::vector<double> obs = env.reset(episode_seed);
  double total = 0.0;
  for (int t = 0; t < env.step_cap() + 1; ++t) {
    StepResult r = env.step(policy.act(env, obs, policy_rng));
    total += r.reward;
    obs = std::move(r.obs);
    if (r.done) return total;
  }
  throw std::runtime_error("episode exceeded the step cap");
}

}  // namespace

TEST_SUITE("env") {

TEST_CASE("keydoor conveyor ignores movement choices") {
  KeyDoorEnv left, right;
  std::vector<double> a = left.reset(5);
  std::vector<double> b = right.reset(5);
  REQUIRE(a == b);
  for (int t = 0; t < left.door_time(); ++t) {
    StepResult ra = left.step({0, {}});
    StepResult rb = right.step({1, {}});
    CHECK(ra.obs == rb.obs);
    CHECK(ra.reward == 0.0);
    CHECK_FALSE(ra.done);
  }
  CHECK(left.at_door());
}

TEST_CASE("keydoor hides the key after the viewing window") {
  KeyDoorEnv env;
  std::vector<double> obs = env.reset(12);
  int key = env.key_color();
  REQUIRE(key >= 0);
  REQUIRE(key < 4);
  for (int t = 0; t < 10; ++t) {
    if (t < env.params().key_window) {
      for (int c = 0; c < 4; ++c)
        CHECK(obs[2 + c] == (c == key ? 1.0 : 0.0));
    } else {
      for (int c = 0; c < 4; ++c) CHECK(obs[2 + c] == -1.0);
    }
    obs = env.step({1, {}}).obs;
  }
}

TEST_CASE("keydoor scores only a matching pick at the door") {
  KeyDoorEnv env;
  env.reset(33);
  int key = env.key_color();
  for (int t = 0; t < env.door_time(); ++t) {
    StepResult r = env.step({1, {}});
    if (t + 1 == env.door_time()) CHECK(r.obs[1] == 1.0);
  }
  REQUIRE(env.at_door());
  StepResult r = env.step({2 + key, {}});
  CHECK(r.reward == 1.0);
  CHECK(r.done);

  KeyDoorEnv wrong;
  wrong.reset(33);
  for (int t = 0; t < wrong.door_time(); ++t) wrong.step({1, {}});
  StepResult w = wrong.step({2 + ((key + 1) % 4), {}});
  CHECK(w.reward == 0.0);
  CHECK(w.done);

  // Picking early, away from the door, neither scores nor ends.
  KeyDoorEnv early;
  early.reset(33);
  StepResult e = early.step({2 + key, {}});
  CHECK(e.reward == 0.0);
  CHECK_FALSE(e.done);
}

TEST_CASE("keydoor truncates at the step cap without a pick") {
  KeyDoorEnv env;
  env.reset(7);
  StepResult r;
  int steps = 0;
  do {
    r = env.step({1, {}});
    ++steps;
  } while (!r.done);
  CHECK(steps == env.params().step_cap);
  CHECK_THROWS_AS(env.step({1, {}}), UsageError);
}

TEST_CASE("keydoor episodes are a pure function of the seed") {
  KeyDoorEnv a, b;
  REQUIRE(a.reset(99) == b.reset(99));
  CHECK(a.key_color() == b.key_color());

  // Seeds cover all colors.
  bool seen[4] = {false, false, false, false};
  for (uint64_t seed = 0; seed < 40; ++seed) {
    a.reset(seed);
    seen[a.key_color()] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("random play opens the door a quarter of the time") {
  KeyDoorEnv env;
  auto policy = make_policy("random", env);
  Rng rng(2024);
  int wins = 0;
  const int n = 800;
  for (int i = 0; i < n; ++i)
    wins += run_episode(env, *policy, 1000 + i, rng) > 0.5 ? 1 : 0;
  // Binomial(800, 1/4): five sigma is about 61.
  CHECK(wins > 139);
  CHECK(wins < 261);
}

TEST_CASE("keydoor expert always scores") {
  KeyDoorEnv env;
  auto policy = make_policy("expert", env);
  Rng rng(1);
  for (uint64_t seed = 50; seed < 60; ++seed)
    CHECK(run_episode(env, *policy, seed, rng) == 1.0);
}

TEST_CASE("medium play lands between random and expert") {
  KeyDoorEnv env;
  auto policy = make_policy("medium", env);
  Rng rng(77);
  double total = 0.0;
  const int n = 400;
  for (int i = 0; i < n; ++i) total += run_episode(env, *policy, 4000 + i, rng);
  double mean = total / n;
  CHECK(mean > 0.35);
  CHECK(mean < 0.95);
}

TEST_CASE("masspoint stands still under zero force") {
  MassPointEnv env;
  std::vector<double> obs = env.reset(3);
  double tx = obs[4], ty = obs[5];
  CHECK(obs[6] == 1.0);
  double expected = -std::sqrt(tx * tx + ty * ty);
  for (int t = 0; t < env.params().horizon; ++t) {
    StepResult r = env.step({0, {0.0, 0.0}});
    CHECK(r.obs[0] == 0.0);
    CHECK(r.obs[1] == 0.0);
    CHECK(r.reward == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.obs[6] == 0.0);
    CHECK(r.obs[4] == 0.0);
    CHECK(r.obs[5] == 0.0);
    CHECK(r.done == (t == env.params().horizon - 1));
  }
}

TEST_CASE("masspoint integrates forces with explicit euler") {
  MassPointEnv env;
  env.reset(5);
  double dt = env.params().dt;
  for (int n = 1; n <= 10; ++n) {
    env.step({0, {1.0, -0.5}});
    CHECK(env.velocity()[0] == doctest::Approx(n * dt).epsilon(1e-12));
    CHECK(env.velocity()[1] == doctest::Approx(-0.5 * n * dt).epsilon(1e-12));
    double pos = dt * dt * n * (n + 1) / 2.0;
    CHECK(env.position()[0] == doctest::Approx(pos).epsilon(1e-12));
    CHECK(env.position()[1] == doctest::Approx(-0.5 * pos).epsilon(1e-12));
  }
}

TEST_CASE("masspoint clamps forces to the unit box") {
  MassPointEnv a, b;
  a.reset(8);
  b.reset(8);
  for (int t = 0; t < 5; ++t) {
    StepResult ra = a.step({0, {7.0, -9.0}});
    StepResult rb = b.step({0, {1.0, -1.0}});
    CHECK(ra.obs == rb.obs);
  }
  CHECK_THROWS_AS(a.step({0, {1.0}}), UsageError);
}

TEST_CASE("masspoint controller beats drifting") {
  MassPointEnv env;
  auto expert = make_policy("expert", env);
  auto random = make_policy("random", env);
  Rng rng(11);
  for (uint64_t seed = 200; seed < 210; ++seed) {
    double guided = run_episode(env, *expert, seed, rng);
    double drift = run_episode(env, *random, seed, rng);
    CHECK(guided > drift);
    CHECK(guided > -10.0);  // settles near the target quickly
  }
}

TEST_CASE("environment factory knows its catalog") {
  auto kd = make_env("keydoor");
  CHECK(kd->id() == "keydoor");
  CHECK(kd->d_obs() == 6);
  CHECK(kd->action_spec().discrete);
  CHECK(kd->action_spec().n_actions == 6);

  auto mp = make_env("masspoint");
  CHECK(mp->id() == "masspoint");
  CHECK(mp->d_obs() == 7);
  CHECK_FALSE(mp->action_spec().discrete);
  CHECK(mp->action_spec().d_action == 2);

  CHECK_THROWS_AS(make_env("cartpole"), UsageError);
}

TEST_CASE("policy kinds map to stable ids") {
  CHECK(policy_id_from_kind("expert") == 0);
  CHECK(policy_id_from_kind("medium") == 1);
  CHECK(policy_id_from_kind("random") == 2);
  CHECK(policy_kind_from_id(1) == "medium");
  CHECK_THROWS_AS(policy_id_from_kind("greedy"), UsageError);
  CHECK_THROWS_AS(policy_kind_from_id(3), DataError);

  KeyDoorEnv env;
  CHECK_THROWS_AS(make_policy("greedy", env), UsageError);
}

TEST_CASE("bad keydoor parameters are rejected") {
  KeyDoorEnv::Params p;
  p.step_cap = 20;  // door time is 27 with defaults
  CHECK_THROWS_AS(KeyDoorEnv{p}, UsageError);
  KeyDoorEnv::Params c;
  c.colors = 1;
  CHECK_THROWS_AS(KeyDoorEnv{c}, UsageError);
  MassPointEnv::Params m;
  m.dt = 0.0;
  CHECK_THROWS_AS(MassPointEnv{m}, UsageError);
}

}  // TEST_SUITE
