// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "rmdt/dataset.hpp"
#include "rmdt/env.hpp"
#include "rmdt/errors.hpp"
#include "test_util.hpp"

using namespace rmdt;

namespace {

DatasetSpec keydoor_spec(int n, double e, double m, double r, uint64_t seed) {
  DatasetSpec spec;
  spec.env_id = "keydoor";
  spec.n_traj = n;
  spec.expert_frac = e;
  spec.medium_frac = m;
  spec.random_frac = r;
  spec.seed = seed;
  return spec;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("policy counts floor the fractions and give random the rest") {
  auto counts = policy_counts(keydoor_spec(10, 0.55, 0.25, 0.2, 1));
  CHECK(counts == std::vector<int>{5, 2, 3});
  counts = policy_counts(keydoor_spec(7, 0.5, 0.25, 0.25, 1));
  CHECK(counts == std::vector<int>{3, 1, 3});
  counts = policy_counts(keydoor_spec(5, 1.0, 0.0, 0.0, 1));
  CHECK(counts == std::vector<int>{5, 0, 0});
}

TEST_CASE("malformed specs are rejected") {
  CHECK_THROWS_AS(validate_dataset_spec(keydoor_spec(0, 1, 0, 0, 1)),
                  UsageError);
  CHECK_THROWS_AS(validate_dataset_spec(keydoor_spec(10, 0.5, 0.2, 0.2, 1)),
                  UsageError);
  CHECK_THROWS_AS(validate_dataset_spec(keydoor_spec(10, -0.5, 1.5, 0, 1)),
                  UsageError);
  DatasetSpec bad = keydoor_spec(10, 1, 0, 0, 1);
  bad.env_id = "";
  CHECK_THROWS_AS(validate_dataset_spec(bad), UsageError);
}

TEST_CASE("expert-only keydoor data always opens the door") {
  testutil::TempDir tmp;
  Dataset ds =
      generate_dataset(keydoor_spec(20, 1, 0, 0, 3), tmp.file("e.traj"));
  REQUIRE(ds.size() == 20);
  CHECK(ds.env_id == "keydoor");
  CHECK(ds.d_obs == 6);
  for (const auto& traj : ds.trajectories) {
    CHECK(traj.policy_id == 0);
    CHECK(traj.total_return == 1.0);
    CHECK(traj.length() == 28);
    // Single terminal reward, so every suffix sum is exactly 1.
    for (double rtg : traj.returns_to_go) CHECK(rtg == 1.0);
    CHECK(traj.rewards.back() == 1.0);
  }
  auto stats = ds.policy_stats();
  REQUIRE(stats.count(0) == 1);
  CHECK(stats.at(0).count == 20);
  CHECK(stats.at(0).mean_return == 1.0);
}

TEST_CASE("mixtures tag policies and suffix sums match rewards") {
  testutil::TempDir tmp;
  Dataset ds = generate_dataset(keydoor_spec(30, 0.5, 0.2, 0.3, 7),
                                tmp.file("m.traj"));
  auto stats = ds.policy_stats();
  CHECK(stats.at(0).count == 15);
  CHECK(stats.at(1).count == 6);
  CHECK(stats.at(2).count == 9);
  for (const auto& traj : ds.trajectories) {
    auto expected = returns_to_go(traj.rewards);
    REQUIRE(traj.returns_to_go.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i)
      CHECK(traj.returns_to_go[i] == doctest::Approx(expected[i]).epsilon(1e-9));
    CHECK(traj.total_return ==
          doctest::Approx(traj.returns_to_go.front()).epsilon(1e-9));
  }
}

TEST_CASE("saved datasets reload identically") {
  testutil::TempDir tmp;
  Dataset ds = generate_dataset(keydoor_spec(12, 0.5, 0.25, 0.25, 11),
                                tmp.file("a.traj"));
  Dataset back = load_dataset(tmp.file("a.traj"));
  REQUIRE(back.size() == ds.size());
  CHECK(back.env_id == ds.env_id);
  CHECK(back.d_obs == ds.d_obs);
  CHECK(back.action.discrete == ds.action.discrete);
  CHECK(back.action.n_actions == ds.action.n_actions);
  for (int i = 0; i < ds.size(); ++i) {
    const Trajectory& x = ds.trajectories[i];
    const Trajectory& y = back.trajectories[i];
    CHECK(y.policy_id == x.policy_id);
    CHECK(y.episode_seed == x.episode_seed);
    CHECK(y.length() == x.length());
    CHECK(y.observations == x.observations);
    CHECK(y.action_ids == x.action_ids);
    CHECK(y.rewards == x.rewards);
    CHECK(y.returns_to_go == x.returns_to_go);
    CHECK(y.total_return == x.total_return);
  }
}

TEST_CASE("continuous-action datasets round-trip too") {
  testutil::TempDir tmp;
  DatasetSpec spec = keydoor_spec(6, 0.5, 0.0, 0.5, 13);
  spec.env_id = "masspoint";
  Dataset ds = generate_dataset(spec, tmp.file("mp.traj"));
  CHECK(ds.d_obs == 7);
  CHECK_FALSE(ds.action.discrete);
  Dataset back = load_dataset(tmp.file("mp.traj"));
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(back.trajectories[i].action_vecs == ds.trajectories[i].action_vecs);
    CHECK(back.trajectories[i].rewards == ds.trajectories[i].rewards);
  }
  CHECK(ds.trajectories[0].length() == 60);
}

TEST_CASE("generation is byte-for-byte reproducible") {
  testutil::TempDir tmp;
  generate_dataset(keydoor_spec(15, 0.4, 0.3, 0.3, 17), tmp.file("x.traj"));
  generate_dataset(keydoor_spec(15, 0.4, 0.3, 0.3, 17), tmp.file("y.traj"));
  CHECK(read_file(tmp.file("x.traj")) == read_file(tmp.file("y.traj")));

  generate_dataset(keydoor_spec(15, 0.4, 0.3, 0.3, 18), tmp.file("z.traj"));
  CHECK(read_file(tmp.file("x.traj")) != read_file(tmp.file("z.traj")));
}

TEST_CASE("stored actions replay to the stored observations") {
  testutil::TempDir tmp;
  Dataset ds = generate_dataset(keydoor_spec(8, 0.34, 0.33, 0.33, 19),
                                tmp.file("r.traj"));
  KeyDoorEnv env;
  for (const auto& traj : ds.trajectories) {
    std::vector<double> obs = env.reset(traj.episode_seed);
    for (int t = 0; t < traj.length(); ++t) {
      for (int j = 0; j < 6; ++j)
        CHECK(static_cast<float>(obs[j]) ==
              static_cast<float>(traj.observations[t][j]));
      StepResult r = env.step({traj.action_ids[t], {}});
      CHECK(static_cast<float>(r.reward) ==
            static_cast<float>(traj.rewards[t]));
      obs = std::move(r.obs);
      CHECK(r.done == (t == traj.length() - 1));
    }
  }
}

TEST_CASE("damaged files are refused") {
  testutil::TempDir tmp;
  std::string path = tmp.file("d.traj");
  generate_dataset(keydoor_spec(5, 1, 0, 0, 23), path);

  std::string blob = read_file(path);
  std::ofstream(tmp.file("short.traj"), std::ios::binary)
      << blob.substr(0, blob.size() / 2);
  CHECK_THROWS_AS(load_dataset(tmp.file("short.traj")), DataError);

  blob[blob.size() / 2] ^= 0x01;
  std::ofstream(tmp.file("flip.traj"), std::ios::binary) << blob;
  CHECK_THROWS_AS(load_dataset(tmp.file("flip.traj")), DataError);

  std::ofstream(tmp.file("empty.traj"), std::ios::binary).close();
  CHECK_THROWS_AS(load_dataset(tmp.file("empty.traj")), DataError);
  CHECK_THROWS_AS(load_dataset(tmp.file("missing.traj")), DataError);
}

TEST_CASE("summaries report sizes and return ranges") {
  testutil::TempDir tmp;
  Dataset ds = generate_dataset(keydoor_spec(10, 0.5, 0.0, 0.5, 29),
                                tmp.file("s.traj"));
  std::string text = ds.summary();
  CHECK(text.find("keydoor") != std::string::npos);
  CHECK(text.find("10") != std::string::npos);
  CHECK(ds.max_length() == 28);
  CHECK(ds.best_return() == 1.0);
}

TEST_CASE("a thousand trajectories generate in seconds") {
  testutil::TempDir tmp;
  auto t0 = std::chrono::steady_clock::now();
  Dataset ds = generate_dataset(keydoor_spec(1000, 1, 0, 0, 31),
                                tmp.file("big.traj"));
  auto elapsed = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  CHECK(ds.size() == 1000);
  CHECK(elapsed < 5.0);
}

}  // TEST_SUITE
