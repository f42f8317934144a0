// SPDX-License-Identifier: Apache-2.0
#include "rmdt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rmdt/env.hpp"
#include "rmdt/errors.hpp"
#include "rmdt/io_util.hpp"

namespace rmdt {

namespace {

constexpr uint32_t kTrajFormatVersion = 1;

double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

void validate_dataset_spec(const DatasetSpec& spec) {
  if (spec.n_traj < 1) throw UsageError("dataset: n_traj must be >= 1");
  double sum = spec.expert_frac + spec.medium_frac + spec.random_frac;
  if (spec.expert_frac < 0 || spec.medium_frac < 0 || spec.random_frac < 0 ||
      std::abs(sum - 1.0) > 1e-9)
    throw UsageError("dataset: policy fractions must be >= 0 and sum to 1");
}

std::vector<int> policy_counts(const DatasetSpec& spec) {
  validate_dataset_spec(spec);
  int n_expert = static_cast<int>(spec.expert_frac * spec.n_traj);
  int n_medium = static_cast<int>(spec.medium_frac * spec.n_traj);
  int n_random = spec.n_traj - n_expert - n_medium;
  return {n_expert, n_medium, n_random};
}

int Dataset::max_length() const {
  int m = 0;
  for (const auto& t : trajectories) m = std::max(m, t.length());
  return m;
}

double Dataset::best_return() const {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& t : trajectories) best = std::max(best, t.total_return);
  return best;
}

std::map<int, PolicyStats> Dataset::policy_stats() const {
  std::map<int, PolicyStats> stats;
  for (const auto& t : trajectories) {
    auto& s = stats[t.policy_id];
    if (s.count == 0) {
      s.min_return = s.max_return = t.total_return;
    } else {
      s.min_return = std::min(s.min_return, t.total_return);
      s.max_return = std::max(s.max_return, t.total_return);
    }
    s.mean_return += t.total_return;
    ++s.count;
  }
  for (auto& [id, s] : stats) s.mean_return /= s.count;
  return stats;
}

std::string Dataset::summary() const {
  std::ostringstream out;
  out << "dataset env=" << env_id << " n_traj=" << size()
      << " d_obs=" << d_obs
      << (action.discrete ? " discrete" : " continuous") << "\n";
  int min_len = size() ? trajectories.front().length() : 0, max_len = 0;
  double mean_len = 0.0;
  for (const auto& t : trajectories) {
    min_len = std::min(min_len, t.length());
    max_len = std::max(max_len, t.length());
    mean_len += t.length();
  }
  if (size()) mean_len /= size();
  out << "  length min/mean/max = " << min_len << "/" << mean_len << "/"
      << max_len << "\n";
  for (const auto& [id, s] : policy_stats()) {
    out << "  policy " << policy_kind_from_id(id) << ": n=" << s.count
        << " return mean=" << s.mean_return << " min=" << s.min_return
        << " max=" << s.max_return << "\n";
  }
  return out.str();
}

Dataset generate_dataset(const DatasetSpec& spec, const std::string& path) {
  validate_dataset_spec(spec);
  auto env = make_env(spec.env_id);
  Dataset out;
  out.env_id = env->id();
  out.d_obs = env->d_obs();
  out.action = env->action_spec();
  out.trajectories.reserve(spec.n_traj);

  auto counts = policy_counts(spec);
  const char* kinds[3] = {"expert", "medium", "random"};
  int traj_index = 0;
  for (int p = 0; p < 3; ++p) {
    if (counts[p] == 0) continue;
    auto policy = make_policy(kinds[p], *env);
    for (int i = 0; i < counts[p]; ++i, ++traj_index) {
      Trajectory traj;
      traj.policy_id = p;
      traj.episode_seed = derive_seed(spec.seed, 2 * traj_index);
      Rng policy_rng(derive_seed(spec.seed, 2 * traj_index + 1));

      std::vector<double> obs = env->reset(traj.episode_seed);
      bool done = false;
      while (!done) {
        Action action = policy->act(*env, obs, policy_rng);
        for (double& v : action.vec) v = quantize_f32(v);
        StepResult result = env->step(action);
        traj.observations.push_back(obs);
        if (out.action.discrete)
          traj.action_ids.push_back(action.id);
        else
          traj.action_vecs.push_back(action.vec);
        traj.rewards.push_back(result.reward);
        traj.total_return += result.reward;
        obs = std::move(result.obs);
        done = result.done;
      }
      traj.returns_to_go = returns_to_go(traj.rewards);
      out.trajectories.push_back(std::move(traj));
    }
  }
  save_dataset(out, path);
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  if (dataset.trajectories.empty())
    throw UsageError("save_dataset: refusing to write an empty dataset");

  nlohmann::json header;
  header["format"] = "rmdt-traj";
  header["version"] = kTrajFormatVersion;
  header["env"] = dataset.env_id;
  header["d_obs"] = dataset.d_obs;
  header["discrete"] = dataset.action.discrete;
  header["n_actions"] = dataset.action.n_actions;
  header["d_action"] = dataset.action.d_action;
  header["n_traj"] = dataset.size();

  std::ostringstream out;
  out << header.dump() << '\n';

  for (const auto& t : dataset.trajectories) {
    int T = t.length();
    if (T < 1) throw DataError("save_dataset: empty trajectory");
    if (static_cast<int>(t.observations.size()) != T ||
        static_cast<int>(t.rewards.size()) != T)
      throw DataError("save_dataset: inconsistent trajectory arrays");
    write_u32(out, static_cast<uint32_t>(t.policy_id));
    write_u64(out, t.episode_seed);
    write_f64(out, t.total_return);
    write_u32(out, static_cast<uint32_t>(T));
    for (const auto& o : t.observations) {
      if (static_cast<int>(o.size()) != dataset.d_obs)
        throw DataError("save_dataset: observation width mismatch");
      for (double v : o) write_f32(out, static_cast<float>(v));
    }
    if (dataset.action.discrete) {
      if (static_cast<int>(t.action_ids.size()) != T)
        throw DataError("save_dataset: action count mismatch");
      for (int id : t.action_ids) write_i32(out, id);
    } else {
      if (static_cast<int>(t.action_vecs.size()) != T)
        throw DataError("save_dataset: action count mismatch");
      for (const auto& a : t.action_vecs) {
        if (static_cast<int>(a.size()) != dataset.action.d_action)
          throw DataError("save_dataset: action width mismatch");
        for (double v : a) write_f32(out, static_cast<float>(v));
      }
    }
    for (double r : t.rewards) write_f32(out, static_cast<float>(r));
  }

  std::string buf = out.str();
  uint32_t crc = crc32_bytes(buf.data(), buf.size());
  write_u32(out, crc);
  atomic_write_file(path, out.str());
}

Dataset load_dataset(const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 5) throw DataError("load_dataset: file too small: " + path);

  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_bytes(buf.data(), buf.size() - 4) != stored_crc)
    throw DataError("load_dataset: checksum mismatch: " + path);

  size_t nl = buf.find('\n');
  if (nl == std::string::npos)
    throw DataError("load_dataset: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("load_dataset: bad header: ") + e.what());
  }
  if (header.value("format", "") != "rmdt-traj")
    throw DataError("load_dataset: not a trajectory file");
  if (header.value("version", 0u) != kTrajFormatVersion)
    throw DataError("load_dataset: unsupported format version");

  Dataset out;
  out.env_id = header.at("env").get<std::string>();
  out.d_obs = header.at("d_obs").get<int>();
  out.action.discrete = header.at("discrete").get<bool>();
  out.action.n_actions = header.at("n_actions").get<int>();
  out.action.d_action = header.at("d_action").get<int>();
  int n_traj = header.at("n_traj").get<int>();
  if (n_traj < 1) throw DataError("load_dataset: no trajectories");

  std::istringstream in(buf.substr(nl + 1, buf.size() - 4 - (nl + 1)));
  out.trajectories.reserve(n_traj);
  for (int i = 0; i < n_traj; ++i) {
    Trajectory t;
    t.policy_id = static_cast<int>(read_u32(in));
    t.episode_seed = read_u64(in);
    t.total_return = read_f64(in);
    int T = static_cast<int>(read_u32(in));
    if (T < 1) throw DataError("load_dataset: empty trajectory record");
    t.observations.resize(T);
    for (auto& o : t.observations) {
      o.resize(out.d_obs);
      for (double& v : o) v = read_f32(in);
    }
    if (out.action.discrete) {
      t.action_ids.resize(T);
      for (int& id : t.action_ids) {
        id = read_i32(in);
        if (id < 0 || id >= out.action.n_actions)
          throw DataError("load_dataset: action id out of range");
      }
    } else {
      t.action_vecs.resize(T);
      for (auto& a : t.action_vecs) {
        a.resize(out.action.d_action);
        for (double& v : a) v = read_f32(in);
      }
    }
    t.rewards.resize(T);
    for (double& r : t.rewards) r = read_f32(in);
    t.returns_to_go = returns_to_go(t.rewards);
    out.trajectories.push_back(std::move(t));
  }
  if (in.peek() != std::istringstream::traits_type::eof())
    throw DataError("load_dataset: trailing bytes after last trajectory");
  return out;
}

std::unique_ptr<DatasetAdapter> make_dataset_adapter(
    const std::string& scheme) {
  throw UsageError("no dataset adapter registered for scheme: " + scheme);
}

}  // namespace rmdt
