// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/env.hpp"
#include "rmdt/model.hpp"

namespace rmdt {

struct RolloutResult {
  double episode_return = 0.0;
  int steps = 0;
  bool truncated = false;  // hit the step cap without env termination
  int segments_completed = 0;
  std::vector<int> action_ids;
  std::vector<std::vector<double>> action_vecs;
};

/// Test hook: replaces action selection while every other part of the
/// rollout (buffers, memory updates, RTG bookkeeping) still runs.
using ActorOverride =
    std::function<Action(const Env& env, const std::vector<double>& obs)>;

/// One target-return-conditioned episode. Frames accumulate in a K-frame
/// buffer; each step appends (RTG, obs, action placeholder), runs the model,
/// decodes the action at the newest frame greedily, steps the environment,
/// then writes the real action back into the buffer. RTG starts at the
/// target and is decremented by each received reward (floored at
/// eval.rtg_floor).
///
/// When the buffer reaches K frames a completion pass runs over the full
/// segment: its write outputs advance the memory (rmdt; fixation and
/// severed passing apply) or its hidden states become the cache (dt_xl),
/// and the next buffer starts with the last overlay_frames() frames
/// retained. dt mode instead slides a last-K window with no segment
/// boundary. `capture`, if given, records attention from completion passes
/// only, one set per segment.
RolloutResult rollout(const RmdtModel& model, Env& env, uint64_t episode_seed,
                      const EvalConfig& eval,
                      AttentionCapture* capture = nullptr,
                      const ActorOverride& actor_override = {});

struct EvalReport {
  int n_seeds = 0;
  int n_episodes = 0;
  double target_return = 0.0;
  std::vector<std::vector<double>> returns;  // [seed][episode]
  std::vector<double> seed_means;
  double mean = 0.0;
  double std_dev = 0.0;  // population convention, over all episodes
  double normalized_mean = std::numeric_limits<double>::quiet_NaN();

  std::string to_json() const;
  std::string table() const;  // human-readable block
};

/// n_seeds x n_episodes rollouts, episode seeds derived from master_seed.
/// Fresh memory per episode. Statistics: per-seed means plus mean and
/// population standard deviation over all episodes.
EvalReport evaluate(const RmdtModel& model, Env& env, const EvalConfig& eval);

/// 100 * (raw - random_ref) / (expert_ref - random_ref).
double normalize_score(double raw, double random_ref, double expert_ref);

}  // namespace rmdt
