// SPDX-License-Identifier: Apache-2.0
#include "rmdt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rmdt/errors.hpp"

namespace rmdt {

namespace {

struct BufferFrame {
  double rtg = 0.0;
  std::vector<double> obs;
  int action_id = 0;
  std::vector<double> action_vec;
  bool action_known = false;
  int timestep = 0;
};

SegmentData buffer_to_segment(const std::vector<BufferFrame>& buffer,
                              const RmdtConfig& config) {
  int frames = static_cast<int>(buffer.size());
  SegmentData seg;
  seg.frames = frames;
  seg.valid_frames = frames;
  seg.rtg.resize(frames);
  seg.obs.resize(static_cast<size_t>(frames) * config.d_obs);
  seg.timesteps.resize(frames);
  seg.loss_weights.assign(frames, 0.0);
  if (config.action.discrete)
    seg.action_ids.resize(frames);
  else
    seg.action_vecs.assign(
        static_cast<size_t>(frames) * config.action.d_action, 0.0);
  for (int i = 0; i < frames; ++i) {
    const BufferFrame& f = buffer[i];
    seg.rtg[i] = f.rtg;
    std::copy(f.obs.begin(), f.obs.end(),
              seg.obs.begin() + static_cast<size_t>(i) * config.d_obs);
    seg.timesteps[i] = f.timestep;
    if (config.action.discrete) {
      seg.action_ids[i] = f.action_known ? f.action_id
                                         : config.action.n_actions;
    } else if (f.action_known) {
      std::copy(f.action_vec.begin(), f.action_vec.end(),
                seg.action_vecs.begin() +
                    static_cast<size_t>(i) * config.action.d_action);
    }
  }
  return seg;
}

}  // namespace

RolloutResult rollout(const RmdtModel& model, Env& env, uint64_t episode_seed,
                      const EvalConfig& eval, AttentionCapture* capture,
                      const ActorOverride& actor_override) {
  const RmdtConfig& config = model.config();
  if (config.d_obs != env.d_obs() ||
      config.action.discrete != env.action_spec().discrete)
    throw UsageError("rollout: model/environment space mismatch");
  if (std::isnan(eval.target_return))
    throw UsageError(
        "rollout: target_return is unset; resolve it from dataset "
        "statistics or set a value");

  NoGradGuard no_grad;
  int K = config.context_frames;
  int step_cap = eval.max_steps > 0 ? eval.max_steps : env.step_cap();
  bool sliding = config.mode == ArchMode::dt;
  bool use_cache = config.mode == ArchMode::dt_xl;
  int retain = config.overlay_frames();

  MemoryState memory = model.fresh_memory(/*detached=*/true);
  XlCache cache;
  std::vector<BufferFrame> buffer;
  buffer.reserve(K);

  RolloutResult result;
  std::vector<double> obs = env.reset(episode_seed);
  double rtg = eval.target_return;
  bool done = false;

  while (!done && result.steps < step_cap) {
    if (sliding && static_cast<int>(buffer.size()) == K)
      buffer.erase(buffer.begin());

    BufferFrame frame;
    frame.rtg = rtg;
    frame.obs = obs;
    frame.timestep = result.steps;
    buffer.push_back(std::move(frame));

    SegmentData segment = buffer_to_segment(buffer, config);
    ModelForwardOptions options;
    if (use_cache) options.cache = &cache;
    SegmentForward forward =
        model.forward_segment(segment, memory.vectors, options);

    Action action;
    int last = static_cast<int>(buffer.size()) - 1;
    if (actor_override) {
      action = actor_override(env, obs);
    } else if (config.action.discrete) {
      action.id = model.predict_action_id(forward.action_out, last);
    } else {
      action.vec = model.predict_action_vec(forward.action_out, last);
    }

    StepResult sr = env.step(action);
    buffer[last].action_known = true;
    if (config.action.discrete) {
      buffer[last].action_id = action.id;
      result.action_ids.push_back(action.id);
    } else {
      buffer[last].action_vec = action.vec;
      result.action_vecs.push_back(action.vec);
    }

    result.episode_return += sr.reward;
    rtg = std::max(eval.rtg_floor, rtg - sr.reward);
    obs = std::move(sr.obs);
    done = sr.done;
    ++result.steps;

    if (!sliding && static_cast<int>(buffer.size()) == K) {
      // Completion pass: the segment with all actions known produces the
      // write memory / cache that the next segment reads.
      SegmentData full = buffer_to_segment(buffer, config);
      ModelForwardOptions complete;
      complete.capture = capture;
      if (use_cache) {
        complete.cache = &cache;
        complete.want_cache = true;
      }
      SegmentForward cf = model.forward_segment(full, memory.vectors, complete);
      memory = model.advance_memory(memory, cf.write_out);
      if (use_cache) cache = std::move(cf.new_cache);
      ++result.segments_completed;
      if (retain > 0)
        buffer.erase(buffer.begin(), buffer.end() - retain);
      else
        buffer.clear();
    }
  }
  result.truncated = !done;
  return result;
}

EvalReport evaluate(const RmdtModel& model, Env& env, const EvalConfig& eval) {
  eval.validate();
  EvalReport report;
  report.n_seeds = eval.n_seeds;
  report.n_episodes = eval.n_episodes;
  report.target_return = eval.target_return;
  report.returns.resize(eval.n_seeds);
  report.seed_means.resize(eval.n_seeds, 0.0);

  double sum = 0.0;
  for (int s = 0; s < eval.n_seeds; ++s) {
    uint64_t seed_stream = derive_seed(eval.master_seed, s);
    report.returns[s].resize(eval.n_episodes);
    for (int e = 0; e < eval.n_episodes; ++e) {
      uint64_t episode_seed = derive_seed(seed_stream, e);
      RolloutResult r = rollout(model, env, episode_seed, eval);
      report.returns[s][e] = r.episode_return;
      report.seed_means[s] += r.episode_return;
      sum += r.episode_return;
    }
    report.seed_means[s] /= eval.n_episodes;
  }

  int total = eval.n_seeds * eval.n_episodes;
  report.mean = sum / total;
  double sq = 0.0;
  for (const auto& per_seed : report.returns)
    for (double r : per_seed) sq += (r - report.mean) * (r - report.mean);
  report.std_dev = std::sqrt(sq / total);

  if (!std::isnan(eval.random_ref) && !std::isnan(eval.expert_ref))
    report.normalized_mean =
        normalize_score(report.mean, eval.random_ref, eval.expert_ref);
  return report;
}

double normalize_score(double raw, double random_ref, double expert_ref) {
  if (std::isnan(random_ref) || std::isnan(expert_ref) ||
      expert_ref == random_ref)
    throw UsageError("normalize_score: degenerate reference returns");
  return 100.0 * (raw - random_ref) / (expert_ref - random_ref);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["n_seeds"] = n_seeds;
  j["n_episodes"] = n_episodes;
  j["target_return"] = target_return;
  j["returns"] = returns;
  j["seed_means"] = seed_means;
  j["mean"] = mean;
  j["std"] = std_dev;  // population convention over all episodes
  if (std::isnan(normalized_mean))
    j["normalized_mean"] = nullptr;
  else
    j["normalized_mean"] = normalized_mean;
  return j.dump(2);
}

std::string EvalReport::table() const {
  std::ostringstream out;
  out << "eval: " << n_seeds << " seeds x " << n_episodes
      << " episodes, target return " << target_return << "\n";
  for (size_t s = 0; s < returns.size(); ++s) {
    out << "  seed " << s << ": mean " << seed_means[s] << " returns [";
    for (size_t e = 0; e < returns[s].size(); ++e) {
      if (e) out << ", ";
      out << returns[s][e];
    }
    out << "]\n";
  }
  out << "  overall mean " << mean << " +- " << std_dev
      << " (population std over all episodes)\n";
  if (!std::isnan(normalized_mean))
    out << "  normalized score " << normalized_mean << "\n";
  return out.str();
}

}  // namespace rmdt
