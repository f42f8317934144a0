// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rmdt/mask.hpp"
#include "rmdt/transformer.hpp"

namespace rmdt {

struct ActionSpec {
  bool discrete = true;
  int n_actions = 0;  // discrete only
  int d_action = 0;   // continuous only

  int head_dim() const { return discrete ? n_actions : d_action; }
};

/// How gradients treat the memory handed from one segment to the next:
/// detach cuts them entirely; flow lets every later segment's loss reach
/// the producing segment, optionally truncated after `flow_hops` handoffs.
enum class GradMode { detach, flow };

std::string grad_mode_name(GradMode mode);
GradMode grad_mode_from_name(const std::string& name);

struct RmdtConfig {
  ArchMode mode = ArchMode::rmdt;

  int d_model = 128;
  int n_layers = 6;
  int n_heads = 8;
  int mlp_hidden = 0;  // 0 means 4 * d_model
  double hidden_dropout = 0.2;
  double attn_dropout = 0.05;

  int context_frames = 30;  // K, frames per segment
  int mem_tokens = 15;      // M
  int n_segments = 3;       // N, segments per training window

  double overlay_fraction = 0.0;
  bool memory_fixation = false;
  GradMode grad_mode = GradMode::flow;
  int flow_hops = 0;  // handoffs gradient may cross; 0 means no truncation
  // Diagnostics: memory_passing=false severs the handoff (every segment
  // reads the initial memory); use_memory=false removes the memory tokens
  // from the sequence entirely, collapsing rmdt mode onto dt.
  bool memory_passing = true;
  bool use_memory = true;
  // Feed write slots a distinct trainable prompt instead of the read memory.
  bool write_prompt = false;
  // Learned positional embeddings on the memory slots (off: memory tokens
  // carry no positional signal).
  bool mem_positional = false;
  XlCacheSource cache_source = XlCacheSource::same_layer;

  int d_obs = 0;
  ActionSpec action;
  int max_timestep = 1024;
  double init_stddev = 0.02;

  int effective_mem_tokens() const {
    return mode == ArchMode::rmdt && use_memory ? mem_tokens : 0;
  }
  int tokens_per_segment() const {
    return 3 * context_frames + 2 * effective_mem_tokens();
  }
  int overlay_frames() const {
    return static_cast<int>(overlay_fraction * context_frames);
  }

  void validate() const;
};

struct TrainConfig {
  double lr = 6e-4;
  double warmup_frac = 0.05;  // linear warmup over this fraction of steps
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
  double grad_clip_norm = 0.0;  // off by default
  int batch_size = 64;          // windows per optimizer step
  int epochs = 10;
  int windows_per_traj = 1;  // windows sampled per trajectory per epoch
  uint64_t seed = 0;
  int log_every = 50;

  void validate() const;
};

struct EvalConfig {
  int n_seeds = 3;
  int n_episodes = 10;
  double target_return = 1.0;
  double rtg_floor = -1e300;  // effectively no floor
  int max_steps = 0;          // 0 means the environment's own cap
  uint64_t master_seed = 0;
  // References for normalized scores; used when both are set (NaN = unset).
  double random_ref = std::numeric_limits<double>::quiet_NaN();
  double expert_ref = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
};

// JSON round-trip. Parsing is strict: unknown keys are a data error, so a
// typo in a config file cannot silently fall back to a default.
std::string to_json(const RmdtConfig& config);
std::string to_json(const TrainConfig& config);
std::string to_json(const EvalConfig& config);
RmdtConfig rmdt_config_from_json(const std::string& text);
TrainConfig train_config_from_json(const std::string& text);
EvalConfig eval_config_from_json(const std::string& text);

/// Fingerprint of the model architecture; checkpoints refuse to load into a
/// model whose hash differs.
uint64_t config_hash(const RmdtConfig& config);

struct DatasetSpec {
  std::string env_id;
  int n_traj = 0;
  double expert_frac = 1.0;
  double medium_frac = 0.0;
  double random_frac = 0.0;
  uint64_t seed = 0;
};

/// A ready-to-run bundle: dataset recipe, model, training, and evaluation.
struct Preset {
  std::string name;
  DatasetSpec dataset;
  RmdtConfig model;
  TrainConfig train;
  EvalConfig eval;
};

Preset get_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace rmdt
