// SPDX-License-Identifier: Apache-2.0
#include "rmdt/config.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "rmdt/errors.hpp"
#include "rmdt/io_util.hpp"

namespace rmdt {

using nlohmann::json;

std::string grad_mode_name(GradMode mode) {
  return mode == GradMode::detach ? "detach" : "flow";
}

GradMode grad_mode_from_name(const std::string& name) {
  if (name == "detach") return GradMode::detach;
  if (name == "flow") return GradMode::flow;
  throw UsageError("unknown grad mode: " + name);
}

namespace {

std::string cache_source_name(XlCacheSource source) {
  return source == XlCacheSource::same_layer ? "same_layer" : "layer_below";
}

XlCacheSource cache_source_from_name(const std::string& name) {
  if (name == "same_layer") return XlCacheSource::same_layer;
  if (name == "layer_below") return XlCacheSource::layer_below;
  throw UsageError("unknown cache source: " + name);
}

json parse(const std::string& text, const char* what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw DataError(std::string("malformed JSON in ") + what);
  if (!j.is_object())
    throw DataError(std::string(what) + ": expected a JSON object");
  return j;
}

// Strict field reader: every consumed key is crossed off, and leftovers are
// rejected so config typos cannot silently become defaults.
struct FieldReader {
  json obj;
  const char* what;

  template <typename T>
  void get(const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw DataError(std::string(what) + ": bad value for key '" + key + "'");
    }
    obj.erase(it);
  }

  void get_enum(const char* key, std::string& out) { get(key, out); }

  // NaN serializes as null, so unset-by-NaN fields round-trip through it.
  void get_nullable(const char* key, double& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    if (it->is_null()) {
      out = std::numeric_limits<double>::quiet_NaN();
      obj.erase(it);
      return;
    }
    get(key, out);
  }

  void finish() const {
    if (!obj.empty())
      throw DataError(std::string(what) + ": unknown key '" +
                      obj.begin().key() + "'");
  }
};

}  // namespace

void RmdtConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0)
    throw UsageError("config: model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw UsageError("config: d_model must be divisible by n_heads");
  if (context_frames < 1) throw UsageError("config: context_frames must be >= 1");
  if (n_segments < 1) throw UsageError("config: n_segments must be >= 1");
  if (mode == ArchMode::rmdt && use_memory && mem_tokens < 1)
    throw UsageError("config: rmdt mode needs mem_tokens >= 1");
  if (mem_tokens < 0) throw UsageError("config: mem_tokens must be >= 0");
  if (overlay_fraction < 0.0 || overlay_fraction >= 1.0)
    throw UsageError("config: overlay_fraction must be in [0, 1)");
  if (overlay_frames() >= context_frames && overlay_fraction > 0.0)
    throw UsageError("config: overlay leaves no fresh frames per segment");
  if (hidden_dropout < 0.0 || hidden_dropout >= 1.0 || attn_dropout < 0.0 ||
      attn_dropout >= 1.0)
    throw UsageError("config: dropout rates must be in [0, 1)");
  if (flow_hops < 0) throw UsageError("config: flow_hops must be >= 0");
  if (d_obs < 1) throw UsageError("config: d_obs must be >= 1");
  if (action.head_dim() < 1)
    throw UsageError("config: action space has no dimensions");
  if (max_timestep < 1) throw UsageError("config: max_timestep must be >= 1");
  if (init_stddev <= 0.0) throw UsageError("config: init_stddev must be > 0");
  if (mode == ArchMode::dt && n_segments != 1)
    throw UsageError("config: dt mode is single-segment (n_segments = 1)");
}

void TrainConfig::validate() const {
  if (lr <= 0.0) throw UsageError("config: lr must be > 0");
  if (warmup_frac < 0.0 || warmup_frac > 1.0)
    throw UsageError("config: warmup_frac must be in [0, 1]");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw UsageError("config: betas must be in (0, 1)");
  if (epsilon <= 0.0) throw UsageError("config: epsilon must be > 0");
  if (weight_decay < 0.0) throw UsageError("config: weight_decay must be >= 0");
  if (batch_size < 1) throw UsageError("config: batch_size must be >= 1");
  if (epochs < 1) throw UsageError("config: epochs must be >= 1");
  if (windows_per_traj < 1)
    throw UsageError("config: windows_per_traj must be >= 1");
}

void EvalConfig::validate() const {
  if (n_seeds < 1 || n_episodes < 1)
    throw UsageError("config: eval needs n_seeds >= 1 and n_episodes >= 1");
  if (max_steps < 0) throw UsageError("config: max_steps must be >= 0");
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

std::string to_json(const RmdtConfig& c) {
  json j;
  j["mode"] = arch_mode_name(c.mode);
  j["d_model"] = c.d_model;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["mlp_hidden"] = c.mlp_hidden;
  j["hidden_dropout"] = c.hidden_dropout;
  j["attn_dropout"] = c.attn_dropout;
  j["context_frames"] = c.context_frames;
  j["mem_tokens"] = c.mem_tokens;
  j["n_segments"] = c.n_segments;
  j["overlay_fraction"] = c.overlay_fraction;
  j["memory_fixation"] = c.memory_fixation;
  j["grad_mode"] = grad_mode_name(c.grad_mode);
  j["flow_hops"] = c.flow_hops;
  j["memory_passing"] = c.memory_passing;
  j["use_memory"] = c.use_memory;
  j["write_prompt"] = c.write_prompt;
  j["mem_positional"] = c.mem_positional;
  j["cache_source"] = cache_source_name(c.cache_source);
  j["d_obs"] = c.d_obs;
  j["action_discrete"] = c.action.discrete;
  j["n_actions"] = c.action.n_actions;
  j["d_action"] = c.action.d_action;
  j["max_timestep"] = c.max_timestep;
  j["init_stddev"] = c.init_stddev;
  return j.dump(2);
}

RmdtConfig rmdt_config_from_json(const std::string& text) {
  FieldReader r{parse(text, "model config"), "model config"};
  RmdtConfig c;
  std::string mode = arch_mode_name(c.mode);
  std::string gmode = grad_mode_name(c.grad_mode);
  std::string csource = cache_source_name(c.cache_source);
  r.get_enum("mode", mode);
  r.get("d_model", c.d_model);
  r.get("n_layers", c.n_layers);
  r.get("n_heads", c.n_heads);
  r.get("mlp_hidden", c.mlp_hidden);
  r.get("hidden_dropout", c.hidden_dropout);
  r.get("attn_dropout", c.attn_dropout);
  r.get("context_frames", c.context_frames);
  r.get("mem_tokens", c.mem_tokens);
  r.get("n_segments", c.n_segments);
  r.get("overlay_fraction", c.overlay_fraction);
  r.get("memory_fixation", c.memory_fixation);
  r.get_enum("grad_mode", gmode);
  r.get("flow_hops", c.flow_hops);
  r.get("memory_passing", c.memory_passing);
  r.get("use_memory", c.use_memory);
  r.get("write_prompt", c.write_prompt);
  r.get("mem_positional", c.mem_positional);
  r.get_enum("cache_source", csource);
  r.get("d_obs", c.d_obs);
  r.get("action_discrete", c.action.discrete);
  r.get("n_actions", c.action.n_actions);
  r.get("d_action", c.action.d_action);
  r.get("max_timestep", c.max_timestep);
  r.get("init_stddev", c.init_stddev);
  r.finish();
  c.mode = arch_mode_from_name(mode);
  c.grad_mode = grad_mode_from_name(gmode);
  c.cache_source = cache_source_from_name(csource);
  return c;
}

std::string to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["warmup_frac"] = c.warmup_frac;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["weight_decay"] = c.weight_decay;
  j["grad_clip_norm"] = c.grad_clip_norm;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["windows_per_traj"] = c.windows_per_traj;
  j["seed"] = c.seed;
  j["log_every"] = c.log_every;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  FieldReader r{parse(text, "train config"), "train config"};
  TrainConfig c;
  r.get("lr", c.lr);
  r.get("warmup_frac", c.warmup_frac);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("epsilon", c.epsilon);
  r.get("weight_decay", c.weight_decay);
  r.get("grad_clip_norm", c.grad_clip_norm);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("windows_per_traj", c.windows_per_traj);
  r.get("seed", c.seed);
  r.get("log_every", c.log_every);
  r.finish();
  return c;
}

std::string to_json(const EvalConfig& c) {
  json j;
  j["n_seeds"] = c.n_seeds;
  j["n_episodes"] = c.n_episodes;
  j["target_return"] = c.target_return;
  j["rtg_floor"] = c.rtg_floor;
  j["max_steps"] = c.max_steps;
  j["master_seed"] = c.master_seed;
  j["random_ref"] = c.random_ref;
  j["expert_ref"] = c.expert_ref;
  return j.dump(2);
}

EvalConfig eval_config_from_json(const std::string& text) {
  FieldReader r{parse(text, "eval config"), "eval config"};
  EvalConfig c;
  r.get("n_seeds", c.n_seeds);
  r.get("n_episodes", c.n_episodes);
  r.get_nullable("target_return", c.target_return);
  r.get("rtg_floor", c.rtg_floor);
  r.get("max_steps", c.max_steps);
  r.get("master_seed", c.master_seed);
  r.get_nullable("random_ref", c.random_ref);
  r.get_nullable("expert_ref", c.expert_ref);
  r.finish();
  return c;
}

uint64_t config_hash(const RmdtConfig& config) {
  json j = json::parse(to_json(config));
  return fnv1a64(j.dump());
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

Preset keydoor_base() {
  Preset p;
  p.dataset = {"keydoor", 2000, 1.0, 0.0, 0.0, 11};
  p.model.mode = ArchMode::rmdt;
  p.model.d_model = 32;
  p.model.n_layers = 2;
  p.model.n_heads = 4;
  p.model.hidden_dropout = 0.1;
  p.model.attn_dropout = 0.05;
  p.model.context_frames = 10;
  p.model.mem_tokens = 15;
  p.model.n_segments = 3;
  p.model.d_obs = 6;
  p.model.action = {true, 6, 0};
  p.model.max_timestep = 48;
  p.train.lr = 1e-3;
  p.train.batch_size = 32;
  p.train.epochs = 4;
  p.train.seed = 7;
  p.eval.n_seeds = 3;
  p.eval.n_episodes = 10;
  p.eval.target_return = 1.0;
  p.eval.rtg_floor = 0.0;
  p.eval.random_ref = 0.25;
  p.eval.expert_ref = 1.0;
  return p;
}

Preset masspoint_base() {
  Preset p;
  p.dataset = {"masspoint", 1200, 0.6, 0.2, 0.2, 13};
  p.model.mode = ArchMode::rmdt;
  p.model.d_model = 32;
  p.model.n_layers = 2;
  p.model.n_heads = 1;
  p.model.hidden_dropout = 0.1;
  p.model.attn_dropout = 0.05;
  p.model.context_frames = 20;
  p.model.mem_tokens = 10;
  p.model.n_segments = 3;
  p.model.d_obs = 7;
  p.model.action = {false, 0, 2};
  p.model.max_timestep = 64;
  p.train.lr = 1e-3;
  p.train.batch_size = 32;
  p.train.epochs = 4;
  p.train.seed = 7;
  p.eval.n_seeds = 3;
  p.eval.n_episodes = 10;
  // NaN target/references are resolved from dataset statistics at run time.
  p.eval.target_return = std::numeric_limits<double>::quiet_NaN();
  return p;
}

}  // namespace

Preset get_preset(const std::string& name) {
  if (name == "keydoor-rmdt") {
    Preset p = keydoor_base();
    p.name = name;
    return p;
  }
  if (name == "keydoor-rmdt-n1") {
    Preset p = keydoor_base();
    p.name = name;
    p.model.n_segments = 1;
    return p;
  }
  if (name == "keydoor-dt") {
    Preset p = keydoor_base();
    p.name = name;
    p.model.mode = ArchMode::dt;
    p.model.n_segments = 1;
    p.model.mem_tokens = 0;
    p.model.use_memory = false;
    return p;
  }
  if (name == "keydoor-dtxl") {
    Preset p = keydoor_base();
    p.name = name;
    p.model.mode = ArchMode::dt_xl;
    p.model.mem_tokens = 0;
    p.model.use_memory = false;
    return p;
  }
  // The ablation trio: plain = no overlay, no fixation; overlay adds 25%
  // segment overlay; the full preset adds memory fixation on top.
  if (name == "masspoint-rmdt-plain") {
    Preset p = masspoint_base();
    p.name = name;
    return p;
  }
  if (name == "masspoint-rmdt-overlay") {
    Preset p = masspoint_base();
    p.name = name;
    p.model.overlay_fraction = 0.25;
    return p;
  }
  if (name == "masspoint-rmdt") {
    Preset p = masspoint_base();
    p.name = name;
    p.model.overlay_fraction = 0.25;
    p.model.memory_fixation = true;
    return p;
  }
  throw UsageError("unknown preset: " + name);
}

std::vector<std::string> preset_names() {
  return {"keydoor-rmdt",        "keydoor-rmdt-n1",
          "keydoor-dt",          "keydoor-dtxl",
          "masspoint-rmdt-plain", "masspoint-rmdt-overlay",
          "masspoint-rmdt"};
}

}  // namespace rmdt
