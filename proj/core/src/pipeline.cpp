// SPDX-License-Identifier: Apache-2.0
#include "rmdt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "rmdt/errors.hpp"
#include "rmdt/io_util.hpp"

namespace rmdt {

namespace {

// Independent seed streams carved out of the training seed.
constexpr uint64_t kShuffleStream = 0x100000;
constexpr uint64_t kStartStream = 0x200000;
constexpr uint64_t kDropoutStream = 0x300000;

constexpr char kCheckpointMagic[8] = {'R', 'M', 'D', 'T',
                                      'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

bool all_zero(const std::vector<double>& v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

}  // namespace

int sample_window_start(int traj_length, int n_segments, int context_frames,
                        Rng& rng) {
  if (traj_length < 1) throw UsageError("sample_window_start: empty trajectory");
  int span = n_segments * context_frames;
  if (traj_length <= span) return 0;
  return static_cast<int>(rng.uniform_int(0, traj_length - span));
}

std::vector<SegmentData> split_segments(const Trajectory& traj, int start,
                                        const RmdtConfig& config) {
  int N = config.n_segments, K = config.context_frames;
  int V = config.overlay_frames();
  if (V >= K) throw UsageError("split_segments: overlay covers whole segment");
  int T = traj.length();
  if (start < 0 || start >= T) throw UsageError("split_segments: bad start");
  bool discrete = config.action.discrete;
  int d_obs = config.d_obs, d_act = config.action.d_action;
  if (d_obs != static_cast<int>(traj.observations.front().size()))
    throw DataError("split_segments: observation width mismatch");

  std::vector<SegmentData> segments(N);
  for (int i = 0; i < N; ++i) {
    SegmentData& seg = segments[i];
    seg.frames = K;
    int seg_begin = i * (K - V);  // window-relative
    seg.valid_frames = std::clamp(T - start - seg_begin, 0, K);
    seg.rtg.assign(K, 0.0);
    seg.obs.assign(static_cast<size_t>(K) * d_obs, 0.0);
    if (discrete)
      seg.action_ids.assign(K, config.action.n_actions);  // placeholder
    else
      seg.action_vecs.assign(static_cast<size_t>(K) * d_act, 0.0);
    seg.timesteps.assign(K, 0);
    seg.loss_weights.assign(K, 0.0);

    for (int j = 0; j < seg.valid_frames; ++j) {
      int frame = start + seg_begin + j;  // absolute trajectory index
      seg.rtg[j] = traj.returns_to_go[frame];
      const auto& o = traj.observations[frame];
      std::copy(o.begin(), o.end(), seg.obs.begin() + static_cast<size_t>(j) * d_obs);
      if (discrete) {
        seg.action_ids[j] = traj.action_ids[frame];
      } else {
        const auto& a = traj.action_vecs[frame];
        std::copy(a.begin(), a.end(),
                  seg.action_vecs.begin() + static_cast<size_t>(j) * d_act);
      }
      seg.timesteps[j] = frame;
      // Overlay frames were already scored by the previous segment.
      seg.loss_weights[j] = (i > 0 && j < V) ? 0.0 : 1.0;
    }
  }
  return segments;
}

double total_loss_weight(const SegmentData& segment) {
  return std::accumulate(segment.loss_weights.begin(),
                         segment.loss_weights.end(), 0.0);
}

std::vector<WindowRef> epoch_window_plan(const Dataset& dataset,
                                         const RmdtConfig& model_config,
                                         const TrainConfig& train_config,
                                         int epoch) {
  if (dataset.size() < 1) throw UsageError("epoch_window_plan: empty dataset");
  std::vector<WindowRef> plan;
  plan.reserve(static_cast<size_t>(dataset.size()) *
               train_config.windows_per_traj);
  for (int rep = 0; rep < train_config.windows_per_traj; ++rep)
    for (int ti = 0; ti < dataset.size(); ++ti) plan.push_back({ti, 0});

  Rng shuffle_rng(derive_seed(train_config.seed,
                              kShuffleStream + static_cast<uint64_t>(epoch)));
  shuffle_rng.shuffle(plan);
  Rng start_rng(derive_seed(train_config.seed,
                            kStartStream + static_cast<uint64_t>(epoch)));
  for (auto& w : plan)
    w.start = sample_window_start(dataset.trajectories[w.traj_index].length(),
                                  model_config.n_segments,
                                  model_config.context_frames, start_rng);
  return plan;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(RmdtModel& model, const Dataset& dataset,
                 const TrainConfig& train_config)
    : model_(model),
      dataset_(dataset),
      train_config_(train_config),
      optimizer_(AdamWConfig{train_config.lr, train_config.beta1,
                             train_config.beta2, train_config.epsilon,
                             train_config.weight_decay,
                             train_config.grad_clip_norm}),
      dropout_rng_(derive_seed(train_config.seed, kDropoutStream)) {
  train_config_.validate();
  if (dataset_.size() < 1) throw UsageError("trainer: empty dataset");
  if (dataset_.d_obs != model_.config().d_obs ||
      dataset_.action.discrete != model_.config().action.discrete)
    throw UsageError("trainer: dataset does not match model spaces");

  // Decay applies to projection matrices only, not to embedding tables,
  // memory vectors, biases, or layer-norm parameters.
  for (const auto& [name, param] : model_.named_parameters()) {
    bool decays = param.ndim() == 2 && name.find("emb.") == std::string::npos &&
                  name.find("mem.") == std::string::npos &&
                  name.find(".table") == std::string::npos;
    optimizer_.add_param(param, decays);
  }

  int entries = dataset_.size() * train_config_.windows_per_traj;
  steps_per_epoch_ =
      (entries + train_config_.batch_size - 1) / train_config_.batch_size;
}

uint64_t Trainer::total_steps() const {
  return static_cast<uint64_t>(train_config_.epochs) * steps_per_epoch_;
}

double Trainer::lr_at(uint64_t step) const {
  double warmup = std::max(1.0, train_config_.warmup_frac *
                                    static_cast<double>(total_steps()));
  double progress = (static_cast<double>(step) + 1.0) / warmup;
  return train_config_.lr * std::min(1.0, progress);
}

double Trainer::window_backward(const Trajectory& traj, int start,
                                double inverse_batch) {
  const RmdtConfig& cfg = model_.config();
  auto segments = split_segments(traj, start, cfg);
  bool has_memory = cfg.effective_mem_tokens() > 0;
  bool flow = has_memory && cfg.memory_passing && cfg.grad_mode == GradMode::flow;
  bool use_cache = cfg.mode == ArchMode::dt_xl;

  std::vector<Tensor> write_outs(segments.size());
  std::vector<Tensor> bridges(segments.size());  // bridges[k] read by segment k
  std::vector<Tensor> losses;
  XlCache cache;
  int processed = 0;

  for (size_t k = 0; k < segments.size(); ++k) {
    if (segments[k].valid_frames == 0) break;

    Tensor read_memory;
    if (has_memory) {
      if (k == 0) {
        read_memory = model_.fresh_memory(/*detached=*/false).vectors;
      } else if (!cfg.memory_passing) {
        read_memory = model_.fresh_memory(/*detached=*/true).vectors;
      } else if (cfg.grad_mode == GradMode::detach) {
        read_memory = write_outs[k - 1].detach();
      } else {
        bridges[k] = write_outs[k - 1].bridge();
        read_memory = bridges[k];
      }
    }

    ModelForwardOptions options;
    options.train = true;
    options.dropout_rng = &dropout_rng_;
    if (use_cache) {
      options.cache = &cache;
      options.want_cache = true;
    }
    SegmentForward forward =
        model_.forward_segment(segments[k], read_memory, options);
    if (total_loss_weight(segments[k]) > 0.0)
      losses.push_back(model_.segment_loss(forward, segments[k]));
    write_outs[k] = forward.write_out;
    if (use_cache) cache = std::move(forward.new_cache);
    ++processed;
  }

  if (losses.empty())
    throw std::runtime_error("window_backward: window produced no loss");
  Tensor sum = losses[0];
  for (size_t i = 1; i < losses.size(); ++i) sum = add(sum, losses[i]);
  Tensor window_loss = scale(sum, 1.0 / static_cast<double>(losses.size()));
  double value = window_loss.scalar();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss (policy " << traj.policy_id
        << ", episode seed " << traj.episode_seed << ", window start "
        << start << ")";
    throw NumericError(msg.str());
  }

  backward_seeded(window_loss, {inverse_batch}, /*free_graph=*/false);

  if (flow && processed > 1) {
    // Gradient waves through the memory handoffs: hop h pushes what hop
    // h-1 deposited at each bridge into the producing segment's tape.
    std::vector<std::vector<double>> seeds(processed);
    for (int k = 1; k < processed; ++k)
      if (bridges[k].defined() && bridges[k].has_grad())
        seeds[k] = bridges[k].grad();

    int max_hops = cfg.flow_hops > 0 ? cfg.flow_hops : processed - 1;
    for (int hop = 0; hop < max_hops; ++hop) {
      std::vector<std::vector<double>> before(processed);
      for (int k = 1; k < processed; ++k)
        if (bridges[k].defined()) before[k] = bridges[k].grad();

      bool propagated = false;
      for (int k = processed - 1; k >= 1; --k) {
        if (seeds[k].empty() || all_zero(seeds[k])) continue;
        backward_seeded(write_outs[k - 1], seeds[k], /*free_graph=*/false);
        propagated = true;
      }
      if (!propagated) break;

      for (int k = 1; k < processed; ++k) {
        if (!bridges[k].defined()) {
          seeds[k].clear();
          continue;
        }
        std::vector<double> delta = bridges[k].grad();
        for (size_t i = 0; i < delta.size(); ++i) delta[i] -= before[k][i];
        seeds[k] = std::move(delta);
      }
    }
  }

  release_graph(window_loss);
  for (auto& w : write_outs)
    if (w.defined()) release_graph(w);
  return value;
}

TrainStats Trainer::step() {
  if (done()) throw UsageError("train_step: training already complete");
  int epoch = static_cast<int>(global_step_ / steps_per_epoch_);
  int batch_index = static_cast<int>(global_step_ % steps_per_epoch_);
  if (epoch != plan_epoch_) {
    plan_ = epoch_window_plan(dataset_, model_.config(), train_config_, epoch);
    plan_epoch_ = epoch;
  }

  size_t begin = static_cast<size_t>(batch_index) * train_config_.batch_size;
  size_t end = std::min(begin + train_config_.batch_size, plan_.size());
  int batch = static_cast<int>(end - begin);

  optimizer_.zero_grad();
  double batch_loss = 0.0;
  for (size_t i = begin; i < end; ++i) {
    const WindowRef& ref = plan_[i];
    batch_loss += window_backward(dataset_.trajectories[ref.traj_index],
                                  ref.start, 1.0 / batch);
  }
  batch_loss /= batch;

  optimizer_.set_lr(lr_at(global_step_));
  optimizer_.step();
  ++global_step_;
  loss_history_.push_back(batch_loss);

  TrainStats stats;
  stats.global_step = global_step_;
  stats.epoch = epoch;
  stats.batch_in_epoch = batch_index;
  stats.loss = batch_loss;
  stats.lr = optimizer_.lr();
  stats.grad_norm = optimizer_.last_grad_norm();
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void Trainer::save_checkpoint(const std::string& path) const {
  std::ostringstream out;
  out.write(kCheckpointMagic, 8);
  write_u32(out, kCheckpointVersion);
  write_u64(out, config_hash(model_.config()));
  write_u64(out, global_step_);

  auto params = model_.named_parameters();
  write_u64(out, params.size());
  for (const auto& [name, param] : params) {
    write_string(out, name);
    write_f64_vec(out, param.data());
  }

  write_i64(out, optimizer_.step_count());
  const auto& slots = optimizer_.slots();
  write_u64(out, slots.size());
  for (const auto& slot : slots) {
    write_f64_vec(out, slot.m);
    write_f64_vec(out, slot.v);
  }

  write_string(out, dropout_rng_.save_state());

  std::string buf = out.str();
  write_u32(out, crc32_bytes(buf.data(), buf.size()));
  atomic_write_file(path, out.str());
}

void Trainer::load_checkpoint(const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 16) throw DataError("checkpoint: file too small: " + path);
  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_bytes(buf.data(), buf.size() - 4) != stored_crc)
    throw DataError("checkpoint: checksum mismatch: " + path);

  std::istringstream in(buf.substr(0, buf.size() - 4));
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint: bad magic bytes");
  if (read_u32(in) != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version");
  if (read_u64(in) != config_hash(model_.config()))
    throw DataError("checkpoint: config hash mismatch");
  uint64_t step = read_u64(in);

  // Stage everything, verify against the live model, then apply.
  auto params = model_.named_parameters();
  uint64_t n_params = read_u64(in);
  if (n_params != params.size())
    throw DataError("checkpoint: parameter count mismatch");
  std::vector<std::vector<double>> values(n_params);
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in);
    if (name != params[i].first)
      throw DataError("checkpoint: parameter name mismatch: expected " +
                      params[i].first + ", found " + name);
    values[i] = read_f64_vec(in);
    if (values[i].size() != params[i].second.numel())
      throw DataError("checkpoint: size mismatch for " + name);
  }

  int64_t optim_steps = read_i64(in);
  uint64_t n_slots = read_u64(in);
  if (n_slots != optimizer_.param_count())
    throw DataError("checkpoint: optimizer slot count mismatch");
  std::vector<AdamW::Slot> slots(n_slots);
  for (uint64_t i = 0; i < n_slots; ++i) {
    slots[i].m = read_f64_vec(in);
    slots[i].v = read_f64_vec(in);
    if (slots[i].m.size() != values[i].size() ||
        slots[i].v.size() != values[i].size())
      throw DataError("checkpoint: optimizer slot size mismatch");
  }

  std::string rng_state = read_string(in);
  Rng staged_rng;
  staged_rng.load_state(rng_state);
  if (in.peek() != std::istringstream::traits_type::eof())
    throw DataError("checkpoint: trailing bytes");

  for (uint64_t i = 0; i < n_params; ++i)
    params[i].second.data() = std::move(values[i]);
  optimizer_.restore(std::move(slots), optim_steps);
  dropout_rng_ = staged_rng;
  global_step_ = step;
  plan_epoch_ = -1;
  loss_history_.clear();
}

uint64_t load_model_checkpoint(RmdtModel& model, const std::string& path) {
  std::string buf = read_file(path);
  if (buf.size() < 16) throw DataError("checkpoint: file too small: " + path);
  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32_bytes(buf.data(), buf.size() - 4) != stored_crc)
    throw DataError("checkpoint: checksum mismatch: " + path);

  std::istringstream in(buf.substr(0, buf.size() - 4));
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint: bad magic bytes");
  if (read_u32(in) != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version");
  if (read_u64(in) != config_hash(model.config()))
    throw DataError("checkpoint: config hash mismatch");
  uint64_t step = read_u64(in);

  auto params = model.named_parameters();
  uint64_t n_params = read_u64(in);
  if (n_params != params.size())
    throw DataError("checkpoint: parameter count mismatch");
  std::vector<std::vector<double>> values(n_params);
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = read_string(in);
    if (name != params[i].first)
      throw DataError("checkpoint: parameter name mismatch: expected " +
                      params[i].first + ", found " + name);
    values[i] = read_f64_vec(in);
    if (values[i].size() != params[i].second.numel())
      throw DataError("checkpoint: size mismatch for " + name);
  }

  read_i64(in);
  uint64_t n_slots = read_u64(in);
  if (n_slots != n_params)
    throw DataError("checkpoint: optimizer slot count mismatch");
  for (uint64_t i = 0; i < n_slots; ++i) {
    if (read_f64_vec(in).size() != values[i].size() ||
        read_f64_vec(in).size() != values[i].size())
      throw DataError("checkpoint: optimizer slot size mismatch");
  }
  Rng staged_rng;
  staged_rng.load_state(read_string(in));
  if (in.peek() != std::istringstream::traits_type::eof())
    throw DataError("checkpoint: trailing bytes");

  for (uint64_t i = 0; i < n_params; ++i)
    params[i].second.data() = std::move(values[i]);
  return step;
}

}  // namespace rmdt
