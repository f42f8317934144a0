// SPDX-License-Identifier: Apache-2.0
#include "rmdt/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "rmdt/errors.hpp"

namespace rmdt {

std::vector<double> returns_to_go(const std::vector<double>& rewards) {
  if (rewards.empty())
    throw UsageError("returns_to_go: empty reward sequence");
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc += rewards[i];
    out[i] = acc;
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  if (x.ndim() != 2) throw std::runtime_error("gather_rows: need 2-d input");
  int rows = x.rows(), cols = x.cols();
  for (int i : indices)
    if (i < 0 || i >= rows)
      throw std::runtime_error("gather_rows: index out of range");
  int n = static_cast<int>(indices.size());
  std::vector<double> out(static_cast<size_t>(n) * cols);
  const auto& xv = x.data();
  for (int i = 0; i < n; ++i)
    std::copy(xv.begin() + static_cast<size_t>(indices[i]) * cols,
              xv.begin() + static_cast<size_t>(indices[i] + 1) * cols,
              out.begin() + static_cast<size_t>(i) * cols);
  return make_op_output(
      "gather_rows", {n, cols}, std::move(out), {x},
      [idx = indices, cols](const double* g, const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < idx.size(); ++i) {
          double* dst = pg[0] + static_cast<size_t>(idx[i]) * cols;
          const double* src = g + i * cols;
          for (int c = 0; c < cols; ++c) dst[c] += src[c];
        }
      });
}

Tensor interleave_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("interleave_rows: no inputs");
  int k = static_cast<int>(parts.size());
  int rows = parts[0].rows(), cols = parts[0].cols();
  for (const auto& p : parts)
    if (p.ndim() != 2 || p.rows() != rows || p.cols() != cols)
      throw std::runtime_error("interleave_rows: shape mismatch");
  std::vector<double> out(static_cast<size_t>(k) * rows * cols);
  for (int j = 0; j < k; ++j) {
    const auto& pv = parts[j].data();
    for (int i = 0; i < rows; ++i)
      std::copy(pv.begin() + static_cast<size_t>(i) * cols,
                pv.begin() + static_cast<size_t>(i + 1) * cols,
                out.begin() + (static_cast<size_t>(i) * k + j) * cols);
  }
  return make_op_output(
      "interleave_rows", {k * rows, cols}, std::move(out), parts,
      [k, rows, cols](const double* g, const std::vector<double*>& pg) {
        for (int j = 0; j < k; ++j) {
          if (!pg[j]) continue;
          for (int i = 0; i < rows; ++i) {
            const double* src = g + (static_cast<size_t>(i) * k + j) * cols;
            double* dst = pg[j] + static_cast<size_t>(i) * cols;
            for (int c = 0; c < cols; ++c) dst[c] += src[c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// RmdtModel
// ---------------------------------------------------------------------------

RmdtModel::RmdtModel(const RmdtConfig& config, uint64_t init_seed)
    : config_(config) {
  config_.validate();
  Rng rng(init_seed);
  int d = config_.d_model;
  double sd = config_.init_stddev;

  // Parameter draw order is part of the determinism contract: encoders,
  // timestep table, memory, stack, head. Configs that skip a parameter
  // (use_memory=false) draw nothing for it, so dt and memory-free rmdt
  // models built from the same seed share every remaining parameter.
  ret_w_ = Tensor::randn({1, d}, rng, sd, true);
  ret_b_ = Tensor::zeros({d}, true);
  obs_w_ = Tensor::randn({config_.d_obs, d}, rng, sd, true);
  obs_b_ = Tensor::zeros({d}, true);
  if (config_.action.discrete) {
    // One extra row: the placeholder id used for not-yet-taken actions.
    act_table_ = Tensor::randn({config_.action.n_actions + 1, d}, rng, sd,
                               true);
  } else {
    act_w_ = Tensor::randn({config_.action.d_action, d}, rng, sd, true);
    act_b_ = Tensor::zeros({d}, true);
  }
  time_table_ = Tensor::randn({config_.max_timestep, d}, rng, sd, true);
  if (config_.effective_mem_tokens() > 0) {
    int m = config_.mem_tokens;
    init_memory_ = Tensor::randn({m, d}, rng, sd, true);
    if (config_.write_prompt)
      write_prompt_ = Tensor::randn({m, d}, rng, sd, true);
    if (config_.mem_positional)
      mem_pos_ = Tensor::randn({2 * m, d}, rng, sd, true);
  }
  stack_ = TransformerStack(
      config_.n_layers,
      BlockConfig{config_.d_model, config_.n_heads, config_.mlp_hidden}, rng,
      sd);
  head_w_ = Tensor::randn({d, config_.action.head_dim()}, rng, sd, true);
  head_b_ = Tensor::zeros({config_.action.head_dim()}, true);
}

const Tensor& RmdtModel::initial_memory() const {
  if (!init_memory_.defined())
    throw std::runtime_error("model: no memory in this configuration");
  return init_memory_;
}

MemoryState RmdtModel::fresh_memory(bool detached) const {
  MemoryState state;
  state.grad_mode = config_.grad_mode;
  if (config_.effective_mem_tokens() > 0)
    state.vectors = detached ? init_memory_.detach() : init_memory_;
  return state;
}

MemoryState RmdtModel::advance_memory(const MemoryState& memory,
                                      const Tensor& write_out) const {
  MemoryState next = memory;
  if (config_.effective_mem_tokens() == 0) return next;
  next.segment_index = memory.segment_index + 1;
  if (config_.memory_fixation && memory.segment_index >= 1) {
    next.fixed = true;
    return next;  // frozen after the first update
  }
  if (!config_.memory_passing) {
    next.vectors = init_memory_.detach();
    return next;
  }
  if (!write_out.defined())
    throw std::runtime_error("advance_memory: missing write outputs");
  next.vectors = write_out.detach();
  return next;
}

SegmentForward RmdtModel::forward_segment(
    const SegmentData& segment, const Tensor& read_memory,
    const ModelForwardOptions& options) const {
  int frames = segment.frames;
  if (frames < 1) throw std::runtime_error("forward_segment: no frames");
  if (segment.valid_frames < 1 || segment.valid_frames > frames)
    throw std::runtime_error("forward_segment: bad valid_frames");
  if (static_cast<int>(segment.rtg.size()) != frames ||
      static_cast<int>(segment.timesteps.size()) != frames ||
      static_cast<int>(segment.obs.size()) != frames * config_.d_obs)
    throw std::runtime_error("forward_segment: field length mismatch");
  for (int t : segment.timesteps)
    if (t < 0 || t >= config_.max_timestep)
      throw UsageError("forward_segment: timestep outside max_timestep");
  if (options.cache && config_.mode != ArchMode::dt_xl)
    throw std::runtime_error("forward_segment: cache requires dt_xl mode");

  int d = config_.d_model;
  int mem = config_.effective_mem_tokens();

  Tensor rtg = Tensor::from_data({frames, 1}, segment.rtg);
  Tensor obs = Tensor::from_data({frames, config_.d_obs}, segment.obs);
  Tensor r_tok = linear(rtg, ret_w_, ret_b_);
  Tensor o_tok = linear(obs, obs_w_, obs_b_);
  Tensor a_tok;
  if (config_.action.discrete) {
    if (static_cast<int>(segment.action_ids.size()) != frames)
      throw std::runtime_error("forward_segment: action id count mismatch");
    for (int id : segment.action_ids)
      if (id < 0 || id > config_.action.n_actions)
        throw std::runtime_error("forward_segment: action id out of range");
    a_tok = embedding(act_table_, segment.action_ids);
  } else {
    if (static_cast<int>(segment.action_vecs.size()) !=
        frames * config_.action.d_action)
      throw std::runtime_error("forward_segment: action vec size mismatch");
    Tensor act =
        Tensor::from_data({frames, config_.action.d_action},
                          segment.action_vecs);
    a_tok = linear(act, act_w_, act_b_);
  }
  Tensor t_emb = embedding(time_table_, segment.timesteps);
  r_tok = add(r_tok, t_emb);
  o_tok = add(o_tok, t_emb);
  a_tok = add(a_tok, t_emb);
  Tensor traj = interleave_rows({r_tok, o_tok, a_tok});

  Tensor seq = traj;
  if (mem > 0) {
    if (!read_memory.defined() || read_memory.rows() != mem ||
        read_memory.cols() != d)
      throw std::runtime_error("forward_segment: memory shape mismatch");
    Tensor read_rows = read_memory;
    Tensor write_rows = write_prompt_.defined() ? write_prompt_ : read_memory;
    if (mem_pos_.defined()) {
      read_rows = add(read_rows, slice_rows(mem_pos_, 0, mem));
      write_rows = add(write_rows, slice_rows(mem_pos_, mem, 2 * mem));
    }
    seq = concat_rows({read_rows, traj, write_rows});
  }

  if (options.train && config_.hidden_dropout > 0.0) {
    if (!options.dropout_rng)
      throw std::runtime_error("forward_segment: training needs a dropout rng");
    seq = dropout(seq, config_.hidden_dropout, *options.dropout_rng, true);
  }

  int cache_len = options.cache ? options.cache->len() : 0;
  AttentionMask mask =
      build_mask(config_.mode, frames, mem, cache_len, segment.valid_frames);

  SegmentForward out;
  ForwardContext ctx;
  ctx.train = options.train;
  ctx.dropout_rng = options.dropout_rng;
  ctx.hidden_dropout = config_.hidden_dropout;
  ctx.attn_dropout = config_.attn_dropout;
  ctx.cache = options.cache;
  ctx.new_cache =
      options.want_cache && config_.mode == ArchMode::dt_xl ? &out.new_cache
                                                            : nullptr;
  ctx.cache_source = config_.cache_source;
  ctx.capture = options.capture;

  out.hidden = stack_.forward(seq, mask, ctx);

  std::vector<int> obs_rows(frames);
  for (int i = 0; i < frames; ++i) obs_rows[i] = mem + 3 * i + 1;
  out.action_out = linear(gather_rows(out.hidden, obs_rows), head_w_, head_b_);
  if (mem > 0)
    out.write_out =
        slice_rows(out.hidden, mem + 3 * frames, 2 * mem + 3 * frames);
  return out;
}

Tensor RmdtModel::segment_loss(const SegmentForward& forward,
                               const SegmentData& segment) const {
  if (config_.action.discrete)
    return cross_entropy(forward.action_out, segment.action_ids,
                         segment.loss_weights);
  Tensor target = Tensor::from_data({segment.frames, config_.action.d_action},
                                    segment.action_vecs);
  return mse(forward.action_out, target, segment.loss_weights);
}

int RmdtModel::predict_action_id(const Tensor& action_out, int frame) const {
  if (!config_.action.discrete)
    throw std::runtime_error("predict_action_id: continuous action space");
  int n = action_out.cols();
  const auto& v = action_out.data();
  size_t off = static_cast<size_t>(frame) * n;
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[off + i] > v[off + best]) best = i;  // ties keep the lowest index
  return best;
}

std::vector<double> RmdtModel::predict_action_vec(const Tensor& action_out,
                                                  int frame) const {
  if (config_.action.discrete)
    throw std::runtime_error("predict_action_vec: discrete action space");
  int n = action_out.cols();
  const auto& v = action_out.data();
  size_t off = static_cast<size_t>(frame) * n;
  return std::vector<double>(v.begin() + off, v.begin() + off + n);
}

std::vector<std::pair<std::string, Tensor>> RmdtModel::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("enc.ret.w", ret_w_);
  out.emplace_back("enc.ret.b", ret_b_);
  out.emplace_back("enc.obs.w", obs_w_);
  out.emplace_back("enc.obs.b", obs_b_);
  if (config_.action.discrete) {
    out.emplace_back("enc.act.table", act_table_);
  } else {
    out.emplace_back("enc.act.w", act_w_);
    out.emplace_back("enc.act.b", act_b_);
  }
  out.emplace_back("emb.time", time_table_);
  if (init_memory_.defined()) out.emplace_back("mem.init", init_memory_);
  if (write_prompt_.defined()) out.emplace_back("mem.write_prompt", write_prompt_);
  if (mem_pos_.defined()) out.emplace_back("mem.pos", mem_pos_);
  stack_.collect_params("stack", out);
  out.emplace_back("head.w", head_w_);
  out.emplace_back("head.b", head_b_);
  return out;
}

size_t RmdtModel::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, p] : named_parameters()) n += p.numel();
  return n;
}

}  // namespace rmdt
