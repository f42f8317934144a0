// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/tensor.hpp"
#include "rmdt/transformer.hpp"

namespace rmdt {

struct Trajectory {
  std::vector<std::vector<double>> observations;
  std::vector<int> action_ids;                   // discrete actions
  std::vector<std::vector<double>> action_vecs;  // continuous actions
  std::vector<double> rewards;
  std::vector<double> returns_to_go;

  int policy_id = 0;  // 0 expert, 1 medium, 2 random
  uint64_t episode_seed = 0;
  double total_return = 0.0;

  int length() const { return static_cast<int>(rewards.size()); }
};

/// Suffix sums: out[t] = sum(rewards[t..end)).
std::vector<double> returns_to_go(const std::vector<double>& rewards);

/// Memory vectors carried across segments. `vectors` may hold graph history
/// (flow-mode training); evaluation always carries detached values.
struct MemoryState {
  Tensor vectors;  // [M, d_model]
  int segment_index = 0;
  GradMode grad_mode = GradMode::flow;
  bool fixed = false;
};

/// One segment's worth of frames in plain arrays, ready for encoding.
/// Frames at index >= valid_frames are padding: masked out of attention and
/// given zero loss weight. loss_weights may additionally zero out overlay
/// frames already counted by the previous segment.
struct SegmentData {
  int frames = 0;
  int valid_frames = 0;
  std::vector<double> rtg;          // [frames]
  std::vector<double> obs;          // [frames * d_obs]
  std::vector<int> action_ids;      // [frames] discrete (placeholder = n_actions)
  std::vector<double> action_vecs;  // [frames * d_action] continuous
  std::vector<int> timesteps;       // [frames] absolute env timesteps
  std::vector<double> loss_weights; // [frames]
};

struct SegmentForward {
  Tensor action_out;  // [frames, n_actions] logits or [frames, d_action]
  Tensor write_out;   // [M, d_model] top-layer write-token outputs
  Tensor hidden;      // [sequence, d_model] final hidden states
  XlCache new_cache;  // dt_xl only
};

struct ModelForwardOptions {
  bool train = false;  // gates dropout
  Rng* dropout_rng = nullptr;
  const XlCache* cache = nullptr;  // dt_xl read side
  bool want_cache = false;         // dt_xl write side
  AttentionCapture* capture = nullptr;
};

/// Gather arbitrary rows of x into a new [indices.size(), cols] tensor.
Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);

/// Interleave equally-shaped row blocks: out row i*k+j = parts[j] row i.
Tensor interleave_rows(const std::vector<Tensor>& parts);

class RmdtModel {
 public:
  RmdtModel(const RmdtConfig& config, uint64_t init_seed);

  const RmdtConfig& config() const { return config_; }

  /// Trainable initial memory parameter ([M, d]); graph leaf.
  const Tensor& initial_memory() const;

  /// Fresh memory for a new window or episode: initial-memory values.
  /// Training keeps the graph connection to the parameter; pass
  /// detached=true for evaluation.
  MemoryState fresh_memory(bool detached) const;

  /// Memory handoff outside the trainer: write outputs become the next
  /// read memory, detached; fixation freezes after the first update and
  /// severed passing falls back to the initial memory values.
  MemoryState advance_memory(const MemoryState& memory,
                             const Tensor& write_out) const;

  /// Token assembly + transformer over one segment. `read_memory` must hold
  /// [M, d] vectors in rmdt mode with memory enabled; ignored otherwise.
  SegmentForward forward_segment(const SegmentData& segment,
                                 const Tensor& read_memory,
                                 const ModelForwardOptions& options) const;

  /// Weighted action loss over one segment: cross-entropy for discrete
  /// actions, MSE for continuous, both weight-averaged by loss_weights.
  /// Throws if every weight is zero; callers skip such segments.
  Tensor segment_loss(const SegmentForward& forward,
                      const SegmentData& segment) const;

  /// Greedy decode at a frame: argmax of logits (lowest index wins ties).
  int predict_action_id(const Tensor& action_out, int frame) const;
  std::vector<double> predict_action_vec(const Tensor& action_out,
                                         int frame) const;

  /// Stable-ordered (name, tensor) pairs; the checkpoint format and the
  /// optimizer registration both follow this order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  size_t parameter_count() const;

 private:
  RmdtConfig config_;
  Tensor ret_w_, ret_b_;
  Tensor obs_w_, obs_b_;
  Tensor act_table_;        // discrete: [n_actions + 1, d], last row = placeholder
  Tensor act_w_, act_b_;    // continuous encoder
  Tensor time_table_;       // [max_timestep, d]
  Tensor init_memory_;      // [M, d]
  Tensor write_prompt_;     // optional distinct write-slot inputs
  Tensor mem_pos_;          // optional [2M, d] memory positional embeddings
  TransformerStack stack_;
  Tensor head_w_, head_b_;
};

}  // namespace rmdt
