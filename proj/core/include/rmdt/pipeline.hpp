// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/dataset.hpp"
#include "rmdt/model.hpp"
#include "rmdt/optim.hpp"

namespace rmdt {

/// Start index of a training window: uniform over [0, T - N*K] when the
/// trajectory is long enough, otherwise 0 (the window is right-padded).
int sample_window_start(int traj_length, int n_segments, int context_frames,
                        Rng& rng);

/// Carve a window starting at `start` into N segments of K frames.
/// Segment i covers window frames [i*(K-V), i*(K-V)+K), V = floor(f*K);
/// consecutive segments share exactly V frames. Frames beyond the
/// trajectory end are padding (zero loss weight, placeholder actions);
/// overlay frames carry loss weight only in the first segment containing
/// them. valid_frames counts the real-frame prefix and may be zero for
/// trailing all-padding segments.
std::vector<SegmentData> split_segments(const Trajectory& traj, int start,
                                        const RmdtConfig& config);

double total_loss_weight(const SegmentData& segment);

struct WindowRef {
  int traj_index = 0;
  int start = 0;
};

/// The batch schedule for one epoch: every trajectory windows_per_traj
/// times, shuffled, window starts drawn per entry. A pure function of
/// (train seed, epoch, dataset), so resuming mid-epoch needs no extra
/// state.
std::vector<WindowRef> epoch_window_plan(const Dataset& dataset,
                                         const RmdtConfig& model_config,
                                         const TrainConfig& train_config,
                                         int epoch);

struct TrainStats {
  uint64_t global_step = 0;  // value after the update
  int epoch = 0;
  int batch_in_epoch = 0;
  double loss = 0.0;  // batch mean of window losses
  double lr = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
};

/// Teacher-forced multi-segment trainer. Each batch: for every window,
/// memory starts from the trainable initial vectors, segments run in
/// order with the configured memory handoff (detached values, or bridged
/// values whose gradients are propagated flow_hops segments back), window
/// losses are averaged, and one optimizer update is applied.
///
/// Memory fixation is an inference-time behavior and is ignored here.
class Trainer {
 public:
  Trainer(RmdtModel& model, const Dataset& dataset,
          const TrainConfig& train_config);

  TrainStats step();
  bool done() const { return global_step_ >= total_steps(); }

  uint64_t global_step() const { return global_step_; }
  uint64_t total_steps() const;
  int steps_per_epoch() const { return steps_per_epoch_; }
  /// Warmup-then-constant schedule for the given 0-based step index.
  double lr_at(uint64_t step) const;

  const std::vector<double>& loss_history() const { return loss_history_; }
  AdamW& optimizer() { return optimizer_; }

  /// Versioned binary checkpoint: parameters, optimizer state, RNG state,
  /// step counter, config hash, CRC trailer. Loading verifies everything
  /// against this trainer's model before mutating any state, and resumed
  /// training reproduces an uninterrupted run step for step.
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  double window_backward(const Trajectory& traj, int start,
                         double inverse_batch);

  RmdtModel& model_;
  const Dataset& dataset_;
  TrainConfig train_config_;
  AdamW optimizer_;
  Rng dropout_rng_;
  uint64_t global_step_ = 0;
  int steps_per_epoch_ = 0;
  int plan_epoch_ = -1;
  std::vector<WindowRef> plan_;
  std::vector<double> loss_history_;
};

/// Restore only the parameters from a trainer checkpoint (same verification
/// as Trainer::load_checkpoint; optimizer and RNG state are checked but not
/// applied). Returns the recorded global step. For inference-time loading
/// where no optimizer exists.
uint64_t load_model_checkpoint(RmdtModel& model, const std::string& path);

}  // namespace rmdt
