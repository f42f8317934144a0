// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "rmdt/tensor.hpp"

namespace rmdt {

struct AdamWConfig {
  double lr = 6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.1;
  // <= 0 disables clipping.
  double grad_clip_norm = 0.0;
};

/// AdamW with decoupled weight decay:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// Decay is skipped for parameters registered with decay=false (biases,
/// layer-norm gains). Throws NumericError if any gradient is non-finite.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  void add_param(Tensor param, bool decay = true);
  void add_params(const std::vector<Tensor>& params, bool decay = true);

  /// One update over all registered parameters. A parameter whose grad was
  /// never touched this round counts as zero gradient.
  void step();
  void zero_grad();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  const AdamWConfig& config() const { return config_; }
  int64_t step_count() const { return step_count_; }

  /// Global gradient norm over all parameters, pre-clip. Valid after step().
  double last_grad_norm() const { return last_grad_norm_; }

  size_t param_count() const { return params_.size(); }

  // Checkpoint access. Slot i holds first and second moments for param i.
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };
  const std::vector<Slot>& slots() const { return slots_; }
  void restore(std::vector<Slot> slots, int64_t step_count);

 private:
  AdamWConfig config_;
  std::vector<Tensor> params_;
  std::vector<bool> decay_;
  std::vector<Slot> slots_;
  int64_t step_count_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace rmdt
