// SPDX-License-Identifier: Apache-2.0
#include "rmdt/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "rmdt/errors.hpp"

namespace rmdt {

void AdamW::add_param(Tensor param, bool decay) {
  if (!param.defined() || !param.requires_grad())
    throw std::runtime_error("optimizer: parameter must require grad");
  params_.push_back(std::move(param));
  decay_.push_back(decay);
  Slot slot;
  slot.m.assign(params_.back().numel(), 0.0);
  slot.v.assign(params_.back().numel(), 0.0);
  slots_.push_back(std::move(slot));
}

void AdamW::add_params(const std::vector<Tensor>& params, bool decay) {
  for (const auto& p : params) add_param(p, decay);
}

void AdamW::step() {
  ++step_count_;
  double t = static_cast<double>(step_count_);
  double bias1 = 1.0 - std::pow(config_.beta1, t);
  double bias2 = 1.0 - std::pow(config_.beta2, t);

  double norm_sq = 0.0;
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g))
        throw NumericError("optimizer: non-finite gradient");
      norm_sq += g * g;
    }
  }
  last_grad_norm_ = std::sqrt(norm_sq);
  double clip_scale = 1.0;
  if (config_.grad_clip_norm > 0.0 &&
      last_grad_norm_ > config_.grad_clip_norm)
    clip_scale = config_.grad_clip_norm / last_grad_norm_;

  for (size_t i = 0; i < params_.size(); ++i) {
    auto& value = params_[i].data();
    auto& slot = slots_[i];
    const double* grad =
        params_[i].has_grad() ? params_[i].grad().data() : nullptr;
    double wd = decay_[i] ? config_.weight_decay : 0.0;
    for (size_t j = 0; j < value.size(); ++j) {
      double g = grad ? grad[j] * clip_scale : 0.0;
      slot.m[j] = config_.beta1 * slot.m[j] + (1.0 - config_.beta1) * g;
      slot.v[j] = config_.beta2 * slot.v[j] + (1.0 - config_.beta2) * g * g;
      double m_hat = slot.m[j] / bias1;
      double v_hat = slot.v[j] / bias2;
      value[j] -= config_.lr *
                  (m_hat / (std::sqrt(v_hat) + config_.epsilon) + wd * value[j]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void AdamW::restore(std::vector<Slot> slots, int64_t step_count) {
  if (slots.size() != params_.size())
    throw DataError("optimizer: state slot count mismatch");
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].m.size() != params_[i].numel() ||
        slots[i].v.size() != params_[i].numel())
      throw DataError("optimizer: state slot size mismatch");
  }
  slots_ = std::move(slots);
  step_count_ = step_count;
}

}  // namespace rmdt
