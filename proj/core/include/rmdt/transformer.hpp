// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rmdt/mask.hpp"
#include "rmdt/rng.hpp"
#include "rmdt/tensor.hpp"

namespace rmdt {

/// Attention probabilities recorded during a forward pass, one entry per
/// (layer, head). Rows are query tokens, columns key tokens (cache included
/// for dt_xl). Values are post-softmax, pre-dropout.
struct AttentionCapture {
  struct Entry {
    int layer = 0;
    int head = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> probs;
  };
  std::vector<Entry> entries;
};

/// Scaled dot-product attention over `n_heads` column slices of q/k/v.
/// Masked cells hold exactly 0 probability and never enter the softmax
/// normalization. Output is the concatenated per-head mix [rows(q), d];
/// the output projection is a separate linear op.
Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, int n_heads,
                       double dropout_rate, Rng* rng, bool dropout_enabled,
                       AttentionCapture* capture = nullptr,
                       int layer_index = 0);

/// Detached per-layer hidden states from the previous segment (dt_xl).
struct XlCache {
  std::vector<Tensor> layers;
  int len() const {
    return layers.empty() || !layers.front().defined()
               ? 0
               : layers.front().rows();
  }
  bool empty() const { return len() == 0; }
};

/// Which hidden state a layer caches for the next segment: its own output,
/// or its input (one layer below, the Transformer-XL convention).
enum class XlCacheSource { same_layer, layer_below };

struct ForwardContext {
  bool train = false;  // gates both dropouts
  Rng* dropout_rng = nullptr;
  double hidden_dropout = 0.0;
  double attn_dropout = 0.0;
  const XlCache* cache = nullptr;  // keys/values prefix, dt_xl only
  XlCache* new_cache = nullptr;    // filled during forward when non-null
  XlCacheSource cache_source = XlCacheSource::same_layer;
  AttentionCapture* capture = nullptr;
};

struct BlockConfig {
  int d_model = 0;
  int n_heads = 0;
  int mlp_hidden = 0;  // 0 means 4 * d_model
};

/// Pre-norm residual block: x + attn(ln1(x)), then x + mlp(ln2(x)).
class TransformerBlock {
 public:
  TransformerBlock(const BlockConfig& config, Rng& rng, double init_stddev);

  Tensor forward(const Tensor& x, const AttentionMask& mask,
                 const ForwardContext& ctx, int layer_index) const;

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  int n_heads_;
  Tensor ln1_g_, ln1_b_;
  Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  Tensor ln2_g_, ln2_b_;
  Tensor fc_in_w_, fc_in_b_, fc_out_w_, fc_out_b_;
};

/// Block stack with a final layer norm. Manages the dt_xl cache hand-off:
/// each layer's keys and values see the cached rows in front of the live
/// ones, and the context's new_cache receives this segment's states.
class TransformerStack {
 public:
  TransformerStack() = default;  // empty; assign a real one before use
  TransformerStack(int n_layers, const BlockConfig& config, Rng& rng,
                   double init_stddev);

  Tensor forward(const Tensor& x, const AttentionMask& mask,
                 const ForwardContext& ctx) const;

  int n_layers() const { return static_cast<int>(blocks_.size()); }

  void collect_params(const std::string& prefix,
                      std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  std::vector<TransformerBlock> blocks_;
  Tensor ln_f_g_, ln_f_b_;
};

}  // namespace rmdt
