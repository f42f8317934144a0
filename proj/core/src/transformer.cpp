// SPDX-License-Identifier: Apache-2.0
#include "rmdt/transformer.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "rmdt/errors.hpp"

namespace rmdt {

Tensor attention_heads(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, int n_heads,
                       double dropout_rate, Rng* rng, bool dropout_enabled,
                       AttentionCapture* capture, int layer_index) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2)
    throw std::runtime_error("attention: q/k/v must be 2-d");
  int d = q.cols();
  if (k.cols() != d || v.cols() != d)
    throw std::runtime_error("attention: q/k/v widths differ");
  if (n_heads <= 0 || d % n_heads != 0)
    throw std::runtime_error("attention: width not divisible by heads");
  int rows = q.rows(), cols = k.rows();
  if (v.rows() != cols)
    throw std::runtime_error("attention: k/v row counts differ");
  if (mask.rows != rows || mask.cols != cols)
    throw std::runtime_error("attention: mask shape mismatch");
  if (capture && dropout_enabled && dropout_rate > 0.0)
    throw UsageError("attention: capture requires dropout disabled");

  int dh = d / n_heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& qv = q.data();
  const auto& kv = k.data();
  const auto& vv = v.data();

  size_t plane = static_cast<size_t>(rows) * cols;
  // Post-softmax, pre-dropout probabilities, [head][row][col]. Masked cells
  // stay exactly 0 and never enter the normalization.
  auto probs = std::make_shared<std::vector<double>>(n_heads * plane, 0.0);
  bool use_dropout = dropout_enabled && dropout_rate > 0.0;
  std::shared_ptr<std::vector<double>> drop_mask;
  if (use_dropout) {
    if (!rng) throw std::runtime_error("attention: dropout needs an rng");
    drop_mask = std::make_shared<std::vector<double>>(n_heads * plane, 0.0);
  }

  std::vector<double> out(static_cast<size_t>(rows) * d, 0.0);
  std::vector<double> srow(cols);
  double keep_scale = use_dropout ? 1.0 / (1.0 - dropout_rate) : 1.0;

  for (int h = 0; h < n_heads; ++h) {
    size_t head_off = static_cast<size_t>(h) * plane;
    int coff = h * dh;
    for (int r = 0; r < rows; ++r) {
      const uint8_t* mrow = mask.allowed.data() + static_cast<size_t>(r) * cols;
      const double* qrow = qv.data() + static_cast<size_t>(r) * d + coff;
      double mx = -1e300;
      int allowed = 0;
      for (int c = 0; c < cols; ++c) {
        if (!mrow[c]) continue;
        const double* krow = kv.data() + static_cast<size_t>(c) * d + coff;
        double s = 0.0;
        for (int j = 0; j < dh; ++j) s += qrow[j] * krow[j];
        s *= scale;
        srow[c] = s;
        mx = std::max(mx, s);
        ++allowed;
      }
      if (allowed == 0)
        throw std::runtime_error("attention: row with no allowed keys");
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        if (!mrow[c]) continue;
        srow[c] = std::exp(srow[c] - mx);
        sum += srow[c];
      }
      double* arow = probs->data() + head_off + static_cast<size_t>(r) * cols;
      double* orow = out.data() + static_cast<size_t>(r) * d + coff;
      for (int c = 0; c < cols; ++c) {
        if (!mrow[c]) continue;
        double a = srow[c] / sum;
        arow[c] = a;
        double weight = a;
        if (use_dropout) {
          double m = rng->uniform() >= dropout_rate ? keep_scale : 0.0;
          (*drop_mask)[head_off + static_cast<size_t>(r) * cols + c] = m;
          weight = a * m;
        }
        if (weight == 0.0) continue;
        const double* vrow = vv.data() + static_cast<size_t>(c) * d + coff;
        for (int j = 0; j < dh; ++j) orow[j] += weight * vrow[j];
      }
    }
  }

  if (capture) {
    for (int h = 0; h < n_heads; ++h) {
      AttentionCapture::Entry entry;
      entry.layer = layer_index;
      entry.head = h;
      entry.rows = rows;
      entry.cols = cols;
      entry.probs.assign(probs->begin() + static_cast<size_t>(h) * plane,
                         probs->begin() + static_cast<size_t>(h + 1) * plane);
      capture->entries.push_back(std::move(entry));
    }
  }

  detail::TensorNode* qn = q.node().get();
  detail::TensorNode* kn = k.node().get();
  detail::TensorNode* vn = v.node().get();
  auto mask_copy = std::make_shared<AttentionMask>(mask);

  return make_op_output(
      "attention", {rows, d}, std::move(out), {q, k, v},
      [qn, kn, vn, probs, drop_mask, mask_copy, n_heads, dh, rows, cols, d,
       scale, plane](const double* g, const std::vector<double*>& pg) {
        std::vector<double> da(cols), ds(cols);
        for (int h = 0; h < n_heads; ++h) {
          size_t head_off = static_cast<size_t>(h) * plane;
          int coff = h * dh;
          for (int r = 0; r < rows; ++r) {
            const uint8_t* mrow =
                mask_copy->allowed.data() + static_cast<size_t>(r) * cols;
            const double* grow = g + static_cast<size_t>(r) * d + coff;
            const double* arow =
                probs->data() + head_off + static_cast<size_t>(r) * cols;
            // dA' = dO V^T ; dV += A' dO ; then back through dropout
            // and softmax: dS = A (dA - sum(A dA)).
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) {
              if (!mrow[c]) continue;
              const double* vrow =
                  vn->value.data() + static_cast<size_t>(c) * d + coff;
              double dap = 0.0;
              for (int j = 0; j < dh; ++j) dap += grow[j] * vrow[j];
              double m = 1.0;
              if (drop_mask)
                m = (*drop_mask)[head_off + static_cast<size_t>(r) * cols + c];
              if (pg[2] && arow[c] * m != 0.0) {
                double w = arow[c] * m;
                double* dvrow = pg[2] + static_cast<size_t>(c) * d + coff;
                for (int j = 0; j < dh; ++j) dvrow[j] += w * grow[j];
              }
              da[c] = dap * m;
              dot += arow[c] * da[c];
            }
            if (!pg[0] && !pg[1]) continue;
            const double* qrow =
                qn->value.data() + static_cast<size_t>(r) * d + coff;
            for (int c = 0; c < cols; ++c) {
              if (!mrow[c]) continue;
              ds[c] = arow[c] * (da[c] - dot);
              if (ds[c] == 0.0) continue;
              double coef = ds[c] * scale;
              if (pg[0]) {
                const double* krow =
                    kn->value.data() + static_cast<size_t>(c) * d + coff;
                double* dqrow = pg[0] + static_cast<size_t>(r) * d + coff;
                for (int j = 0; j < dh; ++j) dqrow[j] += coef * krow[j];
              }
              if (pg[1]) {
                double* dkrow = pg[1] + static_cast<size_t>(c) * d + coff;
                for (int j = 0; j < dh; ++j) dkrow[j] += coef * qrow[j];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

TransformerBlock::TransformerBlock(const BlockConfig& config, Rng& rng,
                                   double init_stddev) {
  int d = config.d_model;
  int hidden = config.mlp_hidden > 0 ? config.mlp_hidden : 4 * d;
  if (d <= 0 || config.n_heads <= 0 || d % config.n_heads != 0)
    throw std::runtime_error("block: bad dimensions");
  n_heads_ = config.n_heads;
  ln1_g_ = Tensor::full({d}, 1.0, true);
  ln1_b_ = Tensor::zeros({d}, true);
  wq_ = Tensor::randn({d, d}, rng, init_stddev, true);
  bq_ = Tensor::zeros({d}, true);
  wk_ = Tensor::randn({d, d}, rng, init_stddev, true);
  bk_ = Tensor::zeros({d}, true);
  wv_ = Tensor::randn({d, d}, rng, init_stddev, true);
  bv_ = Tensor::zeros({d}, true);
  wo_ = Tensor::randn({d, d}, rng, init_stddev, true);
  bo_ = Tensor::zeros({d}, true);
  ln2_g_ = Tensor::full({d}, 1.0, true);
  ln2_b_ = Tensor::zeros({d}, true);
  fc_in_w_ = Tensor::randn({d, hidden}, rng, init_stddev, true);
  fc_in_b_ = Tensor::zeros({hidden}, true);
  fc_out_w_ = Tensor::randn({hidden, d}, rng, init_stddev, true);
  fc_out_b_ = Tensor::zeros({d}, true);
}

Tensor TransformerBlock::forward(const Tensor& x, const AttentionMask& mask,
                                 const ForwardContext& ctx,
                                 int layer_index) const {
  Tensor cache_rows;
  if (ctx.cache && layer_index < static_cast<int>(ctx.cache->layers.size())) {
    const Tensor& cached = ctx.cache->layers[layer_index];
    if (cached.defined() && cached.rows() > 0) cache_rows = cached;
  }

  // With an empty cache this path is identical to the plain one: no concat,
  // no slice, so dt_xl with nothing cached matches dt bit for bit.
  Tensor kv_src = cache_rows.defined() ? concat_rows({cache_rows, x}) : x;
  Tensor normed_kv = layer_norm(kv_src, ln1_g_, ln1_b_);
  Tensor normed_q =
      cache_rows.defined()
          ? slice_rows(normed_kv, cache_rows.rows(), kv_src.rows())
          : normed_kv;

  Tensor q = linear(normed_q, wq_, bq_);
  Tensor k = linear(normed_kv, wk_, bk_);
  Tensor v = linear(normed_kv, wv_, bv_);
  Tensor mixed = attention_heads(q, k, v, mask, n_heads_, ctx.attn_dropout,
                                 ctx.dropout_rng, ctx.train, ctx.capture,
                                 layer_index);
  Tensor attn_out = linear(mixed, wo_, bo_);
  if (ctx.train && ctx.hidden_dropout > 0.0)
    attn_out = dropout(attn_out, ctx.hidden_dropout, *ctx.dropout_rng, true);
  Tensor h = add(x, attn_out);

  Tensor normed2 = layer_norm(h, ln2_g_, ln2_b_);
  Tensor mlp = linear(gelu(linear(normed2, fc_in_w_, fc_in_b_)), fc_out_w_,
                      fc_out_b_);
  if (ctx.train && ctx.hidden_dropout > 0.0)
    mlp = dropout(mlp, ctx.hidden_dropout, *ctx.dropout_rng, true);
  return add(h, mlp);
}

void TransformerBlock::collect_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".ln1.g", ln1_g_);
  out.emplace_back(prefix + ".ln1.b", ln1_b_);
  out.emplace_back(prefix + ".attn.wq", wq_);
  out.emplace_back(prefix + ".attn.bq", bq_);
  out.emplace_back(prefix + ".attn.wk", wk_);
  out.emplace_back(prefix + ".attn.bk", bk_);
  out.emplace_back(prefix + ".attn.wv", wv_);
  out.emplace_back(prefix + ".attn.bv", bv_);
  out.emplace_back(prefix + ".attn.wo", wo_);
  out.emplace_back(prefix + ".attn.bo", bo_);
  out.emplace_back(prefix + ".ln2.g", ln2_g_);
  out.emplace_back(prefix + ".ln2.b", ln2_b_);
  out.emplace_back(prefix + ".mlp.fc_in.w", fc_in_w_);
  out.emplace_back(prefix + ".mlp.fc_in.b", fc_in_b_);
  out.emplace_back(prefix + ".mlp.fc_out.w", fc_out_w_);
  out.emplace_back(prefix + ".mlp.fc_out.b", fc_out_b_);
}

// ---------------------------------------------------------------------------
// Stack
// ---------------------------------------------------------------------------

TransformerStack::TransformerStack(int n_layers, const BlockConfig& config,
                                   Rng& rng, double init_stddev) {
  if (n_layers <= 0) throw std::runtime_error("stack: need at least 1 layer");
  blocks_.reserve(n_layers);
  for (int i = 0; i < n_layers; ++i)
    blocks_.emplace_back(config, rng, init_stddev);
  ln_f_g_ = Tensor::full({config.d_model}, 1.0, true);
  ln_f_b_ = Tensor::zeros({config.d_model}, true);
}

Tensor TransformerStack::forward(const Tensor& x, const AttentionMask& mask,
                                 const ForwardContext& ctx) const {
  if (ctx.new_cache) ctx.new_cache->layers.assign(blocks_.size(), Tensor());
  Tensor h = x;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    if (ctx.new_cache && ctx.cache_source == XlCacheSource::layer_below)
      ctx.new_cache->layers[l] = h.detach();
    Tensor out = blocks_[l].forward(h, mask, ctx, static_cast<int>(l));
    if (ctx.new_cache && ctx.cache_source == XlCacheSource::same_layer)
      ctx.new_cache->layers[l] = out.detach();
    h = out;
  }
  return layer_norm(h, ln_f_g_, ln_f_b_);
}

void TransformerStack::collect_params(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) const {
  for (size_t l = 0; l < blocks_.size(); ++l)
    blocks_[l].collect_params(prefix + ".block" + std::to_string(l), out);
  out.emplace_back(prefix + ".ln_f.g", ln_f_g_);
  out.emplace_back(prefix + ".ln_f.b", ln_f_b_);
}

}  // namespace rmdt
