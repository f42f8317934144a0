// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rmdt/rng.hpp"

namespace rmdt {

class Tensor;

namespace detail {

/// One node of the computation graph. Values live in `value`; gradients of
/// leaves accumulate in `grad`. Intermediate gradients are kept in a
/// side table during backward so a tape can be traversed more than once
/// (the segment trainer re-seeds write-memory outputs).
struct TensorNode {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // leaves only; allocated on first accumulation
  bool requires_grad = false;

  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates `out_grad` (the gradient flowing into this node) to
  // `parent_grads[i]`, which is pre-sized to parents[i]'s element count.
  std::function<void(const double* out_grad,
                     const std::vector<double*>& parent_grads)>
      backward_fn;

  size_t numel() const { return value.size(); }
  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats with optional gradient tracking.
/// Copying a Tensor copies a handle to shared storage, not the data.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double fill,
                     bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  /// Gaussian init, the parameter initialization used across the model.
  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int dim(int i) const;
  int ndim() const;
  size_t numel() const;
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  std::vector<double>& data();
  const std::vector<double>& data() const;
  double at(size_t i) const { return data()[i]; }

  bool requires_grad() const;
  /// Leaf gradient. Allocated (zero-filled) on first access.
  std::vector<double>& grad();
  bool has_grad() const;
  void zero_grad();

  /// Value copy with no graph history.
  Tensor detach() const;

  /// A leaf that requires grad, carrying this tensor's values. Used as the
  /// cut point for truncated gradient flow through memory handoffs.
  Tensor bridge() const;

  double scalar() const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor make_op_output(const char* name, std::vector<int> shape,
                               std::vector<double> value,
                               std::vector<Tensor> inputs,
                               std::function<void(const double*,
                                                  const std::vector<double*>&)>
                                   backward_fn);
};

/// Builds a graph node for a custom op. `backward_fn` receives the output
/// gradient and one accumulation buffer per input (nullptr when that input
/// needs no gradient); it must add into the buffers, not overwrite. History
/// is recorded only when grads are enabled and some input requires them.
Tensor make_op_output(const char* name, std::vector<int> shape,
                      std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(const double*,
                                         const std::vector<double*>&)>
                          backward_fn);

/// When false (NoGradGuard in scope), ops do not record graph history.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Toggles the non-finite value checks in op forward paths.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);           // same shape
Tensor add_row_bias(const Tensor& x, const Tensor& b);  // [R,C] + [C]
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
/// x [R,in] * W [in,out] + b [out]; the workhorse projection.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);
Tensor gelu(const Tensor& x);
/// Inverted dropout. Draws from `rng` only when `enabled` and rate > 0, so
/// toggling it does not perturb other streams.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool enabled);
/// Gather rows of `table` [V,d] at `indices` -> [len(indices), d].
Tensor embedding(const Tensor& table, const std::vector<int>& indices);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int row_begin, int row_end);

/// Mean negative log-likelihood over rows; targets are class indices.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
/// Row-weighted variant: sum_i w_i * nll_i / sum_i w_i. Rows with zero
/// weight do not contribute. Throws if all weights are zero.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<double>& row_weights);

Tensor mse(const Tensor& pred, const Tensor& target);
/// Row-weighted MSE: rows are averaged over columns, then weight-averaged.
Tensor mse(const Tensor& pred, const Tensor& target,
           const std::vector<double>& row_weights);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
/// additively into Tensor::grad(); intermediate gradients live in a
/// per-call side table and are dropped afterwards. When `free_graph` is
/// true the visited tape is cleared (closures and parent edges released).
void backward(const Tensor& loss, bool free_graph = true);

/// Sweep seeded with an explicit output gradient, for propagating memory
/// handoff gradients one hop into the producing segment's tape.
void backward_seeded(const Tensor& output, const std::vector<double>& seed,
                     bool free_graph = true);

/// Drop the tape below `t` without running backward.
void release_graph(const Tensor& t);

// ---------------------------------------------------------------------------
// Raw kernels (no graph) shared by ops and tests
// ---------------------------------------------------------------------------

/// C += A * B with optional transposes, row-major.
void matmul_acc(const double* a, const double* b, double* c, int m, int k,
                int n, bool transpose_a = false, bool transpose_b = false);

void check_finite(const std::vector<double>& values, const char* where);

}  // namespace rmdt
