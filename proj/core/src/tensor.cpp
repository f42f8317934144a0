// SPDX-License-Identifier: Apache-2.0
#include "rmdt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "rmdt/errors.hpp"

namespace rmdt {

namespace {

thread_local bool g_grad_enabled = true;
bool g_finite_checks = true;

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::runtime_error("tensor: negative dimension");
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::shared_ptr<detail::TensorNode> make_leaf(std::vector<int> shape,
                                              std::vector<double> value,
                                              bool requires_grad) {
  if (shape_numel(shape) != value.size())
    throw std::runtime_error("tensor: shape/data size mismatch");
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw std::runtime_error(std::string(op) + ": expected a 2-d tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::runtime_error(std::string(op) + ": shape mismatch");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const std::vector<double>& values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in ") + where);
  }
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0),
                          requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
  size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, fill),
                          requires_grad));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data,
                         bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev,
                     bool requires_grad) {
  size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (size_t i = 0; i < n; ++i) data[i] = rng.normal(0.0, stddev);
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

const std::vector<int>& Tensor::shape() const {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return node_->shape;
}

int Tensor::dim(int i) const {
  const auto& s = shape();
  if (i < 0 || i >= static_cast<int>(s.size()))
    throw std::runtime_error("tensor: dimension index out of range");
  return s[i];
}

int Tensor::ndim() const { return static_cast<int>(shape().size()); }

size_t Tensor::numel() const {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return node_->numel();
}

std::vector<double>& Tensor::data() {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return node_->value;
}

const std::vector<double>& Tensor::data() const {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::vector<double>& Tensor::grad() {
  if (!node_) throw std::runtime_error("tensor: undefined");
  if (!node_->requires_grad)
    throw std::runtime_error("tensor: grad on a tensor without grad tracking");
  if (node_->grad.empty()) node_->grad.assign(node_->numel(), 0.0);
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty())
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::bridge() const {
  if (!node_) throw std::runtime_error("tensor: undefined");
  return Tensor(make_leaf(node_->shape, node_->value, true));
}

double Tensor::scalar() const {
  if (numel() != 1) throw std::runtime_error("tensor: scalar() on non-scalar");
  return data()[0];
}

Tensor make_op_output(const char* name, std::vector<int> shape,
                      std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(const double*,
                                         const std::vector<double*>&)>
                          backward_fn) {
  if (shape_numel(shape) != value.size())
    throw std::runtime_error(std::string(name) +
                             ": output shape/data size mismatch");
  if (g_finite_checks) check_finite(value, name);
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  if (grad_enabled() && any_grad) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

void matmul_acc(const double* a, const double* b, double* c, int m, int k,
                int n, bool transpose_a, bool transpose_b) {
  if (!transpose_a && !transpose_b) {
    // ikj: streams B and C rows, scalar from A.
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<size_t>(i) * n;
      const double* arow = a + static_cast<size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (transpose_a && !transpose_b) {
    // a stored [k,m]
    for (int p = 0; p < k; ++p) {
      const double* arow = a + static_cast<size_t>(p) * m;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    // b stored [n,k]; dot of contiguous rows
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<size_t>(i) * k;
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
        crow[j] += acc;
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        crow[j] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_output(
      "add", a.shape(), std::move(out), {a, b},
      [n = a.numel()](const double* g, const std::vector<double*>& pg) {
        for (int which = 0; which < 2; ++which) {
          if (!pg[which]) continue;
          double* dst = pg[which];
          for (size_t i = 0; i < n; ++i) dst[i] += g[i];
        }
      });
}

Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  require_2d(x, "add_row_bias");
  if (b.ndim() != 1 || b.dim(0) != x.cols())
    throw std::runtime_error("add_row_bias: bias must match column count");
  int rows = x.rows(), cols = x.cols();
  std::vector<double> out(x.numel());
  const auto& xv = x.data();
  const auto& bv = b.data();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<size_t>(r) * cols + c] =
          xv[static_cast<size_t>(r) * cols + c] + bv[c];
  return make_op_output(
      "add_row_bias", x.shape(), std::move(out), {x, b},
      [rows, cols](const double* g, const std::vector<double*>& pg) {
        if (pg[0]) {
          for (size_t i = 0; i < static_cast<size_t>(rows) * cols; ++i)
            pg[0][i] += g[i];
        }
        if (pg[1]) {
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
              pg[1][c] += g[static_cast<size_t>(r) * cols + c];
        }
      });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto& av = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op_output(
      "scale", a.shape(), std::move(out), {a},
      [factor, n = a.numel()](const double* g,
                              const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < n; ++i) pg[0][i] += factor * g[i];
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows())
    throw std::runtime_error("matmul: inner dimensions differ");
  int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  matmul_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  detail::TensorNode* an = a.node().get();
  detail::TensorNode* bn = b.node().get();
  return make_op_output(
      "matmul", {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](const double* g, const std::vector<double*>& pg) {
        // dA = G B^T, dB = A^T G
        if (pg[0]) matmul_acc(g, bn->value.data(), pg[0], m, n, k, false, true);
        if (pg[1]) matmul_acc(an->value.data(), g, pg[1], k, m, n, true, false);
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_2d(x, "linear");
  require_2d(weight, "linear");
  if (x.cols() != weight.rows())
    throw std::runtime_error("linear: input width does not match weight");
  if (bias.ndim() != 1 || bias.dim(0) != weight.cols())
    throw std::runtime_error("linear: bias must match weight columns");
  int rows = x.rows(), in = x.cols(), out_dim = weight.cols();
  std::vector<double> out(static_cast<size_t>(rows) * out_dim);
  const auto& bv = bias.data();
  for (int r = 0; r < rows; ++r)
    std::copy(bv.begin(), bv.end(),
              out.begin() + static_cast<size_t>(r) * out_dim);
  matmul_acc(x.data().data(), weight.data().data(), out.data(), rows, in,
             out_dim);
  detail::TensorNode* xn = x.node().get();
  detail::TensorNode* wn = weight.node().get();
  return make_op_output(
      "linear", {rows, out_dim}, std::move(out), {x, weight, bias},
      [xn, wn, rows, in, out_dim](const double* g,
                                  const std::vector<double*>& pg) {
        if (pg[0])
          matmul_acc(g, wn->value.data(), pg[0], rows, out_dim, in, false,
                     true);
        if (pg[1])
          matmul_acc(xn->value.data(), g, pg[1], in, rows, out_dim, true,
                     false);
        if (pg[2]) {
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < out_dim; ++c)
              pg[2][c] += g[static_cast<size_t>(r) * out_dim + c];
        }
      });
}

Tensor softmax(const Tensor& x, int axis) {
  require_2d(x, "softmax");
  if (axis != 0 && axis != 1)
    throw std::runtime_error("softmax: axis must be 0 or 1");
  int rows = x.rows(), cols = x.cols();
  const auto& xv = x.data();
  std::vector<double> out(x.numel());
  if (axis == 1) {
    for (int r = 0; r < rows; ++r) {
      const double* row = xv.data() + static_cast<size_t>(r) * cols;
      double* orow = out.data() + static_cast<size_t>(r) * cols;
      double mx = row[0];
      for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        orow[c] = std::exp(row[c] - mx);
        sum += orow[c];
      }
      for (int c = 0; c < cols; ++c) orow[c] /= sum;
    }
  } else {
    for (int c = 0; c < cols; ++c) {
      double mx = xv[c];
      for (int r = 1; r < rows; ++r)
        mx = std::max(mx, xv[static_cast<size_t>(r) * cols + c]);
      double sum = 0.0;
      for (int r = 0; r < rows; ++r) {
        double e = std::exp(xv[static_cast<size_t>(r) * cols + c] - mx);
        out[static_cast<size_t>(r) * cols + c] = e;
        sum += e;
      }
      for (int r = 0; r < rows; ++r)
        out[static_cast<size_t>(r) * cols + c] /= sum;
    }
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_op_output(
      "softmax", x.shape(), std::move(out), {x},
      [saved, rows, cols, axis](const double* g,
                                const std::vector<double*>& pg) {
        if (!pg[0]) return;
        // dX = A * (G - sum(G*A) along axis)
        const auto& a = *saved;
        if (axis == 1) {
          for (int r = 0; r < rows; ++r) {
            size_t off = static_cast<size_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += g[off + c] * a[off + c];
            for (int c = 0; c < cols; ++c)
              pg[0][off + c] += a[off + c] * (g[off + c] - dot);
          }
        } else {
          for (int c = 0; c < cols; ++c) {
            double dot = 0.0;
            for (int r = 0; r < rows; ++r) {
              size_t i = static_cast<size_t>(r) * cols + c;
              dot += g[i] * a[i];
            }
            for (int r = 0; r < rows; ++r) {
              size_t i = static_cast<size_t>(r) * cols + c;
              pg[0][i] += a[i] * (g[i] - dot);
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  require_2d(x, "layer_norm");
  int rows = x.rows(), cols = x.cols();
  if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 ||
      bias.dim(0) != cols)
    throw std::runtime_error("layer_norm: gain/bias must match columns");
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (int r = 0; r < rows; ++r) {
    size_t off = static_cast<size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += xv[off + c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) {
      double d = xv[off + c] - mean;
      var += d * d;
    }
    var /= cols;
    double istd = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[r] = istd;
    for (int c = 0; c < cols; ++c) {
      double h = (xv[off + c] - mean) * istd;
      (*xhat)[off + c] = h;
      out[off + c] = gv[c] * h + bv[c];
    }
  }
  return make_op_output(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xhat, inv_std, rows, cols, gn = gain.node().get()](
          const double* g, const std::vector<double*>& pg) {
        const auto& gv = gn->value;
        for (int r = 0; r < rows; ++r) {
          size_t off = static_cast<size_t>(r) * cols;
          if (pg[0]) {
            // dxhat = g*gain; dx = istd*(dxhat - mean(dxhat)
            //                            - xhat*mean(dxhat*xhat))
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (int c = 0; c < cols; ++c) {
              double dh = g[off + c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[off + c];
            }
            mean_dh /= cols;
            mean_dh_h /= cols;
            double istd = (*inv_std)[r];
            for (int c = 0; c < cols; ++c) {
              double dh = g[off + c] * gv[c];
              pg[0][off + c] +=
                  istd * (dh - mean_dh - (*xhat)[off + c] * mean_dh_h);
            }
          }
          if (pg[1])
            for (int c = 0; c < cols; ++c)
              pg[1][c] += g[off + c] * (*xhat)[off + c];
          if (pg[2])
            for (int c = 0; c < cols; ++c) pg[2][c] += g[off + c];
        }
      });
}

Tensor gelu(const Tensor& x) {
  static constexpr double kSqrt2OverPi = 0.7978845608028654;
  static constexpr double kCubic = 0.044715;
  const auto& xv = x.data();
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = xv[i];
    double u = kSqrt2OverPi * (v + kCubic * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  detail::TensorNode* xn = x.node().get();
  return make_op_output(
      "gelu", x.shape(), std::move(out), {x},
      [xn, n = x.numel()](const double* g, const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < n; ++i) {
          double v = xn->value[i];
          double u = kSqrt2OverPi * (v + kCubic * v * v * v);
          double t = std::tanh(u);
          double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * v * v);
          double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
          pg[0][i] += d * g[i];
        }
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool enabled) {
  if (!enabled || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::runtime_error("dropout: rate must be below 1");
  double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  const auto& xv = x.data();
  std::vector<double> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    double m = rng.uniform() >= rate ? keep_scale : 0.0;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  return make_op_output(
      "dropout", x.shape(), std::move(out), {x},
      [mask, n = x.numel()](const double* g, const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < n; ++i) pg[0][i] += (*mask)[i] * g[i];
      });
}

Tensor embedding(const Tensor& table, const std::vector<int>& indices) {
  require_2d(table, "embedding");
  int vocab = table.rows(), width = table.cols();
  for (int idx : indices)
    if (idx < 0 || idx >= vocab)
      throw std::runtime_error("embedding: index out of range");
  int n = static_cast<int>(indices.size());
  std::vector<double> out(static_cast<size_t>(n) * width);
  const auto& tv = table.data();
  for (int i = 0; i < n; ++i)
    std::copy(tv.begin() + static_cast<size_t>(indices[i]) * width,
              tv.begin() + static_cast<size_t>(indices[i] + 1) * width,
              out.begin() + static_cast<size_t>(i) * width);
  return make_op_output(
      "embedding", {n, width}, std::move(out), {table},
      [idx = indices, width](const double* g,
                             const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (size_t i = 0; i < idx.size(); ++i) {
          double* dst = pg[0] + static_cast<size_t>(idx[i]) * width;
          const double* src = g + i * width;
          for (int c = 0; c < width; ++c) dst[c] += src[c];
        }
      });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no inputs");
  int cols = parts[0].cols();
  int total_rows = 0;
  std::vector<int> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != cols)
      throw std::runtime_error("concat_rows: column counts differ");
    row_counts.push_back(p.rows());
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(total_rows) * cols);
  for (const auto& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op_output(
      "concat_rows", {total_rows, cols}, std::move(out), parts,
      [row_counts, cols](const double* g, const std::vector<double*>& pg) {
        size_t offset = 0;
        for (size_t i = 0; i < row_counts.size(); ++i) {
          size_t count = static_cast<size_t>(row_counts[i]) * cols;
          if (pg[i])
            for (size_t j = 0; j < count; ++j) pg[i][j] += g[offset + j];
          offset += count;
        }
      });
}

Tensor slice_rows(const Tensor& x, int row_begin, int row_end) {
  require_2d(x, "slice_rows");
  if (row_begin < 0 || row_end > x.rows() || row_begin > row_end)
    throw std::runtime_error("slice_rows: bad row range");
  int cols = x.cols();
  int n = row_end - row_begin;
  std::vector<double> out(
      x.data().begin() + static_cast<size_t>(row_begin) * cols,
      x.data().begin() + static_cast<size_t>(row_end) * cols);
  return make_op_output(
      "slice_rows", {n, cols}, std::move(out), {x},
      [row_begin, n, cols](const double* g, const std::vector<double*>& pg) {
        if (!pg[0]) return;
        double* dst = pg[0] + static_cast<size_t>(row_begin) * cols;
        for (size_t i = 0; i < static_cast<size_t>(n) * cols; ++i)
          dst[i] += g[i];
      });
}

namespace {

Tensor cross_entropy_impl(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<double>* row_weights) {
  require_2d(logits, "cross_entropy");
  int rows = logits.rows(), vocab = logits.cols();
  if (static_cast<int>(targets.size()) != rows)
    throw std::runtime_error("cross_entropy: one target per row required");
  if (row_weights && static_cast<int>(row_weights->size()) != rows)
    throw std::runtime_error("cross_entropy: one weight per row required");

  auto weights = std::make_shared<std::vector<double>>();
  if (row_weights)
    *weights = *row_weights;
  else
    weights->assign(rows, 1.0);
  double weight_sum = 0.0;
  for (double w : *weights) {
    if (w < 0.0) throw std::runtime_error("cross_entropy: negative weight");
    weight_sum += w;
  }
  if (weight_sum <= 0.0)
    throw std::runtime_error("cross_entropy: all row weights are zero");

  const auto& xv = logits.data();
  auto probs = std::make_shared<std::vector<double>>(logits.numel(), 0.0);
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if ((*weights)[r] == 0.0) continue;
    int t = targets[r];
    if (t < 0 || t >= vocab)
      throw std::runtime_error("cross_entropy: target out of range");
    size_t off = static_cast<size_t>(r) * vocab;
    double mx = xv[off];
    for (int c = 1; c < vocab; ++c) mx = std::max(mx, xv[off + c]);
    double sum = 0.0;
    for (int c = 0; c < vocab; ++c) sum += std::exp(xv[off + c] - mx);
    double lse = mx + std::log(sum);
    for (int c = 0; c < vocab; ++c)
      (*probs)[off + c] = std::exp(xv[off + c] - lse);
    loss += (*weights)[r] * (lse - xv[off + t]);
  }
  loss /= weight_sum;

  return make_op_output(
      "cross_entropy", {1}, {loss}, {logits},
      [probs, weights, weight_sum, tg = targets, rows, vocab](
          const double* g, const std::vector<double*>& pg) {
        if (!pg[0]) return;
        for (int r = 0; r < rows; ++r) {
          double w = (*weights)[r];
          if (w == 0.0) continue;
          double coef = g[0] * w / weight_sum;
          size_t off = static_cast<size_t>(r) * vocab;
          for (int c = 0; c < vocab; ++c) {
            double ind = (c == tg[r]) ? 1.0 : 0.0;
            pg[0][off + c] += coef * ((*probs)[off + c] - ind);
          }
        }
      });
}

Tensor mse_impl(const Tensor& pred, const Tensor& target,
                const std::vector<double>* row_weights) {
  require_same_shape(pred, target, "mse");
  require_2d(pred, "mse");
  int rows = pred.rows(), cols = pred.cols();
  if (row_weights && static_cast<int>(row_weights->size()) != rows)
    throw std::runtime_error("mse: one weight per row required");

  auto weights = std::make_shared<std::vector<double>>();
  if (row_weights)
    *weights = *row_weights;
  else
    weights->assign(rows, 1.0);
  double weight_sum = 0.0;
  for (double w : *weights) {
    if (w < 0.0) throw std::runtime_error("mse: negative weight");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw std::runtime_error("mse: all row weights zero");

  const auto& pv = pred.data();
  const auto& tv = target.data();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if ((*weights)[r] == 0.0) continue;
    size_t off = static_cast<size_t>(r) * cols;
    double row_sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      double d = pv[off + c] - tv[off + c];
      row_sum += d * d;
    }
    loss += (*weights)[r] * row_sum / cols;
  }
  loss /= weight_sum;

  detail::TensorNode* pn = pred.node().get();
  detail::TensorNode* tn = target.node().get();
  return make_op_output(
      "mse", {1}, {loss}, {pred, target},
      [pn, tn, weights, weight_sum, rows, cols](
          const double* g, const std::vector<double*>& pg) {
        for (int r = 0; r < rows; ++r) {
          double w = (*weights)[r];
          if (w == 0.0) continue;
          double coef = g[0] * 2.0 * w / (weight_sum * cols);
          size_t off = static_cast<size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) {
            double d = pn->value[off + c] - tn->value[off + c];
            if (pg[0]) pg[0][off + c] += coef * d;
            if (pg[1]) pg[1][off + c] -= coef * d;
          }
        }
      });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  return cross_entropy_impl(logits, targets, nullptr);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<double>& row_weights) {
  return cross_entropy_impl(logits, targets, &row_weights);
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  return mse_impl(pred, target, nullptr);
}

Tensor mse(const Tensor& pred, const Tensor& target,
           const std::vector<double>& row_weights) {
  return mse_impl(pred, target, &row_weights);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

using detail::TensorNode;

// Post-order over the requires-grad subgraph: inputs first, root last.
void topo_collect(TensorNode* root, std::vector<TensorNode*>& order) {
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  visited.insert(root);
  stack.push_back({root, 0});
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      TensorNode* parent = top.first->parents[top.second].get();
      ++top.second;
      if (parent->requires_grad && visited.insert(parent).second)
        stack.push_back({parent, 0});
    } else {
      order.push_back(top.first);
      stack.pop_back();
    }
  }
}

// Gradients of intermediates live in `table` for the duration of one sweep;
// only leaves accumulate into their persistent grad buffer. A tape can
// therefore be swept repeatedly (with different seeds) until it is freed.
void sweep(const std::shared_ptr<TensorNode>& root, std::vector<double> seed,
           bool free_graph) {
  if (!root) throw std::runtime_error("backward: undefined tensor");
  if (!root->requires_grad)
    throw std::runtime_error("backward: tensor does not require grad");
  if (seed.size() != root->numel())
    throw std::runtime_error("backward: seed size mismatch");

  if (root->is_leaf()) {
    if (root->grad.empty()) root->grad.assign(root->numel(), 0.0);
    for (size_t i = 0; i < seed.size(); ++i) root->grad[i] += seed[i];
    return;
  }

  std::vector<TensorNode*> order;
  topo_collect(root.get(), order);

  std::unordered_map<TensorNode*, std::vector<double>> table;
  table[root.get()] = std::move(seed);

  std::vector<double*> parent_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->is_leaf() || !node->backward_fn) continue;
    auto entry = table.find(node);
    if (entry == table.end()) continue;  // no gradient reached this node

    parent_grads.clear();
    parent_grads.resize(node->parents.size(), nullptr);
    for (size_t i = 0; i < node->parents.size(); ++i) {
      TensorNode* parent = node->parents[i].get();
      if (!parent->requires_grad) continue;
      if (parent->is_leaf()) {
        if (parent->grad.empty()) parent->grad.assign(parent->numel(), 0.0);
        parent_grads[i] = parent->grad.data();
      } else {
        auto& buf = table[parent];
        if (buf.empty()) buf.assign(parent->numel(), 0.0);
        parent_grads[i] = buf.data();
      }
    }
    node->backward_fn(entry->second.data(), parent_grads);
    table.erase(entry);
  }

  if (free_graph) {
    for (TensorNode* node : order) {
      node->parents.clear();
      node->backward_fn = nullptr;
    }
  }
}

}  // namespace

void backward(const Tensor& loss, bool free_graph) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::runtime_error("backward: loss must be a defined scalar");
  sweep(loss.node(), {1.0}, free_graph);
}

void backward_seeded(const Tensor& output, const std::vector<double>& seed,
                     bool free_graph) {
  sweep(output.node(), seed, free_graph);
}

void release_graph(const Tensor& t) {
  if (!t.defined()) return;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::shared_ptr<TensorNode>> stack{t.node()};
  visited.insert(t.node().get());
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    for (auto& parent : node->parents) {
      if (visited.insert(parent.get()).second) stack.push_back(parent);
    }
    node->parents.clear();
    node->backward_fn = nullptr;
  }
}

}  // namespace rmdt
