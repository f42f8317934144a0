// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <doctest.h>

#include "rmdt/errors.hpp"
#include "rmdt/rng.hpp"
#include "rmdt/tensor.hpp"
#include "test_util.hpp"

using namespace rmdt;
using testutil::finite_diff;
using testutil::max_rel_error;

namespace {

std::vector<double> random_values(size_t n, Rng& rng) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

/// Sum of all entries of a matrix as a differentiable scalar:
/// ones_row * x * ones_col.
Tensor sum_entries(const Tensor& x) {
  Tensor left = Tensor::full({1, x.rows()}, 1.0);
  Tensor right = Tensor::full({x.cols(), 1}, 1.0);
  return matmul(matmul(left, x), right);
}

/// Weighted sum of all entries, to exercise full Jacobians in gradchecks.
Tensor weighted_sum(const Tensor& x, const std::vector<double>& w) {
  Tensor right = Tensor::from_data({x.cols(), 1},
                                   {w.begin(), w.begin() + x.cols()});
  Tensor left = Tensor::from_data(
      {1, x.rows()},
      std::vector<double>(w.begin() + x.cols(),
                          w.begin() + x.cols() + x.rows()));
  return matmul(matmul(left, x), right);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and annihilating product") {
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor y = matmul(id, x);
  CHECK(y.data() == std::vector<double>{1, 2, 3, 4});

  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 0});
  Tensor b = Tensor::from_data({2, 2}, {0, 0, 0, 1});
  Tensor z = matmul(a, b);
  CHECK(z.data() == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("matmul gradient of entry sum matches finite differences") {
  Rng rng(101);
  std::vector<double> a0 = random_values(12, rng);
  std::vector<double> b0 = random_values(8, rng);

  Tensor a = Tensor::from_data({3, 4}, a0, /*requires_grad=*/true);
  Tensor b = Tensor::from_data({4, 2}, b0, /*requires_grad=*/true);
  backward(sum_entries(matmul(a, b)));

  auto eval_a = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return sum_entries(matmul(Tensor::from_data({3, 4}, v),
                              Tensor::from_data({4, 2}, b0)))
        .scalar();
  };
  auto eval_b = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return sum_entries(matmul(Tensor::from_data({3, 4}, a0),
                              Tensor::from_data({4, 2}, v)))
        .scalar();
  };
  CHECK(max_rel_error(a.grad(), finite_diff(a0, eval_a)) < 1e-6);
  CHECK(max_rel_error(b.grad(), finite_diff(b0, eval_b)) < 1e-6);
}

TEST_CASE("softmax symmetry and saturation") {
  Tensor even = softmax(Tensor::from_data({1, 2}, {0, 0}), 1);
  CHECK(even.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  Tensor hot = softmax(Tensor::from_data({1, 2}, {1000, 0}), 1);
  CHECK(std::isfinite(hot.at(0)));
  CHECK(hot.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hot.at(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax jacobian matches finite differences") {
  Rng rng(102);
  std::vector<double> x0 = random_values(8, rng);
  std::vector<double> w = random_values(9, rng);

  Tensor x = Tensor::from_data({1, 8}, x0, /*requires_grad=*/true);
  backward(weighted_sum(softmax(x, 1), w));

  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return weighted_sum(softmax(Tensor::from_data({1, 8}, v), 1), w).scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, eval)) < 1e-6);
}

TEST_CASE("softmax over rows (axis 0)") {
  Tensor x = Tensor::from_data({2, 1}, {0, 0});
  Tensor y = softmax(x, 0);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("layer_norm constant and symmetric rows") {
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor flat = layer_norm(Tensor::from_data({1, 3}, {5, 5, 5}), gain, bias);
  for (int i = 0; i < 3; ++i) CHECK(flat.at(i) == doctest::Approx(0.0));

  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor::zeros({2});
  Tensor sym = layer_norm(Tensor::from_data({1, 2}, {1, -1}), g2, b2);
  double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(sym.at(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(sym.at(1) == doctest::Approx(-expected).epsilon(1e-12));
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(103);
  std::vector<double> x0 = random_values(12, rng);
  std::vector<double> g0 = random_values(4, rng);
  std::vector<double> b0 = random_values(4, rng);
  std::vector<double> w = random_values(7, rng);

  Tensor x = Tensor::from_data({3, 4}, x0, true);
  Tensor g = Tensor::from_data({4}, g0, true);
  Tensor b = Tensor::from_data({4}, b0, true);
  backward(weighted_sum(layer_norm(x, g, b), w));

  auto eval = [&](const std::vector<double>& xv, const std::vector<double>& gv,
                  const std::vector<double>& bv) {
    NoGradGuard no_grad;
    return weighted_sum(layer_norm(Tensor::from_data({3, 4}, xv),
                                   Tensor::from_data({4}, gv),
                                   Tensor::from_data({4}, bv)),
                        w)
        .scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, [&](const std::vector<double>& v) {
          return eval(v, g0, b0);
        })) < 1e-6);
  CHECK(max_rel_error(g.grad(), finite_diff(g0, [&](const std::vector<double>& v) {
          return eval(x0, v, b0);
        })) < 1e-6);
  CHECK(max_rel_error(b.grad(), finite_diff(b0, [&](const std::vector<double>& v) {
          return eval(x0, g0, v);
        })) < 1e-6);
}

TEST_CASE("gelu values and gradient") {
  Tensor zero = gelu(Tensor::from_data({1, 1}, {0.0}));
  CHECK(zero.at(0) == doctest::Approx(0.0));
  Tensor big = gelu(Tensor::from_data({1, 1}, {10.0}));
  CHECK(big.at(0) == doctest::Approx(10.0).epsilon(1e-9));

  Rng rng(104);
  std::vector<double> x0 = random_values(6, rng);
  std::vector<double> w = random_values(7, rng);
  Tensor x = Tensor::from_data({1, 6}, x0, true);
  backward(weighted_sum(gelu(x), w));
  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return weighted_sum(gelu(Tensor::from_data({1, 6}, v)), w).scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, eval)) < 1e-6);
}

TEST_CASE("cross_entropy values") {
  Tensor confident = cross_entropy(Tensor::from_data({1, 2}, {10, -10}), {0});
  CHECK(confident.scalar() == doctest::Approx(0.0).epsilon(1e-8));

  Tensor uniform = cross_entropy(Tensor::from_data({1, 2}, {0, 0}), {1});
  CHECK(uniform.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy gradient matches finite differences") {
  Rng rng(105);
  std::vector<double> x0 = random_values(20, rng);
  std::vector<int> targets = {3, 0, 4, 1};

  Tensor x = Tensor::from_data({4, 5}, x0, true);
  backward(cross_entropy(x, targets));
  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return cross_entropy(Tensor::from_data({4, 5}, v), targets).scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, eval)) < 1e-6);
}

TEST_CASE("weighted cross_entropy skips zero-weight rows") {
  Rng rng(106);
  std::vector<double> x0 = random_values(15, rng);
  Tensor x = Tensor::from_data({3, 5}, x0);

  // Zero-weight rows are skipped before target validation: row 1 carries an
  // out-of-range placeholder target.
  Tensor weighted = cross_entropy(x, {2, 5, 4}, {1.0, 0.0, 3.0});
  Tensor row0 = cross_entropy(slice_rows(x, 0, 1), {2});
  Tensor row2 = cross_entropy(slice_rows(x, 2, 3), {4});
  double expected = (1.0 * row0.scalar() + 3.0 * row2.scalar()) / 4.0;
  CHECK(weighted.scalar() == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(x, {0, 1, 2}, {0.0, 0.0, 0.0}),
                  std::runtime_error);
  CHECK_THROWS_AS(cross_entropy(x, {0, 5, 2}, {1.0, 1.0, 1.0}),
                  std::runtime_error);
}

TEST_CASE("weighted cross_entropy gradient matches finite differences") {
  Rng rng(107);
  std::vector<double> x0 = random_values(15, rng);
  std::vector<int> targets = {2, 0, 4};
  std::vector<double> weights = {0.5, 0.0, 2.0};

  Tensor x = Tensor::from_data({3, 5}, x0, true);
  backward(cross_entropy(x, targets, weights));
  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return cross_entropy(Tensor::from_data({3, 5}, v), targets, weights)
        .scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, eval)) < 1e-6);
}

TEST_CASE("mse values and analytic gradient") {
  Tensor same = mse(Tensor::from_data({1, 2}, {3, 4}),
                    Tensor::from_data({1, 2}, {3, 4}));
  CHECK(same.scalar() == doctest::Approx(0.0));

  Tensor ones = mse(Tensor::from_data({1, 2}, {1, 1}),
                    Tensor::from_data({1, 2}, {0, 0}));
  CHECK(ones.scalar() == doctest::Approx(1.0));

  Rng rng(108);
  std::vector<double> p0 = random_values(8, rng);
  std::vector<double> t0 = random_values(8, rng);
  Tensor p = Tensor::from_data({2, 4}, p0, true);
  backward(mse(p, Tensor::from_data({2, 4}, t0)));
  for (size_t i = 0; i < p0.size(); ++i)
    CHECK(p.grad()[i] ==
          doctest::Approx(2.0 * (p0[i] - t0[i]) / 8.0).epsilon(1e-12));

  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return mse(Tensor::from_data({2, 4}, v), Tensor::from_data({2, 4}, t0))
        .scalar();
  };
  CHECK(max_rel_error(p.grad(), finite_diff(p0, eval)) < 1e-6);
}

TEST_CASE("weighted mse matches the row-average formula") {
  Rng rng(109);
  std::vector<double> p0 = random_values(6, rng);
  std::vector<double> t0 = random_values(6, rng);
  std::vector<double> w = {2.0, 0.0, 1.0};

  Tensor loss = mse(Tensor::from_data({3, 2}, p0),
                    Tensor::from_data({3, 2}, t0), w);
  auto row_mean = [&](int r) {
    double s = 0.0;
    for (int c = 0; c < 2; ++c) {
      double d = p0[2 * r + c] - t0[2 * r + c];
      s += d * d;
    }
    return s / 2.0;
  };
  double expected = (2.0 * row_mean(0) + 1.0 * row_mean(2)) / 3.0;
  CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));

  std::vector<double> p1 = p0;
  Tensor p = Tensor::from_data({3, 2}, p1, true);
  backward(mse(p, Tensor::from_data({3, 2}, t0), w));
  auto eval = [&](const std::vector<double>& v) {
    NoGradGuard no_grad;
    return mse(Tensor::from_data({3, 2}, v), Tensor::from_data({3, 2}, t0), w)
        .scalar();
  };
  CHECK(max_rel_error(p.grad(), finite_diff(p1, eval)) < 1e-6);
}

TEST_CASE("backward identity and additive accumulation") {
  Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
  backward(scale(x, 1.0));
  CHECK(x.grad()[0] == doctest::Approx(1.0));

  Tensor y = Tensor::from_data({1, 1}, {3.0}, true);
  backward(add(y, y));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("repeated sweeps over a kept tape accumulate leaf gradients") {
  Tensor x = Tensor::from_data({1, 1}, {2.0}, true);
  Tensor loss = scale(x, 3.0);
  backward(loss, /*free_graph=*/false);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  backward(loss, /*free_graph=*/false);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  release_graph(loss);
}

TEST_CASE("backward_seeded applies an explicit output gradient") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 2.0);
  backward_seeded(y, {10.0, 100.0});
  CHECK(x.grad()[0] == doctest::Approx(20.0));
  CHECK(x.grad()[1] == doctest::Approx(200.0));
}

TEST_CASE("bridge is a grad-requiring leaf with the same values") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 3.0);
  Tensor b = y.bridge();
  CHECK(b.requires_grad());
  CHECK(b.node()->is_leaf());
  CHECK(b.data() == y.data());

  // Gradients through the bridge stop there; x is untouched.
  backward(sum_entries(b));
  CHECK(b.grad()[0] == doctest::Approx(1.0));
  CHECK_FALSE(x.has_grad());
  release_graph(y);
}

TEST_CASE("detach drops history and grad requirement") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 3.0);
  Tensor d = y.detach();
  CHECK_FALSE(d.requires_grad());
  CHECK(d.node()->is_leaf());
  CHECK(d.data() == y.data());
  release_graph(y);
}

TEST_CASE("add_row_bias, scale, linear gradients") {
  Rng rng(110);
  std::vector<double> x0 = random_values(6, rng);
  std::vector<double> w0 = random_values(6, rng);
  std::vector<double> b0 = random_values(2, rng);
  std::vector<double> mix = random_values(4, rng);

  Tensor x = Tensor::from_data({2, 3}, x0, true);
  Tensor w = Tensor::from_data({3, 2}, w0, true);
  Tensor b = Tensor::from_data({2}, b0, true);
  backward(weighted_sum(linear(x, w, b), mix));

  auto eval = [&](const std::vector<double>& xv, const std::vector<double>& wv,
                  const std::vector<double>& bv) {
    NoGradGuard no_grad;
    return weighted_sum(linear(Tensor::from_data({2, 3}, xv),
                               Tensor::from_data({3, 2}, wv),
                               Tensor::from_data({2}, bv)),
                        mix)
        .scalar();
  };
  CHECK(max_rel_error(x.grad(), finite_diff(x0, [&](const std::vector<double>& v) {
          return eval(v, w0, b0);
        })) < 1e-6);
  CHECK(max_rel_error(w.grad(), finite_diff(w0, [&](const std::vector<double>& v) {
          return eval(x0, v, b0);
        })) < 1e-6);
  CHECK(max_rel_error(b.grad(), finite_diff(b0, [&](const std::vector<double>& v) {
          return eval(x0, w0, v);
        })) < 1e-6);

  Tensor s = Tensor::from_data({1, 2}, {1.0, 2.0}, true);
  backward(sum_entries(scale(s, -2.5)));
  CHECK(s.grad()[0] == doctest::Approx(-2.5));
  CHECK(s.grad()[1] == doctest::Approx(-2.5));
}

TEST_CASE("embedding gathers rows and accumulates repeated indices") {
  Tensor table =
      Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, /*requires_grad=*/true);
  Tensor out = embedding(table, {2, 0, 2});
  CHECK(out.data() == std::vector<double>{5, 6, 1, 2, 5, 6});

  backward(sum_entries(out));
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("concat_rows and slice_rows round-trip with gradients") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2}, true);
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6}, true);
  Tensor cat = concat_rows({a, b});
  CHECK(cat.rows() == 3);
  CHECK(cat.data() == std::vector<double>{1, 2, 3, 4, 5, 6});

  Tensor mid = slice_rows(cat, 1, 3);
  CHECK(mid.data() == std::vector<double>{3, 4, 5, 6});

  backward(sum_entries(mid));
  CHECK_FALSE(a.has_grad());
  CHECK(b.grad() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("dropout identity modes leave the stream untouched") {
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});

  Rng probe(42);
  double first = probe.uniform();
  Rng probe2(42);
  Tensor off = dropout(x, 0.5, probe2, /*enabled=*/false);
  CHECK(off.data() == x.data());
  CHECK(probe2.uniform() == first);  // no draws when disabled

  Rng probe3(42);
  Tensor zero_rate = dropout(x, 0.0, probe3, /*enabled=*/true);
  CHECK(zero_rate.data() == x.data());
  CHECK(probe3.uniform() == first);
}

TEST_CASE("dropout scales kept entries by 1/(1-rate)") {
  Rng rng(112);
  Tensor x = Tensor::full({10, 10}, 1.0);
  Tensor y = dropout(x, 0.4, rng, /*enabled=*/true);
  int kept = 0;
  for (size_t i = 0; i < y.numel(); ++i) {
    bool is_zero = y.at(i) == 0.0;
    bool is_scaled = std::abs(y.at(i) - 1.0 / 0.6) < 1e-12;
    CHECK((is_zero || is_scaled));
    kept += is_scaled;
  }
  CHECK(kept > 30);
  CHECK(kept < 90);
}

TEST_CASE("two-layer MLP parameter gradients match finite differences") {
  Rng rng(113);
  int d_in = 3, d_hidden = 5, d_out = 2, batch = 4;
  std::vector<double> x0 = random_values(batch * d_in, rng);
  std::vector<double> w1 = random_values(d_in * d_hidden, rng);
  std::vector<double> b1 = random_values(d_hidden, rng);
  std::vector<double> w2 = random_values(d_hidden * d_out, rng);
  std::vector<double> b2 = random_values(d_out, rng);
  std::vector<int> targets = {1, 0, 1, 1};

  auto loss_value = [&](const std::vector<double>& w1v,
                        const std::vector<double>& b1v,
                        const std::vector<double>& w2v,
                        const std::vector<double>& b2v) {
    NoGradGuard no_grad;
    Tensor x = Tensor::from_data({batch, d_in}, x0);
    Tensor h = gelu(linear(x, Tensor::from_data({d_in, d_hidden}, w1v),
                           Tensor::from_data({d_hidden}, b1v)));
    Tensor logits = linear(h, Tensor::from_data({d_hidden, d_out}, w2v),
                           Tensor::from_data({d_out}, b2v));
    return cross_entropy(logits, targets).scalar();
  };

  Tensor tw1 = Tensor::from_data({d_in, d_hidden}, w1, true);
  Tensor tb1 = Tensor::from_data({d_hidden}, b1, true);
  Tensor tw2 = Tensor::from_data({d_hidden, d_out}, w2, true);
  Tensor tb2 = Tensor::from_data({d_out}, b2, true);
  Tensor x = Tensor::from_data({batch, d_in}, x0);
  backward(cross_entropy(linear(gelu(linear(x, tw1, tb1)), tw2, tb2),
                         targets));

  CHECK(max_rel_error(tw1.grad(), finite_diff(w1, [&](const std::vector<double>& v) {
          return loss_value(v, b1, w2, b2);
        })) < 1e-5);
  CHECK(max_rel_error(tb1.grad(), finite_diff(b1, [&](const std::vector<double>& v) {
          return loss_value(w1, v, w2, b2);
        })) < 1e-5);
  CHECK(max_rel_error(tw2.grad(), finite_diff(w2, [&](const std::vector<double>& v) {
          return loss_value(w1, b1, v, b2);
        })) < 1e-5);
  CHECK(max_rel_error(tb2.grad(), finite_diff(b2, [&](const std::vector<double>& v) {
          return loss_value(w1, b1, w2, v);
        })) < 1e-5);
}

TEST_CASE("finite checks flag non-finite op inputs") {
  CHECK(finite_checks_enabled());
  Tensor bad = Tensor::from_data({1, 1}, {std::nan("")});
  CHECK_THROWS_AS(scale(bad, 2.0), NumericError);

  set_finite_checks(false);
  CHECK_NOTHROW(scale(bad, 2.0));
  set_finite_checks(true);
}

TEST_CASE("no-grad scope records no history") {
  Tensor x = Tensor::from_data({1, 1}, {1.0}, true);
  NoGradGuard no_grad;
  Tensor y = scale(x, 2.0);
  CHECK(y.node()->is_leaf());
  CHECK_FALSE(y.requires_grad());
}

}  // TEST_SUITE
