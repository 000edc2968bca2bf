#include <doctest.h>

#include <cmath>

#include "support/finite_diff.hpp"
#include "xfer/nn.hpp"
#include "xfer/optimizer.hpp"
#include "xfer/rng.hpp"
#include "xfer/tensor.hpp"

using namespace xfer;

namespace {

TensorPtr random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const int n = shape_size(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::make(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("identity evaluation returns inputs untouched") {
  const TensorPtr x = Tensor::make({3}, {1, 2, 3});
  const TensorPtr y = reshape(x, {3});
  CHECK(y->data == std::vector<double>{1, 2, 3});
}

TEST_CASE("matmul with the identity matrix") {
  const TensorPtr eye = Tensor::make({2, 2}, {1, 0, 0, 1});
  const TensorPtr v = Tensor::make({2, 1}, {5, 7});
  const TensorPtr out = matmul(eye, v);
  CHECK(out->data == std::vector<double>{5, 7});
}

TEST_CASE("softmax of a constant row is uniform") {
  const TensorPtr out = softmax_rows(Tensor::make({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(out->at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const TensorPtr x = random_tensor({4, 7}, rng, -30.0, 30.0);
    const TensorPtr s = softmax_rows(x);
    for (int r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 7; ++c) {
        CHECK(s->at(r, c) >= 0.0);
        sum += s->at(r, c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("backward through a constant loss leaves gradients zero") {
  const TensorPtr w = Tensor::make({2}, {1.0, -2.0}, true);
  w->zero_grad();
  const TensorPtr loss = Tensor::scalar(4.2);
  backward(loss);
  CHECK(w->grad == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward of w*x seeds dw = x") {
  const TensorPtr w = Tensor::scalar(2.0, true);
  const TensorPtr x = Tensor::scalar(3.0);
  w->zero_grad();
  const TensorPtr loss = mul(w, x);
  backward(loss);
  CHECK(w->grad[0] == doctest::Approx(3.0));
}

TEST_CASE("backward requires a scalar loss") {
  const TensorPtr v = Tensor::make({2}, {1, 2}, true);
  CHECK_THROWS(backward(add(v, v)));
}

TEST_CASE("non-finite op output is rejected") {
  const TensorPtr big = Tensor::make({1}, {1e308});
  CHECK_THROWS_AS((void)add(big, big), std::runtime_error);
}

TEST_CASE("random three-layer net matches finite differences") {
  Rng rng(5);
  const TensorPtr w1 = random_tensor({5, 4}, rng);
  const TensorPtr b1 = random_tensor({5}, rng);
  const TensorPtr w2 = random_tensor({4, 5}, rng);
  const TensorPtr b2 = random_tensor({4}, rng);
  const TensorPtr w3 = random_tensor({2, 4}, rng);
  const TensorPtr x = Tensor::make({4}, {0.3, -0.7, 0.2, 0.9});
  const auto res = xfer::testing::check_gradients({w1, b1, w2, b2, w3}, [&] {
    const TensorPtr h1 = tanh_op(add(matmul(w1, x), b1));
    const TensorPtr h2 = sigmoid(add(matmul(w2, h1), b2));
    return sum(matmul(w3, h2));
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("lstm cell with zero weights and state yields zero output") {
  const int hidden = 3;
  LstmWeights w{Tensor::zeros({4 * hidden, 2}, true), Tensor::zeros({4 * hidden, hidden}, true),
                Tensor::zeros({4 * hidden}, true)};
  const auto [h, c] = lstm_cell(Tensor::make({2}, {0.9, -0.4}), Tensor::zeros({hidden}),
                                Tensor::zeros({hidden}), w);
  for (int i = 0; i < hidden; ++i) {
    CHECK(h->at(i) == 0.0);
    CHECK(c->at(i) == 0.0);
  }
}

TEST_CASE("single-unit lstm cell matches a hand-stepped gate calculation") {
  // gate order in the stacked weights: input, forget, candidate, output
  const TensorPtr wx = Tensor::make({4, 1}, {0.5, -0.3, 0.8, 0.2}, true);
  const TensorPtr wh = Tensor::make({4, 1}, {0.1, 0.4, -0.2, 0.3}, true);
  const TensorPtr b = Tensor::make({4}, {0.05, -0.1, 0.2, 0.15}, true);
  const double x = 0.7, h0 = 0.3, c0 = -0.5;

  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i_gate = sig(0.5 * x + 0.1 * h0 + 0.05);
  const double f_gate = sig(-0.3 * x + 0.4 * h0 - 0.1);
  const double g_cand = std::tanh(0.8 * x - 0.2 * h0 + 0.2);
  const double o_gate = sig(0.2 * x + 0.3 * h0 + 0.15);
  const double c_want = f_gate * c0 + i_gate * g_cand;
  const double h_want = o_gate * std::tanh(c_want);

  const auto [h, c] = lstm_cell(Tensor::make({1}, {x}), Tensor::make({1}, {h0}),
                                Tensor::make({1}, {c0}), LstmWeights{wx, wh, b});
  CHECK(h->at(0) == doctest::Approx(h_want).epsilon(1e-12));
  CHECK(c->at(0) == doctest::Approx(c_want).epsilon(1e-12));
}

TEST_CASE("lstm cell gradients match finite differences") {
  Rng rng(7);
  const int hidden = 3, in = 2;
  const TensorPtr wx = random_tensor({4 * hidden, in}, rng);
  const TensorPtr wh = random_tensor({4 * hidden, hidden}, rng);
  const TensorPtr b = random_tensor({4 * hidden}, rng);
  const TensorPtr x = Tensor::make({in}, {0.4, -0.6});
  const TensorPtr h0 = Tensor::make({hidden}, {0.1, -0.2, 0.3});
  const TensorPtr c0 = Tensor::make({hidden}, {0.2, 0.0, -0.4});
  const auto res = xfer::testing::check_gradients({wx, wh, b}, [&] {
    const auto [h, c] = lstm_cell(x, h0, c0, LstmWeights{wx, wh, b});
    return sum(h);
  });
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("conv, pool, softmax, cross-entropy and distance gradients match finite differences") {
  Rng rng(13);
  SUBCASE("matmul") {
    const TensorPtr a = random_tensor({3, 4}, rng);
    const TensorPtr b = random_tensor({4, 2}, rng);
    const auto res =
        xfer::testing::check_gradients({a, b}, [&] { return sum(matmul(a, b)); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("conv2d + maxpool") {
    const TensorPtr img = random_tensor({2, 6, 6}, rng);
    const TensorPtr w = random_tensor({3, 2, 3, 3}, rng);
    const TensorPtr b = random_tensor({3}, rng);
    const auto res = xfer::testing::check_gradients({img, w, b}, [&] {
      return sum(maxpool2x2(conv2d(img, w, b, Padding::same)));
    });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("softmax") {
    const TensorPtr x = random_tensor({3, 5}, rng);
    const TensorPtr pick = random_tensor({3, 5}, rng);
    pick->requires_grad = false;
    const auto res = xfer::testing::check_gradients(
        {x}, [&] { return sum(mul(softmax_rows(x), pick)); });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("weighted cross-entropy") {
    const TensorPtr logits = random_tensor({4, 3}, rng);
    const auto res = xfer::testing::check_gradients({logits}, [&] {
      return weighted_cross_entropy(logits, {0, 2, 1, 1}, {1.0, 0.5, 2.0, 0.0});
    });
    CHECK(res.max_rel_err < 1e-4);
  }
  SUBCASE("l2 and squared l2 distance") {
    const TensorPtr a = random_tensor({6}, rng);
    const TensorPtr b = random_tensor({6}, rng);
    const auto res =
        xfer::testing::check_gradients({a, b}, [&] { return l2_distance(a, b); });
    CHECK(res.max_rel_err < 1e-4);
    const auto res2 =
        xfer::testing::check_gradients({a, b}, [&] { return squared_l2_distance(a, b); });
    CHECK(res2.max_rel_err < 1e-4);
  }
  SUBCASE("frobenius distance") {
    const TensorPtr a = random_tensor({3, 3}, rng);
    const TensorPtr b = random_tensor({3, 3}, rng);
    const auto res =
        xfer::testing::check_gradients({a, b}, [&] { return frobenius_distance(a, b); });
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross-entropy ignores zero-weight rows entirely") {
  const TensorPtr logits = Tensor::make({2, 3}, {5, -1, 0.5, 2, 2, 2}, true);
  logits->zero_grad();
  const TensorPtr loss = weighted_cross_entropy(logits, {0, 1}, {0.0, 1.0});
  const TensorPtr only_second = weighted_cross_entropy(logits, {1, 1}, {0.0, 1.0});
  CHECK(loss->value() == doctest::Approx(only_second->value()).epsilon(1e-15));
  backward(loss);
  for (int c = 0; c < 3; ++c) CHECK(logits->grad[static_cast<std::size_t>(c)] == 0.0);
}

TEST_CASE("l2 distance of coincident points is zero with zero gradient") {
  const TensorPtr a = Tensor::make({3}, {1, 2, 3}, true);
  const TensorPtr b = Tensor::make({3}, {1, 2, 3});
  a->zero_grad();
  const TensorPtr d = l2_distance(a, b);
  CHECK(d->value() == 0.0);
  backward(d);
  for (const double g : a->grad) CHECK(g == 0.0);
}

TEST_CASE("adaptive optimizer leaves parameters alone under zero gradients") {
  const TensorPtr w = Tensor::make({2}, {1.5, -0.5}, true);
  Optimizer opt({w}, {});
  opt.zero_grad();
  opt.step();
  CHECK(w->data == std::vector<double>{1.5, -0.5});
}

TEST_CASE("plain sgd step arithmetic") {
  const TensorPtr w = Tensor::scalar(1.0, true);
  OptimizerOptions o;
  o.sgd = true;
  o.lr = 0.1;
  Optimizer opt({w}, o);
  w->zero_grad();
  w->grad[0] = 0.5;
  opt.step();
  CHECK(w->data[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("three adaptive steps on a convex quadratic strictly decrease it") {
  const TensorPtr w = Tensor::scalar(1.0, true);
  Optimizer opt({w}, {});
  double prev = 1.0;
  for (int i = 0; i < 3; ++i) {
    opt.zero_grad();
    const TensorPtr loss = mul(w, w);
    backward(loss);
    opt.step();
    const double f = w->data[0] * w->data[0];
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("missing or non-finite gradients are optimizer errors") {
  const TensorPtr w = Tensor::scalar(1.0, true);
  Optimizer opt({w}, {});
  CHECK_THROWS_AS(opt.step(), std::runtime_error);  // grad never allocated
}

TEST_CASE("identical seeds give bit-identical training trajectories") {
  const auto run = [] {
    Rng rng(99);
    const TensorPtr w = random_tensor({4, 4}, rng);
    const TensorPtr x = random_tensor({4}, rng);
    x->requires_grad = false;
    Optimizer opt({w}, {});
    for (int i = 0; i < 25; ++i) {
      opt.zero_grad();
      backward(sum(tanh_op(matmul(w, x))));
      opt.step();
    }
    return w->data;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);  // exact, not approximate
}

TEST_CASE("gradient clipping rescales the global norm") {
  const TensorPtr w = Tensor::make({2}, {0.0, 0.0}, true);
  OptimizerOptions o;
  o.sgd = true;
  o.lr = 1.0;
  o.clip_norm = 1.0;
  Optimizer opt({w}, o);
  w->zero_grad();
  w->grad = {3.0, 4.0};  // norm 5 -> scaled by 1/5
  opt.step();
  CHECK(w->data[0] == doctest::Approx(-0.6).epsilon(1e-12));
  CHECK(w->data[1] == doctest::Approx(-0.8).epsilon(1e-12));
}
