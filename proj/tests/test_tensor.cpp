#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "sgcn/tensor.hpp"

using namespace sgcn;

namespace {

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul basics") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(vec(matmul(Tensor::identity(2), a)) == std::vector<double>{1, 2, 3, 4});
  CHECK(vec(matmul(Tensor::from_data({1, 2}, {1, 2}), Tensor::from_data({2, 1}, {0, 0}))) ==
        std::vector<double>{0});
  CHECK(vec(matmul(a, Tensor::from_data({2, 1}, {1, 1}))) == std::vector<double>{3, 7});
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
  Tensor a = Tensor::from_data({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from_data({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("relu forward and gradient") {
  CHECK(vec(relu(Tensor::from_data({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});

  Tensor x = Tensor::from_data({3}, {-1, -2, -3}, true);
  {
    Tape tape;
    Tensor y = reduce_all(relu(x), Reduce::Sum);
    CHECK(y.item() == 0.0);
    backward(y);
  }
  CHECK(vec(Tensor::wrap(x.impl())) == std::vector<double>{-1, -2, -3});
  for (double g : x.grad()) CHECK(g == 0.0);

  // upstream gradient 5 passes straight through at x = 3
  Tensor z = Tensor::from_data({1}, {3.0}, true);
  {
    Tape tape;
    Tensor y = reduce_all(scale(relu(z), 5.0), Reduce::Sum);
    backward(y);
  }
  CHECK(z.grad()[0] == 5.0);
}

TEST_CASE("hadamard examples") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  CHECK(vec(hadamard(a, Tensor::from_data({2}, {3, 4}))) == std::vector<double>{3, 8});
  CHECK(vec(hadamard(a, Tensor::full({2}, 1.0))) == vec(a));
  CHECK(vec(hadamard(a, Tensor::zeros({2}))) == std::vector<double>{0, 0});
  CHECK_THROWS_AS(hadamard(a, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("concat examples and errors") {
  Tensor a = Tensor::from_data({1}, {1});
  Tensor b = Tensor::from_data({1}, {2});
  CHECK(vec(concat({a, b}, 0)) == std::vector<double>{1, 2});
  CHECK(vec(concat({a}, 0)) == std::vector<double>{1});

  Tensor m = Tensor::zeros({2, 3});
  Tensor n = Tensor::zeros({2, 5});
  CHECK(concat({m, n}, 1).shape() == Shape{2, 8});
  CHECK_THROWS_AS(concat({}, 0), std::invalid_argument);
  CHECK_THROWS_AS(concat({m, Tensor::zeros({3, 3})}, 1), std::invalid_argument);
}

TEST_CASE("concat then slice-back is the identity on each part") {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::uniform({3, 2}, -1, 1, rng);
  Tensor b = Tensor::uniform({3, 5}, -1, 1, rng);
  Tensor c = Tensor::uniform({3, 1}, -1, 1, rng);
  Tensor joined = concat({a, b, c}, 1);
  CHECK(vec(slice(joined, 1, 0, 2)) == vec(a));
  CHECK(vec(slice(joined, 1, 2, 5)) == vec(b));
  CHECK(vec(slice(joined, 1, 7, 1)) == vec(c));
}

TEST_CASE("add_bias examples") {
  CHECK(vec(add_bias(Tensor::zeros({1, 2}), Tensor::from_data({2}, {1, 2}))) ==
        std::vector<double>{1, 2});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(vec(add_bias(a, Tensor::zeros({2}))) == vec(a));
  CHECK_THROWS_AS(add_bias(a, Tensor::zeros({3})), std::invalid_argument);

  // bias gradient sums over the broadcast axis
  Tensor b = Tensor::zeros({2}, true);
  {
    Tape tape;
    Tensor y = reduce_all(add_bias(Tensor::zeros({3, 2}), b), Reduce::Sum);
    backward(y);
  }
  CHECK(vec(Tensor::wrap(b.impl())) == std::vector<double>{0, 0});
  CHECK(b.grad()[0] == 3.0);
  CHECK(b.grad()[1] == 3.0);
}

TEST_CASE("reduce examples") {
  CHECK(vec(reduce(Tensor::from_data({1, 2}, {2, 4}), Reduce::Mean, 0)) ==
        std::vector<double>{2, 4});
  CHECK(reduce(Tensor::from_data({3}, {1, 2, 3}), Reduce::Sum, 0).item() == 6.0);
  CHECK(vec(reduce(Tensor::from_data({2, 2}, {1, 3, 5, 7}), Reduce::Mean, 0)) ==
        std::vector<double>{3, 5});
  CHECK_THROWS_AS(reduce(Tensor::zeros({2, 2}), Reduce::Sum, 2), std::invalid_argument);
}

TEST_CASE("backward populates leaf gradients") {
  Tensor x = Tensor::from_data({4}, {1, 2, 3, 4}, true);
  {
    Tape tape;
    backward(reduce_all(x, Reduce::Sum));
  }
  CHECK(vec(Tensor::wrap(x.impl())) == std::vector<double>{1, 2, 3, 4});
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from_data({2}, {0.5, 1.5}, true);
  {
    Tape tape;
    backward(reduce_all(relu(scale(y, -1.0)), Reduce::Sum));
  }
  for (double g : y.grad()) CHECK(g == 0.0);

  Tensor z = Tensor::from_data({1}, {3}, true);
  {
    Tape tape;
    backward(reduce_all(hadamard(z, z), Reduce::Sum));
  }
  CHECK(z.grad()[0] == 6.0);
}

TEST_CASE("backward requires a scalar root and accumulates across calls") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(x), std::invalid_argument);
  {
    Tape tape;
    Tensor loss = reduce_all(x, Reduce::Sum);
    backward(loss);
    backward(loss);
  }
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("gradient of a sum of losses equals the sum of separate gradients") {
  std::mt19937_64 rng(3);
  Tensor base = Tensor::uniform({5}, -1, 1, rng);

  auto loss1 = [](const Tensor& v) { return reduce_all(hadamard(v, v), Reduce::Sum); };
  auto loss2 = [](const Tensor& v) { return reduce_all(relu(v), Reduce::Mean); };

  Tensor xa = base.clone(true);
  {
    Tape tape;
    backward(add(loss1(xa), loss2(xa)));
  }
  Tensor xb = base.clone(true);
  {
    Tape tape;
    backward(loss1(xb));
    backward(loss2(xb));
  }
  for (std::int64_t i = 0; i < base.numel(); ++i) CHECK(xa.grad()[i] == xb.grad()[i]);
}

TEST_CASE("grad_check examples") {
  Tensor x = Tensor::from_data({4}, {0.3, -0.7, 1.1, 0.2});
  auto linear = [](const std::vector<Tensor>& in) { return reduce_all(in[0], Reduce::Sum); };
  CHECK(grad_check(linear, {x}) <= 1e-9);

  Tensor y = Tensor::from_data({2}, {1, 2});
  auto square = [](const std::vector<Tensor>& in) {
    return reduce_all(hadamard(in[0], in[0]), Reduce::Sum);
  };
  CHECK(grad_check(square, {y}) <= 1e-7);
}

namespace {

// A square with a deliberately wrong backward rule, registered through the
// public custom-op interface.
Tensor bad_square(const Tensor& x) {
  std::vector<double> d(x.data().begin(), x.data().end());
  for (auto& v : d) v *= v;
  Tensor out = Tensor::from_data(x.shape(), std::move(d));
  if (x.requires_grad()) {
    out.impl()->requires_grad = true;
    if (Tape* tape = Tape::active()) {
      auto xi = x.impl(), oi = out.impl();
      tape->record({x}, out, [xi, oi](GradStore& gs) {
        const auto* go = gs.find(oi.get());
        if (!go) return;
        auto& gx = gs.accumulate(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i] * 3.0 * xi->data[i];
      });
    }
  }
  return out;
}

}  // namespace

TEST_CASE("grad_check flags a corrupted backward rule") {
  Tensor x = Tensor::from_data({3}, {0.5, 1.5, -0.8});
  auto f = [](const std::vector<Tensor>& in) {
    return reduce_all(bad_square(in[0]), Reduce::Sum);
  };
  CHECK(grad_check(f, {x}) > 1e-2);
}

TEST_CASE("random composites pass grad_check at 1e-5") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    // inputs in [-1, 1], nudged away from the relu kink
    auto nudged = [&rng](const Shape& s) {
      Tensor t = Tensor::uniform(s, -1.0, 1.0, rng);
      std::vector<double> d(t.data().begin(), t.data().end());
      for (auto& v : d) {
        if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
      }
      return Tensor::from_data(s, std::move(d));
    };
    Tensor a = nudged({3, 4});
    Tensor w = nudged({4, 2});
    Tensor b = nudged({2});
    Tensor m = nudged({3, 2});
    auto f = [](const std::vector<Tensor>& in) {
      Tensor h = relu(add_bias(matmul(in[0], in[1]), in[2]));
      Tensor g = hadamard(h, in[3]);
      Tensor joined = concat({h, g}, 1);
      return reduce_all(reduce(joined, Reduce::Mean, 1), Reduce::Sum);
    };
    CHECK(grad_check(f, {a, w, b, m}) <= 1e-5);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from_data({0}, {}), std::invalid_argument);
  Tensor t = Tensor::zeros({2, 3}, true);
  CHECK(t.numel() == 6);
  CHECK(t.grad().size() == 6);
}

TEST_CASE("independent tapes run on separate threads") {
  auto worker = [](double value, double* grad_out) {
    Tensor x = Tensor::from_data({3}, {value, value, value}, true);
    for (int i = 0; i < 50; ++i) {
      Tape tape;
      backward(reduce_all(hadamard(x, x), Reduce::Sum));
      *grad_out = x.grad()[0];
      x.zero_grad();
    }
  };
  double ga = 0, gb = 0;
  std::thread ta(worker, 1.5, &ga);
  std::thread tb(worker, -2.5, &gb);
  ta.join();
  tb.join();
  CHECK(ga == 3.0);
  CHECK(gb == -5.0);
}
