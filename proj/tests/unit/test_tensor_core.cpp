// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "modkit/tensor/grad_check.hpp"
#include "modkit/tensor/ops.hpp"

using namespace modkit;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("matmul by identity returns the left factor") {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>::matrix(2, 2, {1, 2, 3, 4}));
  auto i = tape.constant(Tensor<float>::matrix(2, 2, {1, 0, 0, 1}));
  CHECK(matmul(a, i).value() == Tensor<float>::matrix(2, 2, {1, 2, 3, 4}));
}

TEST_CASE("relu of tanh clamps negatives and keeps tanh(2)") {
  Tape<double> tape;
  auto y = relu(tanh(tape.constant(Tensor<double>::vector({-1, 0, 2}))));
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == doctest::Approx(0.9640275800758169).epsilon(1e-15));
}

TEST_CASE("relu(tanh(z)) stays in [0,1) even where tanh saturates") {
  Tape<float> tape;
  auto y = relu(tanh(tape.constant(Tensor<float>::vector({-1e30f, -3, 0, 5, 9, 20, 1e30f}))));
  for (float v : y.value().data()) {
    CHECK(v >= 0.0f);
    CHECK(v < 1.0f);
  }
  Tape<double> tape64;
  auto y64 = relu(tanh(tape64.constant(Tensor<double>::vector({40.0, 1e300}))));
  for (double v : y64.value().data()) CHECK(v < 1.0);
}

TEST_CASE("cosine self-similarity is one") {
  Tape<double> tape;
  auto v = tape.constant(Tensor<double>::vector({0.3, -1.2, 4.0}));
  CHECK(cosine(v, v).value().item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("cosine with a zero vector is a domain error") {
  Tape<double> tape;
  auto v = tape.constant(Tensor<double>::vector({1, 2}));
  auto z = tape.constant(Tensor<double>::vector({0, 0}));
  CHECK_THROWS_AS(cosine(v, z), DomainError);
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>(Shape{2, 3}));
  auto b = tape.constant(Tensor<float>(Shape{2, 3}));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
  }
  auto c = tape.constant(Tensor<float>(Shape{2, 4}));
  CHECK_THROWS_AS(add(a, c), ShapeError);
  auto d = tape.constant(Tensor<float>(Shape{3}));
  CHECK_THROWS_AS(add(a, d), ShapeError);  // rank differs: no implicit expansion
}

TEST_CASE("backward of sum of squares is 2w") {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>::vector({1, 2}));
  tape.backward(sum(mul(w, w)));
  CHECK(w.grad() == Tensor<double>::vector({2, 4}));
}

TEST_CASE("cross entropy on uniform logits has gradient p - onehot") {
  Tape<double> tape;
  auto z = tape.leaf(Tensor<double>::matrix(1, 2, {0, 0}));
  tape.backward(cross_entropy(z, {0}));
  CHECK(z.grad()[0] == doctest::Approx(-0.5));
  CHECK(z.grad()[1] == doctest::Approx(0.5));
}

TEST_CASE("cosine gradient for orthogonal unit vectors") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>::vector({1, 0}));
  auto b = tape.constant(Tensor<double>::vector({0, 1}));
  tape.backward(cosine(a, b));
  CHECK(a.grad()[0] == doctest::Approx(0.0));
  CHECK(a.grad()[1] == doctest::Approx(1.0));
  // Independent check by central differences.
  const double err = grad_check(
      [&](Tape<double>& t, const Var<double>& x) { return cosine(x, t.constant(Tensor<double>::vector({0, 1}))); },
      Tensor<double>::vector({1, 0}), 1e-6);
  CHECK(err < 1e-8);
}

TEST_CASE("backward rejects non-scalar losses and reuse of a consumed tape") {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>::vector({1, 2}));
  CHECK_THROWS_AS(tape.backward(mul(w, w)), UsageError);
  auto s = sum(w);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), UsageError);
}

TEST_CASE("grad_check of an exact quadratic is tiny") {
  std::mt19937_64 rng(7);
  const double err = grad_check([](Tape<double>&, const Var<double>& x) { return sum(mul(x, x)); },
                                random_tensor({5}, rng));
  CHECK(err < 1e-8);
}

TEST_CASE("softmax rows are distributions") {
  std::mt19937_64 rng(3);
  Tape<double> tape;
  auto y = softmax(tape.constant(random_tensor({4, 7}, rng, -30, 30)));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      const double p = y.value().at(r, j);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("every primitive matches central differences within 1e-5") {
  std::mt19937_64 rng(11);
  const double tol = 1e-5;
  auto check = [&](const char* name, Shape shape, const ScalarFn& f) {
    INFO(name);
    CHECK(grad_check(f, random_tensor(std::move(shape), rng)) < tol);
  };
  // Weighted sums keep the upstream gradient non-uniform.
  auto weigh = [&rng](Tape<double>& t, const Var<double>& y) {
    std::mt19937_64 local(99);
    std::uniform_real_distribution<double> u(-1, 1);
    Tensor<double> w(y.shape());
    for (auto& v : w.storage()) v = u(local);
    (void)rng;
    return sum(mul(y, t.constant(w)));
  };
  const Tensor<double> other23 = random_tensor({2, 3}, rng);
  const Tensor<double> row13 = random_tensor({1, 3}, rng);

  check("add", {2, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, add(x, t.constant(other23))); });
  check("add-broadcast", {1, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, add(t.constant(other23), x)); });
  check("sub", {2, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, sub(t.constant(other23), x)); });
  check("mul-broadcast", {2, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, mul(x, t.constant(row13))); });
  check("mul-broadcast-rhs", {1, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, mul(t.constant(other23), x)); });
  check("scale", {4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, scale(x, -1.7)); });
  check("exp", {5}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, exp(x)); });
  check("log", {5}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, log(exp(x))); });
  check("tanh", {5}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, tanh(x)); });
  check("relu", {6}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, relu(x)); });
  check("mean", {6}, [&](Tape<double>&, const Var<double>& x) { return mean(mul(x, x)); });
  check("mean_axis", {2, 3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, mean_axis(x, 1)); });
  check("reshape", {2, 6}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, reshape(x, {3, 4})); });
  check("concat", {2, 3}, [&](Tape<double>& t, const Var<double>& x) {
    return weigh(t, concat<double>({x, t.constant(other23), x}, 1));
  });
  check("slice", {3, 5}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, slice(x, 1, 1, 4)); });
  check("transpose", {2, 3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, transpose_last2(x)); });
  check("gather", {2, 5}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, gather_last(x, {4, 0, 2})); });
  check("scatter", {2, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, scatter_last(x, {1, 3, 4}, 6)); });
  const Tensor<double> m34 = random_tensor({3, 4}, rng);
  check("matmul-lhs", {2, 3}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, matmul(x, t.constant(m34))); });
  check("matmul-rhs", {3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, matmul(t.constant(other23), x)); });
  const Tensor<double> b243 = random_tensor({2, 4, 3}, rng);
  check("bmm", {2, 3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, matmul(x, t.constant(b243))); });
  const Tensor<double> w43 = random_tensor({4, 3}, rng);
  const Tensor<double> b4 = random_tensor({4}, rng);
  check("linear-x", {2, 2, 3}, [&](Tape<double>& t, const Var<double>& x) {
    return weigh(t, linear(x, t.constant(w43), t.constant(b4)));
  });
  check("linear-w", {4, 3}, [&](Tape<double>& t, const Var<double>& w) {
    return weigh(t, linear(t.constant(other23), w, t.constant(b4)));
  });
  check("linear-b", {4}, [&](Tape<double>& t, const Var<double>& b) {
    return weigh(t, linear(t.constant(other23), t.constant(w43), b));
  });
  check("softmax", {3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, softmax(x)); });
  const Tensor<double> g5 = random_tensor({5}, rng);
  const Tensor<double> be5 = random_tensor({5}, rng);
  check("layer_norm-x", {3, 5}, [&](Tape<double>& t, const Var<double>& x) {
    return weigh(t, layer_norm(x, t.constant(g5), t.constant(be5)));
  });
  const Tensor<double> x35 = random_tensor({3, 5}, rng);
  check("layer_norm-gamma", {5}, [&](Tape<double>& t, const Var<double>& g) {
    return weigh(t, layer_norm(t.constant(x35), g, t.constant(be5)));
  });
  check("layer_norm-beta", {5}, [&](Tape<double>& t, const Var<double>& b) {
    return weigh(t, layer_norm(t.constant(x35), t.constant(g5), b));
  });
  const Tensor<double> v6 = random_tensor({6}, rng);
  check("cosine", {6}, [&](Tape<double>& t, const Var<double>& x) { return cosine(x, t.constant(v6)); });
  check("normalize_rows", {3, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, normalize_rows(x)); });
  check("mean_of_entries", {3, 3}, [&](Tape<double>&, const Var<double>& x) {
    return mean_of_entries(x, {{0, 1}, {2, 0}, {1, 1}, {0, 1}});
  });
  check("cross_entropy", {3, 4}, [&](Tape<double>&, const Var<double>& x) { return cross_entropy(x, {0, 3, 1}); });
  const Tensor<double> k = random_tensor({3, 2, 3, 3}, rng);
  const Tensor<double> kb = random_tensor({3}, rng);
  const Tensor<double> img = random_tensor({2, 2, 5, 5}, rng);
  check("conv2d-x", {2, 2, 5, 5}, [&](Tape<double>& t, const Var<double>& x) {
    return weigh(t, conv2d(x, t.constant(k), t.constant(kb), 1, 1));
  });
  check("conv2d-w", {3, 2, 3, 3}, [&](Tape<double>& t, const Var<double>& w) {
    return weigh(t, conv2d(t.constant(img), w, t.constant(kb), 2, 0));
  });
  check("conv2d-b", {3}, [&](Tape<double>& t, const Var<double>& b) {
    return weigh(t, conv2d(t.constant(img), t.constant(k), b, 1, 1));
  });
  check("max_pool2d", {2, 2, 4, 4}, [&](Tape<double>& t, const Var<double>& x) { return weigh(t, max_pool2d(x, 2)); });
}

TEST_CASE("forward evaluation is bit-deterministic") {
  std::mt19937_64 rng(5);
  const Tensor<double> x = random_tensor({4, 8}, rng);
  const Tensor<double> w = random_tensor({6, 8}, rng);
  auto run = [&] {
    Tape<double> tape;
    return softmax(linear(tape.constant(x), tape.constant(w), Var<double>{})).value();
  };
  CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("patchify orders patches row-major") {
  Tensor<float> img(Shape{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  auto p = patchify(img, 2);
  CHECK(p.shape() == Shape{1, 4, 4});
  CHECK(p.at(0, 1, 0) == 2.0f);
  CHECK(p.at(0, 2, 3) == 13.0f);
  CHECK_THROWS_AS(patchify(img, 3), ShapeError);
}
