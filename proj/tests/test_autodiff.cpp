#include <catch2/catch_amalgamated.hpp>

#include "eatformer/image.hpp"
#include "eatformer/ops.hpp"
#include "eatformer/rng.hpp"
#include "testutil.hpp"

using namespace eatformer;
using testutil::gradcheck;

TEST_CASE("grad of sum is ones; accumulation across backward calls") {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4}).set_requires_grad(true);
  Tensor loss = sum_all(x);
  loss.backward();
  REQUIRE(x.grad() == std::vector<double>{1, 1, 1, 1});
  loss.backward();
  REQUIRE(x.grad() == std::vector<double>{2, 2, 2, 2});
  x.zero_grad();
  loss.backward();
  REQUIRE(x.grad() == std::vector<double>{1, 1, 1, 1});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  Tensor y = mul_scalar(x, 2.0);
  REQUIRE_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("finite differences: elementwise and broadcast ops") {
  Rng rng(3);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor a = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({2, 3}, rng);
    gradcheck([](std::vector<Tensor>& v) { return sum_all(mul(add(v[0], v[1]), v[0])); },
              {a.detach(), b.detach()});
    Tensor row = Tensor::randn({3}, rng);
    gradcheck([](std::vector<Tensor>& v) { return sum_all(mul(v[0], v[1])); },
              {a.detach(), row.detach()});
  }
}

TEST_CASE("finite differences: activations") {
  Rng rng(5);
  Tensor x = Tensor::randn({12}, rng);
  // keep away from the relu kink
  for (auto& v : x.values())
    if (std::fabs(v) < 0.05) v += 0.2;
  gradcheck([](std::vector<Tensor>& v) { return sum_all(mul(relu(v[0]), v[0])); }, {x.detach()});
  gradcheck([](std::vector<Tensor>& v) { return sum_all(gelu(v[0])); }, {x.detach()});
  gradcheck([](std::vector<Tensor>& v) { return sum_all(mul(sigmoid(v[0]), v[0])); },
            {x.detach()});
  Tensor pos = Tensor::rand_uniform({8}, rng, 0.5, 2.0);
  gradcheck([](std::vector<Tensor>& v) { return sum_all(pow_scalar(v[0], -0.5)); },
            {pos.detach()});
}

TEST_CASE("finite differences: softmax dotted with constant") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::randn({2, 5}, rng);
    Tensor w = Tensor::randn({2, 5}, rng);
    gradcheck([&w](std::vector<Tensor>& v) { return sum_all(mul(softmax(v[0], 1), w)); },
              {x.detach()});
  }
}

TEST_CASE("finite differences: matmul and linear") {
  Rng rng(13);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({4, 2}, rng);
  gradcheck([](std::vector<Tensor>& v) { return sum_all(matmul(v[0], v[1])); },
            {a.detach(), b.detach()});
  Tensor xb = Tensor::randn({2, 3, 4}, rng);
  Tensor w = Tensor::randn({4, 5}, rng);
  Tensor bias = Tensor::randn({5}, rng);
  gradcheck(
      [](std::vector<Tensor>& v) {
        return sum_all(mul(linear(v[0], v[1], v[2]), linear(v[0], v[1], v[2])));
      },
      {xb.detach(), w.detach(), bias.detach()});
}

TEST_CASE("finite differences: reductions, reshape, transpose, concat, narrow") {
  Rng rng(17);
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor m = mean_axes(v[0], {0, 2});
        return sum_all(mul(m, m));
      },
      {x.detach()});
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor r = reshape(v[0], {6, 4});
        Tensor t = transpose_last2(r);
        return sum_all(mul(t, t));
      },
      {x.detach()});
  Tensor y = Tensor::randn({2, 2, 4}, rng);
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor c = concat({v[0], v[1]}, 1);
        Tensor n = narrow(c, 1, 1, 3);
        return sum_all(mul(n, n));
      },
      {x.detach(), y.detach()});
}

TEST_CASE("finite differences: cross entropy") {
  Rng rng(19);
  Tensor logits = Tensor::randn({3, 5}, rng);
  std::vector<std::int64_t> labels{0, 3, 4};
  gradcheck([&labels](std::vector<Tensor>& v) { return cross_entropy(v[0], labels); },
            {logits.detach()}, 1e-4);
}

TEST_CASE("gradients flow through shared subexpressions") {
  Tensor x = Tensor::from({1}, {3.0}).set_requires_grad(true);
  Tensor y = mul(x, x);      // x^2
  Tensor z = mul(y, x);      // x^3
  Tensor loss = add(y, z);   // x^2 + x^3
  loss.backward();
  REQUIRE(x.grad()[0] == Catch::Approx(2 * 3.0 + 3 * 9.0).epsilon(1e-12));
}
