#include <catch2/catch_amalgamated.hpp>

#include "eatformer/norm.hpp"
#include "eatformer/rng.hpp"
#include "testutil.hpp"

using namespace eatformer;
using testutil::gradcheck;

TEST_CASE("layernorm definition") {
  Norm ln = Norm::make(NormKind::layernorm, 3, /*affine=*/false);
  SECTION("constant vector maps to zeros under the eps guard") {
    Tensor x = Tensor::from({1, 1, 3}, {5.0, 5.0, 5.0});
    Tensor y = ln.forward(x, 2, false);
    for (double v : y.values()) REQUIRE(std::fabs(v) < 1e-9);
    REQUIRE(testutil::all_finite(y));
  }
  SECTION("unit mean/variance pre-affine") {
    Tensor x = Tensor::from({1, 1, 3}, {1.0, 2.0, 3.0});
    Tensor y = ln.forward(x, 2, false);
    double mean = 0.0, var = 0.0;
    for (double v : y.values()) mean += v / 3.0;
    for (double v : y.values()) var += (v - mean) * (v - mean) / 3.0;
    REQUIRE(std::fabs(mean) <= 1e-6);
    REQUIRE(std::fabs(var - 1.0) <= 1e-6);
  }
  SECTION("gradcheck through layernorm") {
    Rng rng(21);
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    Norm ln4 = Norm::make(NormKind::layernorm, 4);
    gradcheck(
        [&](std::vector<Tensor>& v) {
          Norm local = ln4;
          local.gamma = v[1];
          local.beta = v[2];
          Tensor y = local.forward(v[0], 2, false);
          return sum_all(mul(y, y));
        },
        {x.detach(), ln4.gamma.detach(), ln4.beta.detach()});
  }
}

TEST_CASE("batchnorm inference matches the scalar formula") {
  Norm bn = Norm::make(NormKind::batchnorm, 2);
  bn.running_mean.values() = {1.0, -2.0};
  bn.running_var.values() = {4.0, 0.25};
  Tensor x = Tensor::from({1, 2, 1, 2}, {3.0, 5.0, -1.0, -3.0});
  Tensor y = bn.forward(x, 1, false);
  auto expect = [&](double v, double m, double var) { return (v - m) / std::sqrt(var + 1e-5); };  // batchnorm eps
  REQUIRE(y.data()[0] == Catch::Approx(expect(3.0, 1.0, 4.0)).epsilon(1e-12));
  REQUIRE(y.data()[1] == Catch::Approx(expect(5.0, 1.0, 4.0)).epsilon(1e-12));
  REQUIRE(y.data()[2] == Catch::Approx(expect(-1.0, -2.0, 0.25)).epsilon(1e-12));
  REQUIRE(y.data()[3] == Catch::Approx(expect(-3.0, -2.0, 0.25)).epsilon(1e-12));
}

TEST_CASE("batchnorm training normalizes and updates running stats") {
  Rng rng(23);
  Norm bn = Norm::make(NormKind::batchnorm, 3);
  Tensor x = Tensor::randn({4, 3, 2, 2}, rng, 2.0, 3.0);
  Tensor y = bn.forward(x, 1, true);
  // per-channel output stats are ~(0, 1) pre-affine (gamma=1, beta=0 at init)
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 4; ++i) mean += y.data()[(b * 3 + c) * 4 + i] / 16.0;
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 4; ++i) {
        double d = y.data()[(b * 3 + c) * 4 + i] - mean;
        var += d * d / 16.0;
      }
    REQUIRE(std::fabs(mean) <= 1e-10);
    REQUIRE(var == Catch::Approx(1.0).margin(1e-4));
  }
  // running stats moved from (0, 1) toward the batch stats with momentum 0.1
  REQUIRE(bn.running_mean.data()[0] != 0.0);
  REQUIRE(bn.running_var.data()[0] != 1.0);
  REQUIRE_THROWS_AS(bn.forward(Tensor::zeros({1, 3, 2, 2}), 1, true), std::invalid_argument);
}

TEST_CASE("batchnorm training gradcheck (stats participate)") {
  Rng rng(29);
  Tensor x = Tensor::randn({3, 2, 2, 2}, rng);
  Norm bn = Norm::make(NormKind::batchnorm, 2);
  gradcheck(
      [&](std::vector<Tensor>& v) {
        Norm local = bn;
        local.gamma = v[1];
        local.beta = v[2];
        local.running_mean = Tensor::zeros({2});
        local.running_var = Tensor::ones({2});
        Tensor y = local.forward(v[0], 1, true);
        return sum_all(mul(y, y));
      },
      {x.detach(), bn.gamma.detach(), bn.beta.detach()});
}

TEST_CASE("batchnorm on sequence layout [B, L, C]") {
  Rng rng(31);
  Norm bn = Norm::make(NormKind::batchnorm, 4);
  Tensor x = Tensor::randn({2, 5, 4}, rng, -1.0, 2.0);
  Tensor y = bn.forward(x, 2, true);
  for (int c = 0; c < 4; ++c) {
    double mean = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int l = 0; l < 5; ++l) mean += y.data()[(b * 5 + l) * 4 + c] / 10.0;
    REQUIRE(std::fabs(mean) <= 1e-10);
  }
}
