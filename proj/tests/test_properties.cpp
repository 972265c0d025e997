// Randomized-shape property trials for the engine-wide invariants.

#include <catch2/catch_amalgamated.hpp>
#include <thread>

#include "eatformer/attention.hpp"
#include "eatformer/model.hpp"
#include "testutil.hpp"

using namespace eatformer;

namespace {

Shape random_shape(Rng& rng, std::size_t max_rank = 4, std::int64_t max_extent = 5) {
  const std::size_t r = 1 + rng.uniform_index(max_rank);
  Shape s(r);
  for (auto& d : s) d = 1 + rng.uniform_index(max_extent);
  return s;
}

// drops random leading dims and squashes random dims to 1 so the result
// still broadcasts against `base`
Shape broadcastable_against(const Shape& base, Rng& rng) {
  const std::size_t drop = rng.uniform_index(base.size());
  Shape s(base.begin() + drop, base.end());
  for (auto& d : s)
    if (rng.uniform() < 0.4) d = 1;
  if (s.empty()) s = {1};
  return s;
}

double ref_at(const Tensor& t, const Shape& out, std::int64_t flat) {
  // general numpy-style lookup of t's element for a flat index into `out`
  const Shape ostr = detail::strides_of(out);
  const Shape tstr = detail::aligned_strides(t.shape(), out);
  std::int64_t off = 0;
  for (std::size_t d = 0; d < out.size(); ++d) {
    const std::int64_t idx = (flat / ostr[d]) % out[d];
    off += idx * tstr[d];
  }
  return t.data()[off];
}

}  // namespace

TEST_CASE("property: broadcast add/mul match the per-index oracle") {
  Rng rng(9001);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a = Tensor::randn(random_shape(rng), rng);
    Tensor b = Tensor::randn(broadcastable_against(a.shape(), rng), rng);
    Tensor s = add(a, b);
    Tensor m = mul(a, b);
    const Shape& out = s.shape();
    for (std::int64_t i = 0; i < s.numel(); ++i) {
      REQUIRE(s.data()[i] == ref_at(a, out, i) + ref_at(b, out, i));
      REQUIRE(m.data()[i] == ref_at(a, out, i) * ref_at(b, out, i));
    }
  }
}

TEST_CASE("property: softmax rows are stochastic and shift invariant") {
  Rng rng(9002);
  for (int trial = 0; trial < 100; ++trial) {
    Shape s = random_shape(rng, 3, 6);
    const int axis = static_cast<int>(rng.uniform_index(s.size()));
    Tensor x = Tensor::randn(s, rng, 0.0, 3.0);
    Tensor y = softmax(x, axis);
    Tensor sums = sum_axes(y, {axis}, false);
    for (double v : sums.values()) REQUIRE(std::fabs(v - 1.0) <= 1e-12);
    Tensor shifted = softmax(add_scalar(x, rng.uniform(-50.0, 50.0)), axis);
    REQUIRE(testutil::max_abs_diff(y, shifted) <= 1e-12);
    REQUIRE(testutil::all_finite(y));
  }
}

TEST_CASE("property: layout and window roundtrips at random geometry") {
  Rng rng(9003);
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t B = 1 + rng.uniform_index(3), C = 1 + rng.uniform_index(6);
    const std::int64_t H = 1 + rng.uniform_index(12), W = 1 + rng.uniform_index(12);
    Tensor x = Tensor::randn({B, C, H, W}, rng);
    REQUIRE(Tensor(seq2img(img2seq(x), H, W)).values() == x.values());
    const std::int64_t win = 1 + rng.uniform_index(8);
    Tensor tiles = window_partition(x, win);
    REQUIRE(Tensor(window_reverse(tiles, win, B, H, W)).values() == x.values());
    const WindowGrid grid = window_grid(H, W, win);
    // every valid position appears exactly once in the tile mask
    Tensor mask = window_valid_mask(grid);
    double count = 0.0;
    for (double v : mask.values()) count += v;
    REQUIRE(count == static_cast<double>(H * W));
  }
}

TEST_CASE("property: finiteness is preserved through a full block") {
  Rng rng(9004);
  for (int trial = 0; trial < 10; ++trial) {
    const std::int64_t C = 32;
    EatBlock block;
    block.msra = MsraParams::make(C, C, 3, {1, 2}, 1, true, NormKind::batchnorm, rng);
    block.gli = GliParams::make(C, 0.5, 32, 3, true, 3, NormKind::batchnorm, rng);
    block.ffn_norm = Norm::make(NormKind::batchnorm, C);
    block.ffn = FfnParams::make(C, 2, Activation::gelu, rng);
    Tensor x = Tensor::randn({2, C, 5, 5}, rng, 0.0, 10.0);  // large but finite inputs
    Tensor y = block.forward(x, true);
    REQUIRE(testutil::all_finite(y));
  }
}

TEST_CASE("property: shared read-only inference is thread-consistent") {
  Model m = build_variant(make_variant_spec("desk"), 17);
  Rng rng(9005);
  Tensor x = Tensor::rand_uniform({1, 3, 32, 32}, rng);
  Tensor expected = m.forward(x, false);
  std::vector<Tensor> results(4);
  std::vector<std::thread> workers;
  for (auto& slot : results)
    workers.emplace_back([&m, &x, &slot] { slot = m.forward(x, false); });
  for (auto& w : workers) w.join();
  for (const auto& r : results) REQUIRE(r.values() == expected.values());
}
