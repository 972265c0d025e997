#include <catch2/catch_amalgamated.hpp>

#include "eatformer/image.hpp"
#include "eatformer/rng.hpp"
#include "testutil.hpp"

using namespace eatformer;
using testutil::gradcheck;

namespace {

// Independent convolution oracle: materializes the zero-padded input, then
// slides the window with plain index arithmetic.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                                int padding, int dilation, int groups) {
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), k = w.dim(2);
  const std::int64_t Hp = H + 2 * padding, Wp = W + 2 * padding;
  std::vector<double> padded(static_cast<std::size_t>(B * Cin * Hp * Wp), 0.0);
  for (std::int64_t bb = 0; bb < B; ++bb)
    for (std::int64_t c = 0; c < Cin; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx)
          padded[((bb * Cin + c) * Hp + y + padding) * Wp + xx + padding] =
              x.data()[((bb * Cin + c) * H + y) * W + xx];
  const std::int64_t OH = (Hp - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t OW = (Wp - dilation * (k - 1) - 1) / stride + 1;
  const std::int64_t CinG = Cin / groups, CoutG = Cout / groups;
  std::vector<double> out(static_cast<std::size_t>(B * Cout * OH * OW), 0.0);
  for (std::int64_t bb = 0; bb < B; ++bb)
    for (std::int64_t co = 0; co < Cout; ++co)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (std::int64_t ci = 0; ci < CinG; ++ci)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx)
                acc += padded[((bb * Cin + (co / CoutG) * CinG + ci) * Hp + oy * stride +
                               ky * dilation) *
                                  Wp +
                              ox * stride + kx * dilation] *
                       w.data()[((co * CinG + ci) * k + ky) * k + kx];
          out[((bb * Cout + co) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity with 1x1 kernel") {
  Rng rng(2);
  Tensor x = Tensor::randn({1, 3, 4, 4}, rng);
  std::vector<double> wdata(9, 0.0);
  wdata[0 * 3 + 0] = 1.0;
  wdata[1 * 3 + 1] = 1.0;
  wdata[2 * 3 + 2] = 1.0;
  Tensor w = Tensor::from({3, 3, 1, 1}, wdata);
  Tensor y = conv2d(x, w, {});
  REQUIRE(testutil::bitwise_equal(y, x));
}

TEST_CASE("conv2d matches naive sliding-window oracle") {
  Rng rng(4);
  struct Case {
    int cin, cout, h, w, k, stride, pad, dil, groups;
  };
  for (const auto& c : {Case{4, 4, 6, 6, 3, 1, 2, 2, 1}, Case{4, 8, 7, 5, 3, 2, 1, 1, 2},
                        Case{6, 6, 5, 5, 3, 1, 1, 1, 6}, Case{3, 5, 8, 8, 1, 2, 0, 1, 1}}) {
    Tensor x = Tensor::randn({1, c.cin, c.h, c.w}, rng);
    Tensor w = Tensor::randn({c.cout, c.cin / c.groups, c.k, c.k}, rng);
    Tensor b = Tensor::randn({c.cout}, rng);
    ConvOpts o{c.stride, c.pad, c.dil, c.groups};
    Tensor y = conv2d(x, w, b, o);
    auto expect = conv_oracle(x, w, b, c.stride, c.pad, c.dil, c.groups);
    REQUIRE(y.values().size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i)
      REQUIRE(std::fabs(y.values()[i] - expect[i]) <= 1e-10);
  }
}

TEST_CASE("conv2d geometry and configuration errors") {
  Tensor x = Tensor::zeros({1, 4, 5, 5});
  REQUIRE_THROWS_AS(conv2d(x, Tensor::zeros({4, 2, 3, 3}), ConvOpts{1, 0, 1, 3}),
                    std::invalid_argument);  // indivisible groups
  REQUIRE_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 3, 3}), ConvOpts{1, 0, 4, 1}),
                    std::invalid_argument);  // kernel does not fit: empty output
  REQUIRE(conv2d(x, Tensor::zeros({4, 4, 3, 3}), ConvOpts{1, 1, 1, 1}).shape() ==
          Shape{1, 4, 5, 5});
}

TEST_CASE("conv2d parameter count convention") {
  // (C*k^2/G + 1)*C at C=64, k=3, G=1
  Tensor w = Tensor::zeros({64, 64, 3, 3});
  Tensor b = Tensor::zeros({64});
  REQUIRE(w.numel() + b.numel() == 36928);
}

TEST_CASE("conv2d gradients") {
  Rng rng(6);
  Tensor x = Tensor::randn({2, 2, 5, 5}, rng);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.0, 0.5);
  Tensor b = Tensor::randn({3}, rng);
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor y = conv2d(v[0], v[1], v[2], ConvOpts{2, 1, 1, 1});
        return sum_all(mul(y, y));
      },
      {x.detach(), w.detach(), b.detach()});
  // depthwise with dilation
  Tensor wd = Tensor::randn({2, 1, 3, 3}, rng, 0.0, 0.5);
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor y = conv2d(v[0], v[1], ConvOpts{1, 2, 2, 2});
        return sum_all(mul(y, y));
      },
      {x.detach(), wd.detach()});
}

TEST_CASE("img2seq / seq2img layout and roundtrip") {
  Rng rng(8);
  Tensor x = Tensor::randn({2, 8, 7, 5}, rng);
  Tensor seq = img2seq(x);
  REQUIRE(seq.shape() == Shape{2, 35, 8});
  // x[0, c, i, j] lands at seq[0, i*W + j, c]
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 5; ++j)
        REQUIRE(seq.data()[(0 * 35 + i * 5 + j) * 8 + c] ==
                x.data()[((0 * 8 + c) * 7 + i) * 5 + j]);
  Tensor back = seq2img(seq, 7, 5);
  REQUIRE(testutil::bitwise_equal(back, x));
  REQUIRE_THROWS_AS(seq2img(seq, 6, 5), std::invalid_argument);

  Tensor small = Tensor::randn({1, 2, 2, 2}, rng);
  REQUIRE(testutil::bitwise_equal(seq2img(img2seq(small), 2, 2), small));
}

TEST_CASE("window partition and reverse") {
  Rng rng(10);
  SECTION("degenerate single window") {
    Tensor x = Tensor::randn({1, 3, 7, 7}, rng);
    Tensor t = window_partition(x, 7);
    REQUIRE(t.shape() == Shape{1, 3, 7, 7});
    REQUIRE(testutil::bitwise_equal(t, x));
  }
  SECTION("14x14 with window 7 gives four windows, exact roundtrip") {
    Tensor x = Tensor::randn({2, 4, 14, 14}, rng);
    Tensor t = window_partition(x, 7);
    REQUIRE(t.shape() == Shape{8, 4, 7, 7});
    // index bookkeeping: tile (th, tw) holds x[..., th*7+y, tw*7+x]
    for (int th = 0; th < 2; ++th)
      for (int tw = 0; tw < 2; ++tw)
        for (int y = 0; y < 7; ++y)
          for (int xx = 0; xx < 7; ++xx)
            REQUIRE(t.data()[(((0 * 4 + th * 2 + tw) * 4 + 1) * 7 + y) * 7 + xx] ==
                    x.data()[((0 * 4 + 1) * 14 + th * 7 + y) * 14 + tw * 7 + xx]);
    REQUIRE(testutil::bitwise_equal(window_reverse(t, 7, 2, 14, 14), x));
  }
  SECTION("9x9 with window 7 pads to 14 and masks the pad strip") {
    Tensor x = Tensor::randn({1, 2, 9, 9}, rng);
    Tensor t = window_partition(x, 7);
    REQUIRE(t.shape() == Shape{4, 2, 7, 7});
    WindowGrid g = window_grid(9, 9, 7);
    REQUIRE(g.hp == 14);
    REQUIRE(g.pad_h() == 5);
    Tensor mask = window_valid_mask(g);
    REQUIRE(mask.shape() == Shape{4, 49});
    double valid = 0.0;
    for (double v : mask.values()) valid += v;
    REQUIRE(valid == 81.0);  // every original position is valid exactly once
    // tile 3 covers rows/cols 7..13; only (7..8)x(7..8) is valid
    for (int y = 0; y < 7; ++y)
      for (int xx = 0; xx < 7; ++xx)
        REQUIRE(mask.data()[3 * 49 + y * 7 + xx] == ((y < 2 && xx < 2) ? 1.0 : 0.0));
    REQUIRE(testutil::bitwise_equal(window_reverse(t, 7, 1, 9, 9), x));
    REQUIRE_THROWS_AS(window_partition(x, 0), std::invalid_argument);
  }
  SECTION("gradients flow through partition and reverse") {
    Tensor x = Tensor::randn({1, 2, 5, 5}, rng);
    gradcheck(
        [](std::vector<Tensor>& v) {
          Tensor t = window_partition(v[0], 3);
          Tensor back = window_reverse(t, 3, 1, 5, 5);
          return sum_all(mul(back, t.defined() ? back : back));
        },
        {x.detach()});
  }
}

TEST_CASE("pad_bottom_right") {
  Rng rng(11);
  Tensor x = Tensor::randn({1, 2, 3, 4}, rng);
  Tensor padded = pad_bottom_right(x, 5, 6);
  REQUIRE(padded.shape() == Shape{1, 2, 5, 6});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 5; ++y)
      for (int xx = 0; xx < 6; ++xx) {
        const double v = padded.data()[(c * 5 + y) * 6 + xx];
        if (y < 3 && xx < 4)
          REQUIRE(v == x.data()[(c * 3 + y) * 4 + xx]);
        else
          REQUIRE(v == 0.0);
      }
  REQUIRE(testutil::bitwise_equal(pad_bottom_right(x, 3, 4), x));  // no-op path
  REQUIRE_THROWS_AS(pad_bottom_right(x, 2, 4), std::invalid_argument);
  gradcheck(
      [](std::vector<Tensor>& v) {
        Tensor p = pad_bottom_right(v[0], 4, 5);
        return sum_all(mul(p, p));
      },
      {x.detach()});
}

TEST_CASE("bilinear sampling") {
  Rng rng(12);
  Tensor x = Tensor::randn({1, 3, 5, 6}, rng);
  SECTION("integer coordinates return exact pixels") {
    Tensor loc = Tensor::from({1, 2, 2}, {2, 3, 4, 5});
    Tensor y = bilinear_sample(x, loc);
    REQUIRE(y.shape() == Shape{1, 3, 2});
    for (int c = 0; c < 3; ++c) {
      REQUIRE(y.data()[c * 2 + 0] == x.data()[(c * 5 + 2) * 6 + 3]);
      REQUIRE(y.data()[c * 2 + 1] == x.data()[(c * 5 + 4) * 6 + 5]);
    }
  }
  SECTION("midpoint gives the arithmetic mean of neighbors") {
    Tensor loc = Tensor::from({1, 1, 2}, {1.0, 2.5});
    Tensor y = bilinear_sample(x, loc);
    for (int c = 0; c < 3; ++c) {
      double expect = 0.5 * (x.data()[(c * 5 + 1) * 6 + 2] + x.data()[(c * 5 + 1) * 6 + 3]);
      REQUIRE(std::fabs(y.data()[c] - expect) <= 1e-12);
    }
  }
  SECTION("random fractional grid matches 4-corner oracle") {
    Tensor loc = Tensor::zeros({1, 10, 2});
    for (int l = 0; l < 10; ++l) {
      loc.data()[l * 2 + 0] = rng.uniform(0.0, 4.0);
      loc.data()[l * 2 + 1] = rng.uniform(0.0, 5.0);
    }
    Tensor y = bilinear_sample(x, loc);
    for (int l = 0; l < 10; ++l) {
      const double yy = loc.data()[l * 2], xx = loc.data()[l * 2 + 1];
      const int y0 = static_cast<int>(std::floor(yy)), x0 = static_cast<int>(std::floor(xx));
      const int y1 = std::min(y0 + 1, 4), x1 = std::min(x0 + 1, 5);
      const double wy = yy - y0, wx = xx - x0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int r, int cc) { return x.data()[(c * 5 + r) * 6 + cc]; };
        const double expect = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                              wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        REQUIRE(std::fabs(y.data()[c * 10 + l] - expect) <= 1e-10);
      }
    }
  }
  SECTION("out-of-range coordinates clamp to the border") {
    Tensor loc = Tensor::from({1, 2, 2}, {-3.0, -5.0, 100.0, 100.0});
    Tensor y = bilinear_sample(x, loc);
    for (int c = 0; c < 3; ++c) {
      REQUIRE(y.data()[c * 2 + 0] == x.data()[(c * 5 + 0) * 6 + 0]);
      REQUIRE(y.data()[c * 2 + 1] == x.data()[(c * 5 + 4) * 6 + 5]);
    }
    REQUIRE(testutil::all_finite(y));
  }
  SECTION("gradients w.r.t. input and locations") {
    Tensor xs = Tensor::randn({1, 2, 4, 4}, rng);
    Tensor loc = Tensor::from({1, 3, 2}, {0.3, 1.7, 2.2, 0.6, 1.4, 2.6});
    gradcheck(
        [](std::vector<Tensor>& v) {
          Tensor y = bilinear_sample(v[0], v[1]);
          return sum_all(mul(y, y));
        },
        {xs.detach(), loc.detach()});
  }
}
