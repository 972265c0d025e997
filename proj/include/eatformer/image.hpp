#pragma once

#include "eatformer/ops.hpp"

namespace eatformer {

// ---- sequence <-> image layout ---------------------------------------------

/// [B, C, H, W] -> [B, H*W, C] with position index y*W + x.
inline Tensor img2seq(const Tensor& x) {
  detail::check(x.rank() == 4, "img2seq expects [B, C, H, W], got " +
                                   detail::shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  return transpose_last2(reshape(x, {B, C, H * W}));
}

/// [B, L, C] -> [B, C, H, W]; requires L == H*W.
inline Tensor seq2img(const Tensor& x, std::int64_t H, std::int64_t W) {
  detail::check(x.rank() == 3, "seq2img expects [B, L, C], got " + detail::shape_str(x.shape()));
  detail::check(x.dim(1) == H * W, "sequence length " + std::to_string(x.dim(1)) +
                                       " does not factor into " + std::to_string(H) + "x" +
                                       std::to_string(W));
  return reshape(transpose_last2(x), {x.dim(0), x.dim(2), H, W});
}

// ---- convolution ------------------------------------------------------------

struct ConvOpts {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

inline std::int64_t conv_out_extent(std::int64_t in, int k, const ConvOpts& o) {
  return (in + 2 * o.padding - static_cast<std::int64_t>(o.dilation) * (k - 1) - 1) / o.stride + 1;
}

/// Direct 2-D convolution. x: [B, Cin, H, W], w: [Cout, Cin/G, k, k],
/// optional bias [Cout]. Groups == Cin gives depthwise semantics.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvOpts opts) {
  detail::check(x.rank() == 4, "conv2d input must be [B, C, H, W], got " +
                                   detail::shape_str(x.shape()));
  detail::check(w.rank() == 4 && w.dim(2) == w.dim(3),
                "conv2d weight must be [Cout, Cin/G, k, k], got " + detail::shape_str(w.shape()));
  detail::check(opts.stride >= 1 && opts.dilation >= 1 && opts.padding >= 0 && opts.groups >= 1,
                "conv2d options must satisfy stride,dilation >= 1, padding >= 0, groups >= 1");
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), k = w.dim(2);
  const std::int64_t G = opts.groups;
  detail::check(Cin % G == 0 && Cout % G == 0,
                "channels not divisible by groups: Cin=" + std::to_string(Cin) + " Cout=" +
                    std::to_string(Cout) + " groups=" + std::to_string(G));
  detail::check(w.dim(1) == Cin / G, "conv2d weight shape " + detail::shape_str(w.shape()) +
                                         " does not match input channels " + std::to_string(Cin) +
                                         " with groups " + std::to_string(G));
  if (bias.defined())
    detail::check(bias.rank() == 1 && bias.dim(0) == Cout,
                  "conv2d bias must be [Cout], got " + detail::shape_str(bias.shape()));
  const std::int64_t OH = conv_out_extent(H, static_cast<int>(k), opts);
  const std::int64_t OW = conv_out_extent(W, static_cast<int>(k), opts);
  detail::check(OH >= 1 && OW >= 1, "conv2d output would be empty for input " +
                                        detail::shape_str(x.shape()) + " with kernel " +
                                        std::to_string(k) + ", stride " +
                                        std::to_string(opts.stride) + ", dilation " +
                                        std::to_string(opts.dilation) + ", padding " +
                                        std::to_string(opts.padding));
  const std::int64_t CinG = Cin / G, CoutG = Cout / G;
  std::vector<double> out(static_cast<std::size_t>(B * Cout * OH * OW), 0.0);
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = bias.defined() ? bias.data() : nullptr;
  const int s = opts.stride, p = opts.padding, d = opts.dilation;
  const std::int64_t jobs = B * Cout;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (jobs > 1)
#endif
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::int64_t b = job / Cout, co = job % Cout;
    const std::int64_t g = co / CoutG;
    const double* wbase = pw + co * CinG * k * k;
    double* obase = out.data() + (b * Cout + co) * OH * OW;
    for (std::int64_t oy = 0; oy < OH; ++oy) {
      for (std::int64_t ox = 0; ox < OW; ++ox) {
        double acc = pb ? pb[co] : 0.0;
        for (std::int64_t ci = 0; ci < CinG; ++ci) {
          const double* xc = px + (b * Cin + g * CinG + ci) * H * W;
          const double* wc = wbase + ci * k * k;
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const std::int64_t iy = oy * s - p + ky * d;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t ix = ox * s - p + kx * d;
              if (ix < 0 || ix >= W) continue;
              acc += xc[iy * W + ix] * wc[ky * k + kx];
            }
          }
        }
        obase[oy * OW + ox] = acc;
      }
    }
  }
  auto xn = x.node();
  auto wn = w.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_op(
      {B, Cout, OH, OW}, std::move(out), std::move(inputs),
      [=](detail::Node& self) {
        const double* g = self.grad.data();
        if (xn->requires_grad) {
          xn->ensure_grad();
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (B > 1)
#endif
          for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t co = 0; co < Cout; ++co) {
              const std::int64_t gr = co / CoutG;
              const double* wbase = wn->value.data() + co * CinG * k * k;
              const double* gbase = g + (b * Cout + co) * OH * OW;
              for (std::int64_t oy = 0; oy < OH; ++oy) {
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                  const double gv = gbase[oy * OW + ox];
                  for (std::int64_t ci = 0; ci < CinG; ++ci) {
                    double* xc = xn->grad.data() + (b * Cin + gr * CinG + ci) * H * W;
                    const double* wc = wbase + ci * k * k;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                      const std::int64_t iy = oy * s - p + ky * d;
                      if (iy < 0 || iy >= H) continue;
                      for (std::int64_t kx = 0; kx < k; ++kx) {
                        const std::int64_t ix = ox * s - p + kx * d;
                        if (ix < 0 || ix >= W) continue;
                        xc[iy * W + ix] += wc[ky * k + kx] * gv;
                      }
                    }
                  }
                }
              }
            }
          }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (Cout > 1)
#endif
          for (std::int64_t co = 0; co < Cout; ++co) {
            const std::int64_t gr = co / CoutG;
            double* wg = wn->grad.data() + co * CinG * k * k;
            for (std::int64_t b = 0; b < B; ++b) {
              const double* gbase = g + (b * Cout + co) * OH * OW;
              for (std::int64_t oy = 0; oy < OH; ++oy) {
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                  const double gv = gbase[oy * OW + ox];
                  for (std::int64_t ci = 0; ci < CinG; ++ci) {
                    const double* xc = xn->value.data() + (b * Cin + gr * CinG + ci) * H * W;
                    double* wc = wg + ci * k * k;
                    for (std::int64_t ky = 0; ky < k; ++ky) {
                      const std::int64_t iy = oy * s - p + ky * d;
                      if (iy < 0 || iy >= H) continue;
                      for (std::int64_t kx = 0; kx < k; ++kx) {
                        const std::int64_t ix = ox * s - p + kx * d;
                        if (ix < 0 || ix >= W) continue;
                        wc[ky * k + kx] += xc[iy * W + ix] * gv;
                      }
                    }
                  }
                }
              }
            }
          }
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const double* gbase = g + (b * Cout + co) * OH * OW;
              double acc = 0.0;
              for (std::int64_t i = 0; i < OH * OW; ++i) acc += gbase[i];
              bn->grad[co] += acc;
            }
        }
      });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, ConvOpts opts) {
  return conv2d(x, w, Tensor(), opts);
}

// ---- bilinear sampling ---------------------------------------------------------

/// Corner-aligned bilinear interpolation of x [B, C, H, W] at continuous
/// pixel coordinates locations [B, L, 2] ((y, x) order). Coordinates clamp
/// to the border; result is [B, C, L]. Differentiable in x and locations
/// (zero slope where a coordinate is clamped).
inline Tensor bilinear_sample(const Tensor& x, const Tensor& locations) {
  detail::check(x.rank() == 4, "bilinear_sample expects [B, C, H, W] input, got " +
                                   detail::shape_str(x.shape()));
  detail::check(locations.rank() == 3 && locations.dim(2) == 2,
                "locations must be [B, L, 2], got " + detail::shape_str(locations.shape()));
  detail::check(locations.dim(0) == x.dim(0), "batch mismatch between input " +
                                                  detail::shape_str(x.shape()) +
                                                  " and locations " +
                                                  detail::shape_str(locations.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t L = locations.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B * C * L));
  const double* px = x.data();
  const double* pl = locations.data();
  auto clampd = [](double v, double hi) { return v < 0.0 ? 0.0 : (v > hi ? hi : v); };
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t l = 0; l < L; ++l) {
      const double y = clampd(pl[(b * L + l) * 2 + 0], static_cast<double>(H - 1));
      const double xx = clampd(pl[(b * L + l) * 2 + 1], static_cast<double>(W - 1));
      const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(xx));
      const std::int64_t y1 = std::min(y0 + 1, H - 1);
      const std::int64_t x1 = std::min(x0 + 1, W - 1);
      const double wy = y - static_cast<double>(y0);
      const double wx = xx - static_cast<double>(x0);
      for (std::int64_t c = 0; c < C; ++c) {
        const double* xc = px + (b * C + c) * H * W;
        const double v00 = xc[y0 * W + x0], v01 = xc[y0 * W + x1];
        const double v10 = xc[y1 * W + x0], v11 = xc[y1 * W + x1];
        out[(b * C + c) * L + l] = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) +
                                   wy * ((1.0 - wx) * v10 + wx * v11);
      }
    }
  }
  auto xn = x.node();
  auto ln = locations.node();
  return detail::make_op({B, C, L}, std::move(out), {x, locations}, [=](detail::Node& self) {
    const double* g = self.grad.data();
    const double* pl = ln->value.data();
    if (xn->requires_grad) xn->ensure_grad();
    if (ln->requires_grad) ln->ensure_grad();
    auto clampd = [](double v, double hi) { return v < 0.0 ? 0.0 : (v > hi ? hi : v); };
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t l = 0; l < L; ++l) {
        const double ry = pl[(b * L + l) * 2 + 0];
        const double rx = pl[(b * L + l) * 2 + 1];
        const double y = clampd(ry, static_cast<double>(H - 1));
        const double xx = clampd(rx, static_cast<double>(W - 1));
        const bool clamped_y = ry != y;
        const bool clamped_x = rx != xx;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(xx));
        const std::int64_t y1 = std::min(y0 + 1, H - 1);
        const std::int64_t x1 = std::min(x0 + 1, W - 1);
        const double wy = y - static_cast<double>(y0);
        const double wx = xx - static_cast<double>(x0);
        double dy = 0.0, dx = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          const double gv = g[(b * C + c) * L + l];
          if (xn->requires_grad) {
            double* xg = xn->grad.data() + (b * C + c) * H * W;
            xg[y0 * W + x0] += (1.0 - wy) * (1.0 - wx) * gv;
            xg[y0 * W + x1] += (1.0 - wy) * wx * gv;
            xg[y1 * W + x0] += wy * (1.0 - wx) * gv;
            xg[y1 * W + x1] += wy * wx * gv;
          }
          if (ln->requires_grad) {
            const double* xc = xn->value.data() + (b * C + c) * H * W;
            const double v00 = xc[y0 * W + x0], v01 = xc[y0 * W + x1];
            const double v10 = xc[y1 * W + x0], v11 = xc[y1 * W + x1];
            dy += ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01)) * gv;
            dx += ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10)) * gv;
          }
        }
        if (ln->requires_grad) {
          if (!clamped_y) ln->grad[(b * L + l) * 2 + 0] += dy;
          if (!clamped_x) ln->grad[(b * L + l) * 2 + 1] += dx;
        }
      }
    }
  });
}

/// Zero-pads the bottom/right of a [B, C, H, W] map to the target extents.
inline Tensor pad_bottom_right(const Tensor& x, std::int64_t target_h, std::int64_t target_w) {
  detail::check(x.rank() == 4, "pad expects [B, C, H, W], got " + detail::shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check(target_h >= H && target_w >= W, "pad target smaller than input");
  if (target_h == H && target_w == W) return x;
  std::vector<double> out(static_cast<std::size_t>(B * C * target_h * target_w), 0.0);
  const double* px = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc)
    for (std::int64_t y = 0; y < H; ++y)
      std::memcpy(out.data() + (bc * target_h + y) * target_w, px + (bc * H + y) * W,
                  sizeof(double) * static_cast<std::size_t>(W));
  auto xn = x.node();
  return detail::make_op({B, C, target_h, target_w}, std::move(out), {x},
                         [xn, B, C, H, W, target_h, target_w](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (std::int64_t bc = 0; bc < B * C; ++bc)
                             for (std::int64_t y = 0; y < H; ++y)
                               for (std::int64_t x2 = 0; x2 < W; ++x2)
                                 xn->grad[(bc * H + y) * W + x2] +=
                                     self.grad[(bc * target_h + y) * target_w + x2];
                         });
}

// ---- window partition / reverse ---------------------------------------------------

struct WindowGrid {
  std::int64_t win = 0;
  std::int64_t h = 0, w = 0;    // original extents
  std::int64_t hp = 0, wp = 0;  // padded extents
  std::int64_t nh = 0, nw = 0;  // tile counts
  std::int64_t pad_h() const { return hp - h; }
  std::int64_t pad_w() const { return wp - w; }
  std::int64_t tiles() const { return nh * nw; }
};

inline WindowGrid window_grid(std::int64_t H, std::int64_t W, std::int64_t win) {
  detail::check(win >= 1, "window size must be >= 1, got " + std::to_string(win));
  WindowGrid g;
  g.win = win;
  g.h = H;
  g.w = W;
  g.nh = (H + win - 1) / win;
  g.nw = (W + win - 1) / win;
  g.hp = g.nh * win;
  g.wp = g.nw * win;
  return g;
}

/// Splits [B, C, H, W] into window tiles [B*nh*nw, C, win, win], zero-padding
/// bottom/right when H or W is not divisible by the window size.
inline Tensor window_partition(const Tensor& x, std::int64_t win) {
  detail::check(x.rank() == 4, "window_partition expects [B, C, H, W], got " +
                                   detail::shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const WindowGrid grid = window_grid(H, W, win);
  const std::int64_t nt = grid.tiles();
  std::vector<double> out(static_cast<std::size_t>(B * nt * C * win * win), 0.0);
  const double* px = x.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < nt; ++t) {
      const std::int64_t ty = (t / grid.nw) * win, tx = (t % grid.nw) * win;
      for (std::int64_t c = 0; c < C; ++c) {
        const double* src = px + (b * C + c) * H * W;
        double* dst = out.data() + ((b * nt + t) * C + c) * win * win;
        for (std::int64_t y = 0; y < win && ty + y < H; ++y)
          for (std::int64_t xk = 0; xk < win && tx + xk < W; ++xk)
            dst[y * win + xk] = src[(ty + y) * W + tx + xk];
      }
    }
  auto xn = x.node();
  return detail::make_op({B * nt, C, win, win}, std::move(out), {x},
                         [xn, B, C, H, W, grid, nt, win](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (std::int64_t b = 0; b < B; ++b)
                             for (std::int64_t t = 0; t < nt; ++t) {
                               const std::int64_t ty = (t / grid.nw) * win;
                               const std::int64_t tx = (t % grid.nw) * win;
                               for (std::int64_t c = 0; c < C; ++c) {
                                 const double* g =
                                     self.grad.data() + ((b * nt + t) * C + c) * win * win;
                                 double* dst = xn->grad.data() + (b * C + c) * H * W;
                                 for (std::int64_t y = 0; y < win && ty + y < H; ++y)
                                   for (std::int64_t xk = 0; xk < win && tx + xk < W; ++xk)
                                     dst[(ty + y) * W + tx + xk] += g[y * win + xk];
                               }
                             }
                         });
}

/// Inverse of window_partition: reassembles tiles and crops away the padding.
inline Tensor window_reverse(const Tensor& tiles, std::int64_t win, std::int64_t B,
                             std::int64_t H, std::int64_t W) {
  detail::check(tiles.rank() == 4 && tiles.dim(2) == win && tiles.dim(3) == win,
                "window_reverse expects [B*nt, C, win, win], got " +
                    detail::shape_str(tiles.shape()));
  const WindowGrid grid = window_grid(H, W, win);
  const std::int64_t nt = grid.tiles();
  detail::check(tiles.dim(0) == B * nt, "tile batch " + std::to_string(tiles.dim(0)) +
                                            " does not match " + std::to_string(B) + "x" +
                                            std::to_string(nt) + " windows");
  const std::int64_t C = tiles.dim(1);
  std::vector<double> out(static_cast<std::size_t>(B * C * H * W), 0.0);
  const double* pt = tiles.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t t = 0; t < nt; ++t) {
      const std::int64_t ty = (t / grid.nw) * win, tx = (t % grid.nw) * win;
      for (std::int64_t c = 0; c < C; ++c) {
        const double* src = pt + ((b * nt + t) * C + c) * win * win;
        double* dst = out.data() + (b * C + c) * H * W;
        for (std::int64_t y = 0; y < win && ty + y < H; ++y)
          for (std::int64_t xk = 0; xk < win && tx + xk < W; ++xk)
            dst[(ty + y) * W + tx + xk] = src[y * win + xk];
      }
    }
  auto tn = tiles.node();
  return detail::make_op({B, C, H, W}, std::move(out), {tiles},
                         [tn, B, C, H, W, grid, nt, win](detail::Node& self) {
                           if (!tn->requires_grad) return;
                           tn->ensure_grad();
                           for (std::int64_t b = 0; b < B; ++b)
                             for (std::int64_t t = 0; t < nt; ++t) {
                               const std::int64_t ty = (t / grid.nw) * win;
                               const std::int64_t tx = (t % grid.nw) * win;
                               for (std::int64_t c = 0; c < C; ++c) {
                                 double* dst = tn->grad.data() + ((b * nt + t) * C + c) * win * win;
                                 const double* g = self.grad.data() + (b * C + c) * H * W;
                                 for (std::int64_t y = 0; y < win && ty + y < H; ++y)
                                   for (std::int64_t xk = 0; xk < win && tx + xk < W; ++xk)
                                     dst[y * win + xk] += g[(ty + y) * W + tx + xk];
                               }
                             }
                         });
}

/// Validity mask over window positions: [nt, win*win] with 1 for positions
/// inside the original map and 0 on the zero-padded strip.
inline Tensor window_valid_mask(const WindowGrid& grid) {
  const std::int64_t nt = grid.tiles(), win = grid.win;
  std::vector<double> m(static_cast<std::size_t>(nt * win * win), 0.0);
  for (std::int64_t t = 0; t < nt; ++t) {
    const std::int64_t ty = (t / grid.nw) * win, tx = (t % grid.nw) * win;
    for (std::int64_t y = 0; y < win; ++y)
      for (std::int64_t x = 0; x < win; ++x)
        if (ty + y < grid.h && tx + x < grid.w) m[(t * win + y) * win + x] = 1.0;
  }
  return Tensor::from({nt, win * win}, std::move(m));
}

}  // namespace eatformer
