#pragma once

#include <cmath>
#include <cstring>
#include <limits>

#include "eatformer/tensor.hpp"

namespace eatformer {

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail("shapes do not broadcast: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `s` aligned to (broadcast against) `out`; 0 on stretched dims.
inline Shape aligned_strides(const Shape& s, const Shape& out) {
  const Shape st = strides_of(s);
  Shape r(out.size(), 0);
  const std::size_t off = out.size() - s.size();
  for (std::size_t i = 0; i < s.size(); ++i)
    r[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : st[i];
  return r;
}

/// Calls f(out_index, offset_a, offset_b) for every element of `out`.
template <class F>
void for_each_pair(const Shape& out, const Shape& stride_a, const Shape& stride_b, F&& f) {
  const std::int64_t n = numel_of(out);
  const std::size_t r = out.size();
  Shape idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (std::size_t d = r; d-- > 0;) {
      idx[d]++;
      oa += stride_a[d];
      ob += stride_b[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      oa -= stride_a[d] * out[d];
      ob -= stride_b[d] * out[d];
    }
  }
}

/// Sum-reduces a gradient over the axes that were broadcast to reach `gshape`.
inline std::vector<double> reduce_to_shape(const std::vector<double>& g, const Shape& gshape,
                                           const Shape& target) {
  if (gshape == target) return g;
  std::vector<double> out(static_cast<std::size_t>(numel_of(target)), 0.0);
  const Shape tstride = aligned_strides(target, gshape);
  const Shape gstride = strides_of(gshape);
  for_each_pair(gshape, gstride, tstride,
                [&](std::int64_t, std::int64_t go, std::int64_t to) { out[to] += g[go]; });
  return out;
}

template <class FwdFn, class DaFn, class DbFn>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdFn fwd, DaFn da, DbFn db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(numel_of(out_shape)));
  const double* pa = a.data();
  const double* pb = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  } else if (b.numel() == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[0]);
  } else if (a.numel() == 1) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[0], pb[i]);
  } else {
    const Shape sa = aligned_strides(a.shape(), out_shape);
    const Shape sb = aligned_strides(b.shape(), out_shape);
    for_each_pair(out_shape, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
      out[i] = fwd(pa[oa], pb[ob]);
    });
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op(out_shape, std::move(out), {a, b}, [an, bn, da, db](Node& self) {
    const Shape& os = self.shape;
    const Shape sa = aligned_strides(an->shape, os);
    const Shape sb = aligned_strides(bn->shape, os);
    auto push = [&](const std::shared_ptr<Node>& n, auto dfn) {
      if (!n->requires_grad) return;
      std::vector<double> g(self.grad.size());
      for_each_pair(os, sa, sb, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
        g[i] = dfn(an->value[oa], bn->value[ob]) * self.grad[i];
      });
      accumulate_grad(*n, reduce_to_shape(g, os, n->shape));
    };
    push(an, da);
    push(bn, db);
  });
}

template <class FwdFn, class GradFn>
Tensor unary_op(const Tensor& x, FwdFn fwd, GradFn dfn) {
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(px[i]);
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, dfn](Node& self) {
    if (!xn->requires_grad) return;
    std::vector<double> g(self.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = dfn(xn->value[i], self.value[i]) * self.grad[i];
    accumulate_grad(*xn, g);
  });
}

inline int normalize_axis(int axis, std::size_t rank, const char* what) {
  int a = axis < 0 ? axis + static_cast<int>(rank) : axis;
  check(a >= 0 && a < static_cast<int>(rank),
        std::string(what) + " axis " + std::to_string(axis) + " out of range for rank " +
            std::to_string(rank));
  return a;
}

// ---- small dense matmul kernels ----------------------------------------

inline void mm_nn(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                  std::int64_t N) {
  for (std::int64_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    for (std::int64_t j = 0; j < N; ++j) c[j] = 0.0;
    const double* a = A + i * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void mm_nt_acc(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                      std::int64_t N) {
  for (std::int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    for (std::int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
      for (std::int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[i * N + j] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void mm_tn_acc(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                      std::int64_t N) {
  for (std::int64_t m = 0; m < M; ++m) {
    const double* a = A + m * K;
    const double* b = B + m * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      double* c = C + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

/// x^p elementwise; callers are responsible for the domain (used on
/// strictly positive inputs such as variance + eps).
inline Tensor pow_scalar(const Tensor& x, double p) {
  return detail::unary_op(
      x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary_op(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- softmax ---------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
  const int a = detail::normalize_axis(axis, x.rank(), "softmax");
  const Shape& s = x.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (std::size_t i = a + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t n = s[a];
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < n; ++k) mx = std::max(mx, px[base + k * inner]);
      double sum = 0.0;
      for (std::int64_t k = 0; k < n; ++k) {
        const double e = std::exp(px[base + k * inner] - mx);
        out[base + k * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::int64_t k = 0; k < n; ++k) out[base + k * inner] *= inv;
    }
  }
  auto xn = x.node();
  return detail::make_op(s, std::move(out), {x}, [xn, outer, inner, n](detail::Node& self) {
    if (!xn->requires_grad) return;
    std::vector<double> g(self.grad.size());
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::int64_t k = 0; k < n; ++k)
          dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::int64_t k = 0; k < n; ++k) {
          const std::int64_t idx = base + k * inner;
          g[idx] = self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
    detail::accumulate_grad(*xn, g);
  });
}

// ---- matmul / linear ---------------------------------------------------------

/// Batched matmul. Leading batch extents must match exactly; a rank-2 operand
/// broadcasts across the other side's batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check(a.rank() >= 2 && b.rank() >= 2,
                "matmul requires rank >= 2, got " + detail::shape_str(a.shape()) + " and " +
                    detail::shape_str(b.shape()));
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::int64_t M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  const std::int64_t Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
  detail::check(K == Kb, "matmul inner extents differ: " + detail::shape_str(sa) + " x " +
                             detail::shape_str(sb));
  Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
  detail::check(batch_a.empty() || batch_b.empty() || batch_a == batch_b,
                "matmul batch extents differ: " + detail::shape_str(sa) + " x " +
                    detail::shape_str(sb));
  const Shape batch = batch_a.empty() ? batch_b : batch_a;
  const std::int64_t nb = detail::numel_of(batch.empty() ? Shape{1} : batch);
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(static_cast<std::size_t>(nb * M * N));
  const bool a_b = !batch_a.empty();
  const bool b_b = !batch_b.empty();
  const double* pa = a.data();
  const double* pb = b.data();
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (nb > 1)
#endif
  for (std::int64_t i = 0; i < nb; ++i) {
    detail::mm_nn(pa + (a_b ? i * M * K : 0), pb + (b_b ? i * K * N : 0), out.data() + i * M * N,
                  M, K, N);
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_op(out_shape, std::move(out), {a, b},
                         [an, bn, M, K, N, nb, a_b, b_b](detail::Node& self) {
                           const double* g = self.grad.data();
                           if (an->requires_grad) {
                             an->ensure_grad();
                             if (a_b || nb == 1) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (nb > 1)
#endif
                               for (std::int64_t i = 0; i < nb; ++i)
                                 detail::mm_nt_acc(g + i * M * N,
                                                   bn->value.data() + (b_b ? i * K * N : 0),
                                                   an->grad.data() + i * M * K, M, N, K);
                             } else {
                               for (std::int64_t i = 0; i < nb; ++i)
                                 detail::mm_nt_acc(g + i * M * N, bn->value.data() + i * K * N,
                                                   an->grad.data(), M, N, K);
                             }
                           }
                           if (bn->requires_grad) {
                             bn->ensure_grad();
                             if (b_b || nb == 1) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(detail::num_threads()) if (nb > 1)
#endif
                               for (std::int64_t i = 0; i < nb; ++i)
                                 detail::mm_tn_acc(an->value.data() + (a_b ? i * M * K : 0),
                                                   g + i * M * N, bn->grad.data() + i * K * N, M,
                                                   K, N);
                             } else {
                               for (std::int64_t i = 0; i < nb; ++i)
                                 detail::mm_tn_acc(an->value.data() + i * M * K, g + i * M * N,
                                                   bn->grad.data(), M, K, N);
                             }
                           }
                         });
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

inline Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

// ---- reductions --------------------------------------------------------------

/// Sum over the given axes. The reduced axes stay as extent-1 dims when
/// keepdims is set, otherwise they are squeezed out (rank >= 1 is kept).
inline Tensor sum_axes(const Tensor& x, std::vector<int> axes, bool keepdims = true) {
  const std::size_t r = x.rank();
  std::vector<bool> reduce(r, false);
  for (int ax : axes) reduce[detail::normalize_axis(ax, r, "sum")] = true;
  Shape kshape = x.shape();
  for (std::size_t i = 0; i < r; ++i)
    if (reduce[i]) kshape[i] = 1;
  Shape out_shape;
  if (keepdims) {
    out_shape = kshape;
  } else {
    for (std::size_t i = 0; i < r; ++i)
      if (!reduce[i]) out_shape.push_back(x.shape()[i]);
    if (out_shape.empty()) out_shape = {1};
  }
  std::vector<double> out(static_cast<std::size_t>(detail::numel_of(kshape)), 0.0);
  const Shape in_strides = detail::strides_of(x.shape());
  const Shape out_strides = detail::aligned_strides(kshape, x.shape());
  const double* px = x.data();
  detail::for_each_pair(x.shape(), in_strides, out_strides,
                        [&](std::int64_t, std::int64_t in, std::int64_t o) { out[o] += px[in]; });
  auto xn = x.node();
  const Shape xshape = x.shape();
  return detail::make_op(out_shape, std::move(out), {x}, [xn, xshape, kshape](detail::Node& self) {
    if (!xn->requires_grad) return;
    std::vector<double> g(xn->value.size());
    const Shape in_strides = detail::strides_of(xshape);
    const Shape out_strides = detail::aligned_strides(kshape, xshape);
    detail::for_each_pair(xshape, in_strides, out_strides,
                          [&](std::int64_t, std::int64_t in, std::int64_t o) {
                            g[in] = self.grad[o];
                          });
    detail::accumulate_grad(*xn, g);
  });
}

inline Tensor mean_axes(const Tensor& x, std::vector<int> axes, bool keepdims = true) {
  std::int64_t n = 1;
  for (int ax : axes) n *= x.shape()[detail::normalize_axis(ax, x.rank(), "mean")];
  return mul_scalar(sum_axes(x, std::move(axes), keepdims), 1.0 / static_cast<double>(n));
}

inline Tensor sum_all(const Tensor& x) {
  std::vector<int> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return sum_axes(x, axes, /*keepdims=*/false);
}

inline Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

// ---- layout ------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  detail::check(detail::numel_of(new_shape) == x.numel(),
                "reshape from " + detail::shape_str(x.shape()) + " to " +
                    detail::shape_str(new_shape) + " changes element count");
  auto xn = x.node();
  return detail::make_op(std::move(new_shape), x.values(), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    detail::accumulate_grad(*xn, self.grad);
  });
}

inline Tensor transpose_last2(const Tensor& x) {
  detail::check(x.rank() >= 2, "transpose needs rank >= 2, got " + detail::shape_str(x.shape()));
  Shape s = x.shape();
  const std::int64_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  std::swap(s[s.size() - 2], s[s.size() - 1]);
  const std::int64_t nb = x.numel() / (rows * cols);
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  const double* px = x.data();
  for (std::int64_t b = 0; b < nb; ++b) {
    const double* src = px + b * rows * cols;
    double* dst = out.data() + b * rows * cols;
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
  auto xn = x.node();
  return detail::make_op(std::move(s), std::move(out), {x},
                         [xn, rows, cols, nb](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           std::vector<double> g(xn->value.size());
                           for (std::int64_t b = 0; b < nb; ++b) {
                             const double* src = self.grad.data() + b * rows * cols;
                             double* dst = g.data() + b * rows * cols;
                             for (std::int64_t j = 0; j < cols; ++j)
                               for (std::int64_t i = 0; i < rows; ++i)
                                 dst[i * cols + j] = src[j * rows + i];
                           }
                           detail::accumulate_grad(*xn, g);
                         });
}

// ---- slicing / concatenation ---------------------------------------------------

inline Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int a = detail::normalize_axis(axis, x.rank(), "narrow");
  const Shape& s = x.shape();
  detail::check(start >= 0 && length >= 1 && start + length <= s[a],
                "narrow range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                    ") out of bounds for extent " + std::to_string(s[a]));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (std::size_t i = a + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[a] = length;
  std::vector<double> out(static_cast<std::size_t>(outer * length * inner));
  const double* px = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * length * inner, px + (o * s[a] + start) * inner,
                sizeof(double) * static_cast<std::size_t>(length * inner));
  auto xn = x.node();
  const std::int64_t extent = s[a];
  return detail::make_op(std::move(out_shape), std::move(out), {x},
                         [xn, outer, inner, start, length, extent](detail::Node& self) {
                           if (!xn->requires_grad) return;
                           xn->ensure_grad();
                           for (std::int64_t o = 0; o < outer; ++o) {
                             const double* g = self.grad.data() + o * length * inner;
                             double* dst = xn->grad.data() + (o * extent + start) * inner;
                             for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += g[i];
                           }
                         });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  detail::check(!parts.empty(), "concat needs at least one input");
  const int a = detail::normalize_axis(axis, parts[0].rank(), "concat");
  const Shape& s0 = parts[0].shape();
  std::int64_t total_axis = 0;
  for (const auto& p : parts) {
    detail::check(p.rank() == parts[0].rank(), "concat rank mismatch");
    for (std::size_t i = 0; i < s0.size(); ++i)
      detail::check(static_cast<int>(i) == a || p.shape()[i] == s0[i],
                    "concat shape mismatch: " + detail::shape_str(p.shape()) + " vs " +
                        detail::shape_str(s0));
    total_axis += p.shape()[a];
  }
  Shape out_shape = s0;
  out_shape[a] = total_axis;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s0[i];
  for (std::size_t i = a + 1; i < s0.size(); ++i) inner *= s0[i];
  std::vector<double> out(static_cast<std::size_t>(outer * total_axis * inner));
  std::vector<std::int64_t> extents;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t len = p.shape()[a];
    extents.push_back(len);
    const double* src = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * total_axis + off) * inner, src + o * len * inner,
                  sizeof(double) * static_cast<std::size_t>(len * inner));
    off += len;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_op(std::move(out_shape), std::move(out), parts,
                         [nodes, extents, outer, inner, total_axis](detail::Node& self) {
                           std::int64_t off = 0;
                           for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                             const std::int64_t len = extents[pi];
                             if (nodes[pi]->requires_grad) {
                               nodes[pi]->ensure_grad();
                               for (std::int64_t o = 0; o < outer; ++o) {
                                 const double* g =
                                     self.grad.data() + (o * total_axis + off) * inner;
                                 double* dst = nodes[pi]->grad.data() + o * len * inner;
                                 for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                               }
                             }
                             off += len;
                           }
                         });
}

// ---- loss ----------------------------------------------------------------------

/// Mean cross-entropy over a batch of logits [B, K] and integer labels.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  detail::check(logits.rank() == 2, "cross_entropy expects [batch, classes] logits, got " +
                                        detail::shape_str(logits.shape()));
  const std::int64_t B = logits.dim(0), K = logits.dim(1);
  detail::check(static_cast<std::int64_t>(labels.size()) == B,
                "label count " + std::to_string(labels.size()) + " does not match batch " +
                    std::to_string(B));
  for (auto l : labels)
    detail::check(l >= 0 && l < K, "label " + std::to_string(l) + " out of range [0, " +
                                       std::to_string(K) + ")");
  const double* p = logits.data();
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b) {
    const double* row = p + b * K;
    double mx = row[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (std::int64_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
    loss += mx + std::log(sum) - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  auto ln = logits.node();
  return detail::make_op(Shape{1}, {loss}, {logits}, [ln, labels, B, K](detail::Node& self) {
    if (!ln->requires_grad) return;
    const double g0 = self.grad[0] / static_cast<double>(B);
    std::vector<double> g(ln->value.size());
    for (std::int64_t b = 0; b < B; ++b) {
      const double* row = ln->value.data() + b * K;
      double mx = row[0];
      for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      double sum = 0.0;
      for (std::int64_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
      for (std::int64_t k = 0; k < K; ++k) {
        double sm = std::exp(row[k] - mx) / sum;
        g[b * K + k] = (sm - (k == labels[b] ? 1.0 : 0.0)) * g0;
      }
    }
    detail::accumulate_grad(*ln, g);
  });
}

}  // namespace eatformer
