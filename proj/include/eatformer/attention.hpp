#pragma once

#include "eatformer/image.hpp"
#include "eatformer/params.hpp"

namespace eatformer {

/// Multi-head self-attention parameters. Per-head projections are d_m x d_k
/// with d_q == d_k == d_v; the output projection maps heads*d_v back to d_m.
struct MsaParams {
  std::int64_t model_dim = 0;
  std::int64_t heads = 0;
  std::int64_t head_dim = 0;
  std::vector<Tensor> w_q, b_q, w_k, b_k, w_v, b_v;
  Tensor w_o, b_o;

  static MsaParams make(std::int64_t model_dim, std::int64_t heads, Rng& rng) {
    detail::check(heads >= 1 && model_dim % heads == 0,
                  "attention model_dim " + std::to_string(model_dim) +
                      " must be divisible by heads " + std::to_string(heads));
    MsaParams p;
    p.model_dim = model_dim;
    p.heads = heads;
    p.head_dim = model_dim / heads;
    const double std_qkv = std::sqrt(1.0 / static_cast<double>(model_dim));
    for (std::int64_t h = 0; h < heads; ++h) {
      p.w_q.push_back(Tensor::randn({model_dim, p.head_dim}, rng, 0.0, std_qkv)
                          .set_requires_grad(true));
      p.b_q.push_back(Tensor::zeros({p.head_dim}).set_requires_grad(true));
      p.w_k.push_back(Tensor::randn({model_dim, p.head_dim}, rng, 0.0, std_qkv)
                          .set_requires_grad(true));
      p.b_k.push_back(Tensor::zeros({p.head_dim}).set_requires_grad(true));
      p.w_v.push_back(Tensor::randn({model_dim, p.head_dim}, rng, 0.0, std_qkv)
                          .set_requires_grad(true));
      p.b_v.push_back(Tensor::zeros({p.head_dim}).set_requires_grad(true));
    }
    p.w_o = Tensor::randn({model_dim, model_dim}, rng, 0.0, std_qkv).set_requires_grad(true);
    p.b_o = Tensor::zeros({model_dim}).set_requires_grad(true);
    return p;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::int64_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      add_param(out, hp + ".w_q", w_q[h]);
      add_param(out, hp + ".b_q", b_q[h]);
      add_param(out, hp + ".w_k", w_k[h]);
      add_param(out, hp + ".b_k", b_k[h]);
      add_param(out, hp + ".w_v", w_v[h]);
      add_param(out, hp + ".b_v", b_v[h]);
    }
    add_param(out, prefix + ".w_o", w_o);
    add_param(out, prefix + ".b_o", b_o);
  }
};

namespace detail {

constexpr double kMaskedLogit = -1e300;  // finite stand-in for -inf

/// Scaled dot-product attention with queries from q_src and keys/values from
/// kv_src. mask, when defined, is [B, L] with 1 on valid key positions;
/// masked keys receive a -1e300 logit and end up with exactly zero weight.
inline Tensor attention_core(const Tensor& q_src, const Tensor& kv_src, const MsaParams& p,
                             const Tensor& mask = Tensor(),
                             const std::vector<Tensor>* precomputed_q = nullptr) {
  check(q_src.rank() == 3 && kv_src.rank() == 3,
        "attention expects [B, L, C] sequences, got " + shape_str(q_src.shape()) + " and " +
            shape_str(kv_src.shape()));
  check(q_src.dim(2) == p.model_dim && kv_src.dim(2) == p.model_dim,
        "attention built for dim " + std::to_string(p.model_dim) + ", got inputs " +
            shape_str(q_src.shape()) + " / " + shape_str(kv_src.shape()));
  const std::int64_t B = q_src.dim(0), L = kv_src.dim(1);
  Tensor key_bias;
  if (mask.defined()) {
    check(mask.rank() == 2 && mask.dim(0) == B && mask.dim(1) == L,
          "mask must be [B, L], got " + shape_str(mask.shape()));
    std::vector<double> bias(static_cast<std::size_t>(B * L));
    for (std::int64_t i = 0; i < B * L; ++i)
      bias[i] = mask.data()[i] > 0.5 ? 0.0 : kMaskedLogit;
    key_bias = reshape(Tensor::from({B, L}, std::move(bias)), {B, 1, L});
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.head_dim));
  std::vector<Tensor> head_outs;
  for (std::int64_t h = 0; h < p.heads; ++h) {
    Tensor q = precomputed_q ? (*precomputed_q)[h] : linear(q_src, p.w_q[h], p.b_q[h]);
    Tensor k = linear(kv_src, p.w_k[h], p.b_k[h]);
    Tensor v = linear(kv_src, p.w_v[h], p.b_v[h]);
    Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), scale);
    if (key_bias.defined()) scores = add(scores, key_bias);
    Tensor attn = softmax(scores, -1);
    head_outs.push_back(matmul(attn, v));
  }
  Tensor merged = head_outs.size() == 1 ? head_outs[0] : concat(head_outs, -1);
  return linear(merged, p.w_o, p.b_o);
}

}  // namespace detail

/// Self-attention over a [B, L, C] sequence (optionally masked).
inline Tensor msa_forward(const Tensor& x, const MsaParams& p, const Tensor& mask = Tensor()) {
  return detail::attention_core(x, x, p, mask);
}

/// Cross-attention: queries from q_tokens only, keys/values from kv only.
inline Tensor cross_attention(const Tensor& q_tokens, const Tensor& kv, const MsaParams& p) {
  detail::check(q_tokens.dim(1) >= 1, "cross_attention needs at least one query token");
  return detail::attention_core(q_tokens, kv, p);
}

/// Re-evaluates self-attention through the per-token summation form: each
/// output is the sum over tokens l of x_l applied to its attention-scaled
/// value map (A_{i,l} * W_v). Raw-loop evaluation, independent of the graph
/// path; returns the max abs deviation from msa_forward.
inline double msa_sum_form_check(const Tensor& x, const MsaParams& p) {
  const Tensor reference = msa_forward(x, p);
  const std::int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
  const std::int64_t H = p.heads, dk = p.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> merged(static_cast<std::size_t>(B * L * C), 0.0);
  std::vector<double> q(L * dk), k(L * dk), attn(L * L), wscaled(C * dk);
  for (std::int64_t b = 0; b < B; ++b) {
    const double* xb = x.data() + b * L * C;
    for (std::int64_t h = 0; h < H; ++h) {
      auto project = [&](const Tensor& w, const Tensor& bias, std::vector<double>& out) {
        for (std::int64_t i = 0; i < L; ++i)
          for (std::int64_t d = 0; d < dk; ++d) {
            double acc = bias.data()[d];
            for (std::int64_t c = 0; c < C; ++c) acc += xb[i * C + c] * w.data()[c * dk + d];
            out[i * dk + d] = acc;
          }
      };
      project(p.w_q[h], p.b_q[h], q);
      project(p.w_k[h], p.b_k[h], k);
      for (std::int64_t i = 0; i < L; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < L; ++j) {
          double s = 0.0;
          for (std::int64_t d = 0; d < dk; ++d) s += q[i * dk + d] * k[j * dk + d];
          attn[i * L + j] = s * scale;
          mx = std::max(mx, attn[i * L + j]);
        }
        double sum = 0.0;
        for (std::int64_t j = 0; j < L; ++j) {
          attn[i * L + j] = std::exp(attn[i * L + j] - mx);
          sum += attn[i * L + j];
        }
        for (std::int64_t j = 0; j < L; ++j) attn[i * L + j] /= sum;
      }
      for (std::int64_t i = 0; i < L; ++i) {
        double* dst = merged.data() + (b * L + i) * C + h * dk;
        for (std::int64_t l = 0; l < L; ++l) {
          const double a = attn[i * L + l];
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t d = 0; d < dk; ++d)
              wscaled[c * dk + d] = a * p.w_v[h].data()[c * dk + d];
          for (std::int64_t d = 0; d < dk; ++d) {
            double acc = 0.0;
            for (std::int64_t c = 0; c < C; ++c) acc += xb[l * C + c] * wscaled[c * dk + d];
            dst[d] += acc + a * p.b_v[h].data()[d];
          }
        }
      }
    }
  }
  double max_dev = 0.0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < L; ++i)
      for (std::int64_t c = 0; c < C; ++c) {
        double acc = p.b_o.data()[c];
        for (std::int64_t e = 0; e < C; ++e)
          acc += merged[(b * L + i) * C + e] * p.w_o.data()[e * C + c];
        max_dev =
            std::max(max_dev, std::fabs(acc - reference.data()[(b * L + i) * C + c]));
      }
  return max_dev;
}

/// Modulated deformable attention parameters: the base attention plus a
/// zero-initialized linear map from the concatenated queries to
/// (dy, dx, modulation logit) per position.
struct MdMsaParams {
  enum class Modulation { sigmoid, bypass };

  MsaParams base;
  Tensor w_md, b_md;
  Modulation mode = Modulation::sigmoid;

  static MdMsaParams make(std::int64_t model_dim, std::int64_t heads, Rng& rng,
                          Modulation mode = Modulation::sigmoid, bool with_offsets = true) {
    MdMsaParams p;
    p.base = MsaParams::make(model_dim, heads, rng);
    if (with_offsets) {
      p.w_md = Tensor::zeros({model_dim, 3}).set_requires_grad(true);
      p.b_md = Tensor::zeros({3}).set_requires_grad(true);
    }
    p.mode = mode;
    return p;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    base.collect(prefix, out);
    if (w_md.defined()) {
      add_param(out, prefix + ".w_md", w_md);
      add_param(out, prefix + ".b_md", b_md);
    }
  }
};

namespace detail {

inline Tensor position_grid(std::int64_t B, std::int64_t H, std::int64_t W) {
  std::vector<double> g(static_cast<std::size_t>(B * H * W * 2));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        g[((b * H + y) * W + x) * 2 + 0] = static_cast<double>(y);
        g[((b * H + y) * W + x) * 2 + 1] = static_cast<double>(x);
      }
  return Tensor::from({B, H * W, 2}, std::move(g));
}

struct DeformResult {
  Tensor kv_map;                  // [B, C, H, W): offset-resampled, modulated features
  std::vector<Tensor> queries;    // per-head [B, L, dk] from the original map
};

/// Query-conditioned resampling: offsets and modulation are predicted from
/// the concatenated queries; features are bilinearly gathered at
/// position + offset over the full map and scaled by the modulation.
inline DeformResult deform_features(const Tensor& x, const MdMsaParams& p) {
  check(p.w_md.defined(), "deformable attention requested but the offset net is absent");
  const std::int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  DeformResult r;
  Tensor seq = img2seq(x);
  for (std::int64_t h = 0; h < p.base.heads; ++h)
    r.queries.push_back(linear(seq, p.base.w_q[h], p.base.b_q[h]));
  Tensor qcat = r.queries.size() == 1 ? r.queries[0] : concat(r.queries, -1);
  Tensor md = linear(qcat, p.w_md, p.b_md);  // [B, L, 3]
  Tensor offsets = narrow(md, 2, 0, 2);
  Tensor locations = add(position_grid(B, H, W), offsets);
  Tensor sampled = transpose_last2(bilinear_sample(x, locations));  // [B, L, C]
  if (p.mode == MdMsaParams::Modulation::sigmoid) {
    Tensor modulation = sigmoid(narrow(md, 2, 2, 1));  // [B, L, 1] in [0, 1]
    sampled = mul(sampled, modulation);
  }
  r.kv_map = seq2img(sampled, H, W);
  return r;
}

}  // namespace detail

/// Global modulated deformable attention over a feature map.
inline Tensor md_msa_forward(const Tensor& x, const MdMsaParams& p) {
  detail::check(x.rank() == 4, "md_msa_forward expects [B, C, H, W], got " +
                                   detail::shape_str(x.shape()));
  const std::int64_t H = x.dim(2), W = x.dim(3);
  detail::DeformResult d = detail::deform_features(x, p);
  Tensor out = detail::attention_core(img2seq(x), img2seq(d.kv_map), p.base, Tensor(),
                                      &d.queries);
  return seq2img(out, H, W);
}

namespace detail {

inline Tensor repeat_mask_rows(const Tensor& mask, std::int64_t B) {
  const std::int64_t nt = mask.dim(0), L = mask.dim(1);
  std::vector<double> m(static_cast<std::size_t>(B * nt * L));
  for (std::int64_t b = 0; b < B; ++b)
    std::copy(mask.data(), mask.data() + nt * L, m.data() + b * nt * L);
  return Tensor::from({B * nt, L}, std::move(m));
}

}  // namespace detail

/// Window-partitioned (deformable) attention over a feature map. Deformable
/// sampling happens on the full pre-partition map; attention then runs per
/// window with zero-padded positions masked out of the keys. A window at
/// least as large as the map degenerates to global attention.
inline Tensor windowed_attention(const Tensor& x, const MdMsaParams& p, std::int64_t window,
                                 bool deformable) {
  detail::check(x.rank() == 4, "windowed_attention expects [B, C, H, W], got " +
                                   detail::shape_str(x.shape()));
  detail::check(window >= 1, "window must be >= 1, got " + std::to_string(window));
  const std::int64_t B = x.dim(0), H = x.dim(2), W = x.dim(3);
  if (window >= H && window >= W) {
    if (deformable) return md_msa_forward(x, p);
    return seq2img(msa_forward(img2seq(x), p.base), H, W);
  }
  Tensor kv_map = x;
  if (deformable) kv_map = detail::deform_features(x, p).kv_map;
  const WindowGrid grid = window_grid(H, W, window);
  Tensor q_tiles = img2seq(window_partition(x, window));
  Tensor kv_tiles = img2seq(window_partition(kv_map, window));
  Tensor mask;
  if (grid.pad_h() > 0 || grid.pad_w() > 0)
    mask = detail::repeat_mask_rows(window_valid_mask(grid), B);
  Tensor out = detail::attention_core(q_tiles, kv_tiles, p.base, mask);
  return window_reverse(seq2img(out, window, window), window, B, H, W);
}

}  // namespace eatformer
