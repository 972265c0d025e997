#pragma once

#include "eatformer/ops.hpp"
#include "eatformer/params.hpp"

namespace eatformer {

enum class NormKind { batchnorm, layernorm };

inline const char* to_string(NormKind k) {
  return k == NormKind::batchnorm ? "batchnorm" : "layernorm";
}

/// Channel normalization over an arbitrary layout. Batchnorm reduces over
/// every axis except the channel axis and keeps running statistics;
/// layernorm reduces over the channel axis per position.
struct Norm {
  NormKind kind = NormKind::batchnorm;
  std::int64_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.1;
  bool affine = true;
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // batchnorm buffers

  /// eps <= 0 selects the per-kind default: 1e-5 for batchnorm, 1e-12 for
  /// layernorm (tight enough for unit output variance to hold at 1e-6).
  static Norm make(NormKind kind, std::int64_t channels, bool affine = true, double eps = 0.0) {
    Norm n;
    n.kind = kind;
    n.channels = channels;
    n.eps = eps > 0.0 ? eps : (kind == NormKind::batchnorm ? 1e-5 : 1e-12);
    n.affine = affine;
    if (affine) {
      n.gamma = Tensor::ones({channels}).set_requires_grad(true);
      n.beta = Tensor::zeros({channels}).set_requires_grad(true);
    }
    if (kind == NormKind::batchnorm) {
      n.running_mean = Tensor::zeros({channels});
      n.running_var = Tensor::ones({channels});
    }
    return n;
  }

  /// channel_axis selects the layout: 1 for [B, C, H, W], 2 for [B, L, C].
  Tensor forward(const Tensor& x, int channel_axis, bool training) const {
    const int ca = detail::normalize_axis(channel_axis, x.rank(), "norm channel");
    detail::check(x.shape()[ca] == channels,
                  "norm built for " + std::to_string(channels) + " channels, input has " +
                      std::to_string(x.shape()[ca]) + " at axis " + std::to_string(ca));
    const Shape vs = channel_view_shape(x.rank(), ca);
    Tensor normalized;
    if (kind == NormKind::layernorm) {
      const Tensor m = mean_axes(x, {ca});
      const Tensor centered = sub(x, m);
      const Tensor var = mean_axes(mul(centered, centered), {ca});
      normalized = mul(centered, pow_scalar(add_scalar(var, eps), -0.5));
    } else if (training) {
      detail::check(x.dim(0) >= 2, "batchnorm training mode needs batch extent >= 2, got " +
                                       std::to_string(x.dim(0)));
      std::vector<int> axes;
      for (std::size_t i = 0; i < x.rank(); ++i)
        if (static_cast<int>(i) != ca) axes.push_back(static_cast<int>(i));
      const Tensor m = mean_axes(x, axes);
      const Tensor centered = sub(x, m);
      const Tensor var = mean_axes(mul(centered, centered), axes);
      normalized = mul(centered, pow_scalar(add_scalar(var, eps), -0.5));
      update_running_stats(m, var, x.numel() / channels);
    } else {
      normalized = mul(sub(x, reshape(running_mean, vs)),
                       pow_scalar(add_scalar(reshape(running_var, vs), eps), -0.5));
    }
    if (!affine) return normalized;
    return add(mul(normalized, reshape(gamma, vs)), reshape(beta, vs));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    if (affine) {
      add_param(out, prefix + ".gamma", gamma);
      add_param(out, prefix + ".beta", beta);
    }
    if (kind == NormKind::batchnorm) {
      add_param(out, prefix + ".running_mean", running_mean, /*trainable=*/false);
      add_param(out, prefix + ".running_var", running_var, /*trainable=*/false);
    }
  }

 private:
  /// Shape that lets a [C] vector broadcast against the channel axis:
  /// [C, 1, ..., 1] with one trailing 1 per axis after the channel.
  Shape channel_view_shape(std::size_t rank, int ca) const {
    Shape s{channels};
    for (std::size_t i = ca + 1; i < rank; ++i) s.push_back(1);
    return s;
  }

  void update_running_stats(const Tensor& batch_mean, const Tensor& batch_var,
                            std::int64_t reduce_count) const {
    // buffers are mutable state shared through the node, even on const views
    double* rm = running_mean.node()->value.data();
    double* rv = running_var.node()->value.data();
    const double* bm = batch_mean.data();
    const double* bv = batch_var.data();
    const double unbias =
        reduce_count > 1 ? static_cast<double>(reduce_count) / (reduce_count - 1) : 1.0;
    for (std::int64_t c = 0; c < channels; ++c) {
      rm[c] = (1.0 - momentum) * rm[c] + momentum * bm[c];
      rv[c] = (1.0 - momentum) * rv[c] + momentum * bv[c] * unbias;
    }
  }
};

}  // namespace eatformer
