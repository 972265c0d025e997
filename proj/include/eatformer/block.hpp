#pragma once

#include <optional>

#include "eatformer/attention.hpp"
#include "eatformer/norm.hpp"

namespace eatformer {

enum class Activation { gelu, relu };

inline const char* to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

inline Tensor activate(const Tensor& x, Activation a) {
  return a == Activation::gelu ? gelu(x) : relu(x);
}

/// Convolution layer with He-normal weight init.
struct Conv2dLayer {
  Tensor w, b;
  ConvOpts opts;

  static Conv2dLayer make(std::int64_t cin, std::int64_t cout, std::int64_t k, ConvOpts opts,
                          Rng& rng, bool bias = true) {
    Conv2dLayer l;
    l.opts = opts;
    const double fan_in = static_cast<double>(cin / opts.groups * k * k);
    l.w = Tensor::randn({cout, cin / opts.groups, k, k}, rng, 0.0, std::sqrt(2.0 / fan_in))
              .set_requires_grad(true);
    if (bias) l.b = Tensor::zeros({cout}).set_requires_grad(true);
    return l;
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, opts); }

  void collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".w", w);
    if (b.defined()) add_param(out, prefix + ".b", b);
  }
};

/// Softmax-weighted mixture of same-shape branch outputs.
inline Tensor wom_mix(const std::vector<Tensor>& outputs, const Tensor& alphas) {
  detail::check(!outputs.empty(), "wom_mix needs at least one branch output");
  detail::check(alphas.numel() == static_cast<std::int64_t>(outputs.size()),
                "wom_mix got " + std::to_string(outputs.size()) + " outputs but " +
                    std::to_string(alphas.numel()) + " weights");
  for (const auto& o : outputs)
    detail::check(o.shape() == outputs[0].shape(),
                  "wom_mix branch shapes differ: " + detail::shape_str(o.shape()) + " vs " +
                      detail::shape_str(outputs[0].shape()));
  const Tensor w = softmax(alphas, 0);
  Tensor acc = mul(outputs[0], narrow(w, 0, 0, 1));
  for (std::size_t n = 1; n < outputs.size(); ++n)
    acc = add(acc, mul(outputs[n], narrow(w, 0, static_cast<std::int64_t>(n), 1)));
  return acc;
}

/// Multi-scale region aggregation: parallel norm->conv->act paths with
/// different dilations, softmax-mixed, projected, plus a residual. Stride 2
/// (or a channel change) switches the shortcut to a strided pointwise
/// projection. Paths are depthwise in blocks; the stem uses full convs.
struct MsraParams {
  struct Path {
    Norm norm;
    Conv2dLayer conv;
  };

  std::vector<Path> paths;
  std::vector<int> dilations;
  Tensor alphas;
  Conv2dLayer out_proj;                  // pointwise, path channels -> cout
  std::optional<Conv2dLayer> shortcut;   // pointwise strided projection
  int stride = 1;
  Activation act = Activation::gelu;

  static MsraParams make(std::int64_t cin, std::int64_t cout, std::int64_t k,
                         std::vector<int> dilations, int stride, bool depthwise, NormKind norm,
                         Rng& rng, Activation act = Activation::gelu) {
    detail::check(stride == 1 || stride == 2, "msra stride must be 1 or 2");
    detail::check(!dilations.empty(), "msra needs at least one path");
    detail::check(k % 2 == 1, "msra kernel must be odd, got " + std::to_string(k));
    MsraParams p;
    p.stride = stride;
    p.act = act;
    p.dilations = dilations;
    const std::int64_t path_out = depthwise ? cin : cout;
    for (int d : dilations) {
      ConvOpts o;
      o.stride = stride;
      o.dilation = d;
      o.padding = d * static_cast<int>(k - 1) / 2;
      o.groups = depthwise ? static_cast<int>(cin) : 1;
      Path path{Norm::make(norm, cin), Conv2dLayer::make(cin, path_out, k, o, rng)};
      p.paths.push_back(std::move(path));
    }
    p.alphas = Tensor::zeros({static_cast<std::int64_t>(dilations.size())})
                   .set_requires_grad(true);
    p.out_proj = Conv2dLayer::make(path_out, cout, 1, ConvOpts{}, rng);
    if (stride != 1 || cin != cout) {
      ConvOpts so;
      so.stride = stride;
      p.shortcut = Conv2dLayer::make(cin, cout, 1, so, rng);
    }
    return p;
  }

  Tensor forward(const Tensor& x, bool training) const {
    std::vector<Tensor> outs;
    outs.reserve(paths.size());
    for (const auto& path : paths)
      outs.push_back(activate(path.conv.forward(path.norm.forward(x, 1, training)), act));
    const Tensor mixed = wom_mix(outs, alphas);
    const Tensor projected = out_proj.forward(mixed);
    const Tensor identity = shortcut ? shortcut->forward(x) : x;
    return add(identity, projected);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t n = 0; n < paths.size(); ++n) {
      const std::string pp = prefix + ".path" + std::to_string(n);
      paths[n].norm.collect(pp + ".norm", out);
      paths[n].conv.collect(pp + ".conv", out);
    }
    add_param(out, prefix + ".alphas", alphas);
    out_proj.collect(prefix + ".out_proj", out);
    if (shortcut) shortcut->collect(prefix + ".shortcut", out);
  }
};

inline Tensor msra_forward(const Tensor& x, const MsraParams& p, bool training = false) {
  return p.forward(x, training);
}

/// Channel-split global/local interaction. The global slice runs windowed
/// (deformable) attention, the local slice a depthwise-then-pointwise
/// convolution pair; softmax-weighted outputs are concatenated back to the
/// full width and added to the input.
struct GliParams {
  std::int64_t channels = 0;
  std::int64_t global_channels = 0;  // multiple of the attention head width
  std::int64_t local_channels = 0;
  std::int64_t window = 7;
  bool deformable = true;
  std::optional<Norm> global_norm;
  std::optional<MdMsaParams> attn;
  std::optional<Conv2dLayer> local_dw;
  std::optional<Norm> local_norm;
  std::optional<Conv2dLayer> local_pw;
  Tensor alphas;  // [global, local]
  Activation act = Activation::gelu;

  static std::int64_t split_channels(std::int64_t channels, double ratio,
                                     std::int64_t head_dim) {
    detail::check(ratio >= 0.0 && ratio <= 1.0,
                  "split ratio must lie in [0, 1], got " + std::to_string(ratio));
    auto cg = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(channels)));
    return cg - cg % head_dim;  // whole heads only; remainder goes local
  }

  static GliParams make(std::int64_t channels, double ratio, std::int64_t head_dim,
                        std::int64_t window, bool deformable, std::int64_t k, NormKind norm,
                        Rng& rng, Activation act = Activation::gelu, bool affine_norm = true) {
    GliParams p;
    p.channels = channels;
    p.global_channels = split_channels(channels, ratio, head_dim);
    p.local_channels = channels - p.global_channels;
    p.window = window;
    p.deformable = deformable;
    p.act = act;
    if (p.global_channels > 0) {
      p.global_norm = Norm::make(norm, p.global_channels, affine_norm);
      p.attn = MdMsaParams::make(p.global_channels, p.global_channels / head_dim, rng,
                                 MdMsaParams::Modulation::sigmoid,
                                 /*with_offsets=*/deformable);
    }
    if (p.local_channels > 0) {
      ConvOpts dw;
      dw.padding = static_cast<int>(k - 1) / 2;
      dw.groups = static_cast<int>(p.local_channels);
      p.local_dw = Conv2dLayer::make(p.local_channels, p.local_channels, k, dw, rng);
      p.local_norm = Norm::make(norm, p.local_channels, affine_norm);
      p.local_pw = Conv2dLayer::make(p.local_channels, p.local_channels, 1, ConvOpts{}, rng);
    }
    p.alphas = Tensor::zeros({2}).set_requires_grad(true);
    return p;
  }

  Tensor forward(const Tensor& x, bool training) const {
    detail::check(x.rank() == 4 && x.dim(1) == channels,
                  "gli built for " + std::to_string(channels) + " channels, got " +
                      detail::shape_str(x.shape()));
    const Tensor weights = softmax(alphas, 0);
    std::vector<Tensor> parts;
    if (global_channels > 0) {
      Tensor xg = narrow(x, 1, 0, global_channels);
      Tensor g = windowed_attention(global_norm->forward(xg, 1, training), *attn, window,
                                    deformable);
      parts.push_back(mul(g, narrow(weights, 0, 0, 1)));
    }
    if (local_channels > 0) {
      Tensor xl = narrow(x, 1, global_channels, local_channels);
      Tensor l = local_pw->forward(
          activate(local_norm->forward(local_dw->forward(xl), 1, training), act));
      parts.push_back(mul(l, narrow(weights, 0, 1, 1)));
    }
    const Tensor combined = parts.size() == 1 ? parts[0] : concat(parts, 1);
    return add(combined, x);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    if (global_channels > 0) {
      global_norm->collect(prefix + ".global.norm", out);
      attn->collect(prefix + ".global.attn", out);
    }
    if (local_channels > 0) {
      local_dw->collect(prefix + ".local.dw", out);
      local_norm->collect(prefix + ".local.norm", out);
      local_pw->collect(prefix + ".local.pw", out);
    }
    add_param(out, prefix + ".alphas", alphas);
  }
};

inline Tensor gli_forward(const Tensor& x, const GliParams& p, bool training = false) {
  return p.forward(x, training);
}

/// Position-wise two-layer feed-forward block.
struct FfnParams {
  Tensor w1, b1, w2, b2;
  std::int64_t ratio = 4;
  Activation act = Activation::gelu;

  static FfnParams make(std::int64_t channels, std::int64_t ratio, Activation act, Rng& rng) {
    detail::check(ratio >= 1, "ffn expansion ratio must be >= 1");
    FfnParams p;
    p.ratio = ratio;
    p.act = act;
    const std::int64_t hidden = ratio * channels;
    p.w1 = Tensor::randn({channels, hidden}, rng, 0.0,
                         std::sqrt(2.0 / static_cast<double>(channels)))
               .set_requires_grad(true);
    p.b1 = Tensor::zeros({hidden}).set_requires_grad(true);
    p.w2 = Tensor::randn({hidden, channels}, rng, 0.0,
                         std::sqrt(2.0 / static_cast<double>(hidden)))
               .set_requires_grad(true);
    p.b2 = Tensor::zeros({channels}).set_requires_grad(true);
    return p;
  }

  Tensor forward(const Tensor& x) const {
    return linear(activate(linear(x, w1, b1), act), w2, b2);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".w1", w1);
    add_param(out, prefix + ".b1", b1);
    add_param(out, prefix + ".w2", w2);
    add_param(out, prefix + ".b2", b2);
  }
};

inline Tensor ffn_forward(const Tensor& x, const FfnParams& p) { return p.forward(x); }

/// One EAT block: MSRA residual, GLI residual, then a pre-norm FFN residual
/// in sequence space. Each stage is individually skippable.
struct EatBlock {
  std::optional<MsraParams> msra;
  std::optional<GliParams> gli;
  std::optional<Norm> ffn_norm;
  std::optional<FfnParams> ffn;

  Tensor forward(const Tensor& input, bool training = false) const {
    Tensor x = input;
    if (msra) x = msra->forward(x, training);
    if (gli) x = gli->forward(x, training);
    if (ffn) {
      const std::int64_t H = x.dim(2), W = x.dim(3);
      Tensor seq = img2seq(x);
      seq = add(seq, ffn->forward(ffn_norm->forward(seq, 2, training)));
      x = seq2img(seq, H, W);
    }
    return x;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    if (msra) msra->collect(prefix + ".msra", out);
    if (gli) gli->collect(prefix + ".gli", out);
    if (ffn) {
      ffn_norm->collect(prefix + ".ffn.norm", out);
      ffn->collect(prefix + ".ffn", out);
    }
  }
};

inline Tensor eat_block_forward(const Tensor& x, const EatBlock& block, bool training = false) {
  return block.forward(x, training);
}

}  // namespace eatformer
