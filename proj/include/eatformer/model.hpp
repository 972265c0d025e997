#pragma once

#include <array>
#include <map>
#include <set>

#include "eatformer/block.hpp"
#include "eatformer/optim.hpp"

namespace eatformer {

/// Architecture recipe for one pyramid variant. Stages 1-2 run local-only
/// interaction (no attention slice); stages listed in gli_stages split
/// channels between windowed attention and convolution; stages listed in
/// msra_stages carry an in-block multi-scale aggregation residual.
struct VariantSpec {
  std::string name = "custom";
  std::array<int, 4> depths{};
  std::array<std::int64_t, 4> dims{};
  std::int64_t head_dim = 32;
  std::int64_t window = 7;
  std::int64_t kernel = 3;
  std::array<std::vector<int>, 4> dilations{{{1}, {1}, {1, 2, 3}, {1, 2}}};
  std::set<int> gli_stages{3, 4};   // 1-based stage ids with a global path
  std::set<int> msra_stages{3, 4};  // 1-based stage ids with in-block msra
  double split_ratio = 0.5;
  std::int64_t ffn_ratio = 4;
  std::int64_t num_classes = 1000;
  NormKind norm = NormKind::batchnorm;
  Activation ffn_act = Activation::gelu;
  bool md_msa = true;
  bool use_trh = false;
  int trh_layers = 2;
  int trh_tasks = 1;

  void validate() const {
    for (int s = 0; s < 4; ++s) {
      detail::check(depths[s] >= 0, "depths must be >= 0 (stage " + std::to_string(s + 1) + ")");
      detail::check(dims[s] >= 1, "dims must be >= 1 (stage " + std::to_string(s + 1) + ")");
      detail::check(!dilations[s].empty(),
                    "dilations must be non-empty (stage " + std::to_string(s + 1) + ")");
    }
    detail::check(head_dim >= 1, "head_dim must be >= 1");
    detail::check(window >= 1, "window must be >= 1");
    detail::check(kernel >= 1 && kernel % 2 == 1, "kernel must be odd and >= 1");
    detail::check(split_ratio >= 0.0 && split_ratio <= 1.0, "split_ratio must lie in [0, 1]");
    detail::check(ffn_ratio >= 1, "ffn_ratio must be >= 1");
    detail::check(num_classes >= 2, "num_classes must be >= 2");
    detail::check(trh_layers >= 1 && trh_tasks >= 1, "trh_layers and trh_tasks must be >= 1");
    for (int s : gli_stages) {
      detail::check(s >= 1 && s <= 4, "gli_stages entries must be in 1..4");
      const std::int64_t cg = GliParams::split_channels(dims[s - 1], split_ratio, head_dim);
      detail::check(split_ratio == 0.0 || cg >= head_dim,
                    "dims: stage " + std::to_string(s) + " width " +
                        std::to_string(dims[s - 1]) +
                        " leaves no whole attention head at split_ratio " +
                        std::to_string(split_ratio));
    }
    for (int s : msra_stages)
      detail::check(s >= 1 && s <= 4, "msra_stages entries must be in 1..4");
  }
};

/// Known recipes. Depth/width follow the published family; the feed-forward
/// expansion per variant is chosen so that analytic parameter and
/// compute totals line up with the published model sizes.
inline const std::map<std::string, VariantSpec>& variant_registry() {
  static const std::map<std::string, VariantSpec> reg = [] {
    std::map<std::string, VariantSpec> m;
    auto add = [&m](const std::string& name, std::array<int, 4> depths,
                    std::array<std::int64_t, 4> dims, std::int64_t ffn_ratio) {
      VariantSpec v;
      v.name = name;
      v.depths = depths;
      v.dims = dims;
      v.ffn_ratio = ffn_ratio;
      m[name] = v;
    };
    add("mobile", {1, 1, 4, 1}, {48, 64, 160, 256}, 3);
    add("lite", {1, 2, 6, 1}, {64, 128, 192, 256}, 4);
    add("tiny", {2, 2, 6, 2}, {64, 128, 192, 256}, 6);
    add("mini", {2, 3, 8, 2}, {64, 128, 256, 320}, 5);
    add("small", {3, 4, 12, 3}, {64, 128, 320, 448}, 5);
    add("medium", {4, 5, 14, 4}, {64, 160, 384, 512}, 5);
    add("base", {5, 6, 20, 7}, {96, 160, 384, 576}, 5);
    VariantSpec desk;
    desk.name = "desk";
    desk.depths = {1, 1, 1, 1};
    desk.dims = {32, 64, 96, 128};
    desk.ffn_ratio = 4;
    desk.num_classes = 10;
    m["desk"] = desk;
    return m;
  }();
  return reg;
}

inline std::vector<std::string> variant_names() {
  std::vector<std::string> names;
  for (const auto& [name, spec] : variant_registry()) names.push_back(name);
  return names;
}

inline VariantSpec make_variant_spec(const std::string& name) {
  auto it = variant_registry().find(name);
  if (it == variant_registry().end()) {
    std::string known;
    for (const auto& n : variant_names()) known += (known.empty() ? "" : ", ") + n;
    detail::fail("unknown variant '" + name + "'; known variants: " + known);
  }
  return it->second;
}

/// Task-related head: learnable task tokens attend to backbone features
/// through a short stack of cross-attention + feed-forward layers; each task
/// gets its own output projection. The backbone sequence is never modified.
struct TrhParams {
  struct Layer {
    Norm q_norm;
    MsaParams attn;
    Norm f_norm;
    FfnParams ffn;
  };

  Tensor tokens;  // [T, C]
  std::vector<Layer> layers;
  std::vector<std::pair<Tensor, Tensor>> task_proj;  // per-task (w, b)

  static TrhParams make(std::int64_t tasks, std::int64_t channels, std::int64_t head_dim,
                        int depth, const std::vector<std::int64_t>& out_dims, NormKind norm,
                        Activation act, Rng& rng) {
    detail::check(static_cast<std::int64_t>(out_dims.size()) == tasks,
                  "trh needs one output width per task");
    TrhParams p;
    p.tokens = Tensor::randn({tasks, channels}, rng, 0.0, 0.02).set_requires_grad(true);
    for (int l = 0; l < depth; ++l) {
      Layer layer{Norm::make(norm, channels),
                  MsaParams::make(channels, channels / head_dim, rng),
                  Norm::make(norm, channels),
                  FfnParams::make(channels, 4, act, rng)};
      p.layers.push_back(std::move(layer));
    }
    for (std::int64_t t = 0; t < tasks; ++t) {
      p.task_proj.emplace_back(
          Tensor::randn({channels, out_dims[t]}, rng, 0.0,
                        std::sqrt(1.0 / static_cast<double>(channels)))
              .set_requires_grad(true),
          Tensor::zeros({out_dims[t]}).set_requires_grad(true));
    }
    return p;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".tokens", tokens);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string lp = prefix + ".layer" + std::to_string(l);
      layers[l].q_norm.collect(lp + ".q_norm", out);
      layers[l].attn.collect(lp + ".attn", out);
      layers[l].f_norm.collect(lp + ".f_norm", out);
      layers[l].ffn.collect(lp + ".ffn", out);
    }
    for (std::size_t t = 0; t < task_proj.size(); ++t) {
      add_param(out, prefix + ".task" + std::to_string(t) + ".w", task_proj[t].first);
      add_param(out, prefix + ".task" + std::to_string(t) + ".b", task_proj[t].second);
    }
  }
};

/// Per-task outputs from the task-related head over [B, L, C] features.
inline std::vector<Tensor> trh_forward(const Tensor& features, const TrhParams& p,
                                       bool training = false) {
  detail::check(features.rank() == 3, "trh expects [B, L, C] features, got " +
                                          detail::shape_str(features.shape()));
  const std::int64_t B = features.dim(0), C = features.dim(2);
  const std::int64_t T = p.tokens.dim(0);
  Tensor t = add(Tensor::zeros({B, T, C}), reshape(p.tokens, {1, T, C}));
  for (const auto& layer : p.layers) {
    t = add(t, cross_attention(layer.q_norm.forward(t, 2, training), features, layer.attn));
    t = add(t, layer.ffn.forward(layer.f_norm.forward(t, 2, training)));
  }
  std::vector<Tensor> outs;
  for (std::int64_t task = 0; task < T; ++task) {
    Tensor tok = reshape(narrow(t, 1, task, 1), {B, C});
    outs.push_back(linear(tok, p.task_proj[task].first, p.task_proj[task].second));
  }
  return outs;
}

/// Pyramid classifier assembled from EAT blocks: a two-unit downsampling
/// stem, four stages joined by strided aggregation units, and a pooled
/// linear head (or the task-related head when enabled).
class Model {
 public:
  VariantSpec spec;
  MsraParams stem1, stem2;

  struct Stage {
    std::optional<MsraParams> down;  // stride-2 unit into this stage
    std::vector<EatBlock> blocks;
  };

  std::array<Stage, 4> stages;
  Norm head_norm;
  Tensor head_w, head_b;
  std::optional<TrhParams> trh;

  Tensor forward(const Tensor& images, bool training = false) const {
    Tensor f = backbone_features(images, training);
    Tensor seq = img2seq(f);
    if (trh) return trh_forward(seq, *trh, training)[0];
    Tensor pooled = reshape(mean_axes(head_norm.forward(seq, 2, training), {1}, false),
                            {f.dim(0), spec.dims[3]});
    return linear(pooled, head_w, head_b);
  }

  /// Final-stage feature map, before any head.
  Tensor backbone_features(const Tensor& images, bool training = false) const {
    detail::check(images.rank() == 4 && images.dim(1) == 3,
                  "model input must be [B, 3, H, W], got " + detail::shape_str(images.shape()));
    const std::int64_t H = images.dim(2), W = images.dim(3);
    detail::check(H >= 32 && W >= 32, "input spatial extents must be >= 32, got " +
                                          detail::shape_str(images.shape()));
    const std::int64_t Hp = (H + 31) / 32 * 32, Wp = (W + 31) / 32 * 32;
    Tensor x = pad_bottom_right(images, Hp, Wp);
    x = stem1.forward(x, training);
    x = stem2.forward(x, training);
    for (const auto& stage : stages) {
      if (stage.down) x = stage.down->forward(x, training);
      for (const auto& block : stage.blocks) x = block.forward(x, training);
    }
    return x;
  }

  ParamList params() const {
    ParamList out;
    stem1.collect("stem1", out);
    stem2.collect("stem2", out);
    for (int s = 0; s < 4; ++s) {
      const std::string sp = "stage" + std::to_string(s + 1);
      if (stages[s].down) stages[s].down->collect(sp + ".down", out);
      for (std::size_t b = 0; b < stages[s].blocks.size(); ++b)
        stages[s].blocks[b].collect(sp + ".block" + std::to_string(b), out);
    }
    head_norm.collect("head.norm", out);
    add_param(out, "head.w", head_w);
    add_param(out, "head.b", head_b);
    if (trh) trh->collect("trh", out);
    return out;
  }
};

inline Model build_variant(const VariantSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Model m;
  m.spec = spec;
  const std::int64_t stem_mid = std::max<std::int64_t>(spec.dims[0] / 2, 8);
  m.stem1 = MsraParams::make(3, stem_mid, spec.kernel, {1}, 2, /*depthwise=*/false, spec.norm,
                             rng, spec.ffn_act);
  m.stem2 = MsraParams::make(stem_mid, spec.dims[0], spec.kernel, {1}, 2, false, spec.norm, rng,
                             spec.ffn_act);
  for (int s = 0; s < 4; ++s) {
    auto& stage = m.stages[s];
    const std::int64_t C = spec.dims[s];
    const bool msra_here = spec.msra_stages.count(s + 1) > 0;
    if (s > 0) {
      const std::vector<int> down_dil = msra_here ? spec.dilations[s] : std::vector<int>{1};
      stage.down = MsraParams::make(spec.dims[s - 1], C, spec.kernel, down_dil, 2,
                                    /*depthwise=*/true, spec.norm, rng, spec.ffn_act);
    }
    const bool global_here = spec.gli_stages.count(s + 1) > 0;
    for (int b = 0; b < spec.depths[s]; ++b) {
      EatBlock block;
      if (msra_here)
        block.msra = MsraParams::make(C, C, spec.kernel, spec.dilations[s], 1, true, spec.norm,
                                      rng, spec.ffn_act);
      block.gli = GliParams::make(C, global_here ? spec.split_ratio : 0.0, spec.head_dim,
                                  spec.window, spec.md_msa, spec.kernel, spec.norm, rng,
                                  spec.ffn_act);
      block.ffn_norm = Norm::make(spec.norm, C);
      block.ffn = FfnParams::make(C, spec.ffn_ratio, spec.ffn_act, rng);
      stage.blocks.push_back(std::move(block));
    }
  }
  m.head_norm = Norm::make(spec.norm, spec.dims[3]);
  m.head_w = Tensor::randn({spec.dims[3], spec.num_classes}, rng, 0.0,
                           std::sqrt(1.0 / static_cast<double>(spec.dims[3])))
                 .set_requires_grad(true);
  m.head_b = Tensor::zeros({spec.num_classes}).set_requires_grad(true);
  if (spec.use_trh) {
    std::vector<std::int64_t> out_dims(spec.trh_tasks, spec.num_classes);
    m.trh = TrhParams::make(spec.trh_tasks, spec.dims[3], spec.head_dim, spec.trh_layers,
                            out_dims, spec.norm, spec.ffn_act, rng);
  }
  return m;
}

/// One optimization step on a labeled batch; returns the loss value.
inline double train_step(Model& model, const Tensor& images,
                         const std::vector<std::int64_t>& labels, AdamW& opt,
                         ParamList& params) {
  Tensor logits = model.forward(images, /*training=*/true);
  Tensor loss = cross_entropy(logits, labels);
  zero_grads(params);
  loss.backward();
  opt.step(params);
  return loss.item();
}

}  // namespace eatformer
