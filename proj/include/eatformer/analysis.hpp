#pragma once

#include <json.hpp>

#include "eatformer/model.hpp"

namespace eatformer {

// Cost accounting conventions: parameters are exact learnable-tensor element
// counts; `flops` counts one multiply-accumulate as two operations and
// ignores bias adds, normalization, activations and residual adds
// (softmax inside attention is carried as the 3L^2 term). `macs` is
// flops / 2, the number most profiling tools report.

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t macs() const { return flops / 2; }
};

/// Self-attention layer cost at width C over L positions (global window):
/// params 4(C+1)C, flops 8C^2 L + 4C L^2 + 3L^2.
inline std::pair<std::int64_t, std::int64_t> msa_cost(std::int64_t C, std::int64_t L) {
  detail::check(C >= 1 && L >= 1, "msa_cost requires C, L >= 1");
  const std::int64_t params = 4 * (C + 1) * C;
  const std::int64_t flops = 8 * C * C * L + 4 * C * L * L + 3 * L * L;
  return {params, flops};
}

/// Convolution layer cost at equal input/output width C, kernel k, groups G:
/// params (C k^2 / G + 1) C, flops (2 C k^2 / G) L C.
inline std::pair<std::int64_t, std::int64_t> conv_cost(std::int64_t C, std::int64_t k,
                                                       std::int64_t G, std::int64_t L) {
  detail::check(C >= 1 && k >= 1 && G >= 1 && L >= 1, "conv_cost requires positive arguments");
  detail::check(C % G == 0, "conv_cost: channels " + std::to_string(C) +
                                " not divisible by groups " + std::to_string(G));
  const std::int64_t params = (C * k * k / G + 1) * C;
  const std::int64_t flops = 2 * C * k * k / G * L * C;
  return {params, flops};
}

// ---- split-layer closed forms ------------------------------------------------

/// Factored parameter count of a split global/local layer.
inline std::int64_t gli_params_closed_form(std::int64_t C, std::int64_t k, std::int64_t cg) {
  detail::check(cg >= 0 && cg <= C, "cg must lie in [0, C]");
  return 5 * cg * cg + (2 - 2 * C - k * k) * cg + (k * k + 2 + C) * C;
}

/// Unfactored sum: attention over cg channels plus depthwise + pointwise
/// convolutions over the remaining cl = C - cg channels.
inline std::int64_t gli_params_unfactored(std::int64_t C, std::int64_t k, std::int64_t cg) {
  const std::int64_t cl = C - cg;
  return 4 * (cg + 1) * cg + (k * k + 1) * cl + (cl + 1) * cl;
}

inline std::int64_t gli_flops_closed_form(std::int64_t C, std::int64_t k, std::int64_t cg,
                                          std::int64_t L) {
  detail::check(cg >= 0 && cg <= C, "cg must lie in [0, C]");
  return 10 * L * cg * cg + (4 * L * L - 2 * k * k * L - 4 * L * C) * cg +
         (3 * L + 2 * k * k * C + 2 * C * C) * L;
}

inline std::int64_t gli_flops_unfactored(std::int64_t C, std::int64_t k, std::int64_t cg,
                                         std::int64_t L) {
  const std::int64_t cl = C - cg;
  return 8 * cg * cg * L + 4 * cg * L * L + 3 * L * L + 2 * k * k * L * cl + 2 * cl * cl * L;
}

struct QuadraticMin {
  double vertex = 0.0;        // unconstrained real minimizer of the quadratic
  double vertex_simple = 0.0; // leading 0.2C term with the small correction dropped
  std::int64_t grid_argmin = 0;  // integer argmin over cg in [0, C]
  double ratio = 0.0;            // grid_argmin / C
};

inline QuadraticMin gli_params_argmin(std::int64_t C, std::int64_t k) {
  QuadraticMin r;
  r.vertex = (2.0 * C + k * k - 2.0) / 10.0;
  r.vertex_simple = 0.2 * static_cast<double>(C);
  std::int64_t best = 0;
  for (std::int64_t cg = 0; cg <= C; ++cg)
    if (gli_params_closed_form(C, k, cg) < gli_params_closed_form(C, k, best)) best = cg;
  r.grid_argmin = best;
  r.ratio = static_cast<double>(best) / static_cast<double>(C);
  return r;
}

inline QuadraticMin gli_flops_argmin(std::int64_t C, std::int64_t k, std::int64_t L) {
  QuadraticMin r;
  r.vertex = (4.0 * L * C + 2.0 * k * k * L - 4.0 * L * L) / (20.0 * L);
  r.vertex_simple = 0.2 * static_cast<double>(C);
  std::int64_t best = 0;
  for (std::int64_t cg = 0; cg <= C; ++cg)
    if (gli_flops_closed_form(C, k, cg, L) < gli_flops_closed_form(C, k, best, L)) best = cg;
  r.grid_argmin = best;
  r.ratio = static_cast<double>(best) / static_cast<double>(C);
  return r;
}

// ---- model walker -------------------------------------------------------------

struct CostCurvePoint {
  double p = 0.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct CostReport {
  std::vector<LayerCost> rows;
  std::int64_t total_params = 0;
  std::int64_t total_flops = 0;
  std::vector<CostCurvePoint> closed_form_curve;  // stage-3 geometry, p in [0, 1]
  double argmin_p = 0.0;

  std::int64_t total_macs() const { return total_flops / 2; }

  std::string to_csv() const {
    std::ostringstream os;
    os << "layer,params,flops,macs\n";
    for (const auto& r : rows) os << r.name << "," << r.params << "," << r.flops << ","
                                  << r.macs() << "\n";
    os << "total," << total_params << "," << total_flops << "," << total_macs() << "\n";
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
      j["rows"].push_back({{"layer", r.name},
                           {"params", r.params},
                           {"flops", r.flops},
                           {"macs", r.macs()}});
    j["total_params"] = total_params;
    j["total_flops"] = total_flops;
    j["total_macs"] = total_macs();
    j["argmin_p"] = argmin_p;
    j["closed_form_curve"] = nlohmann::json::array();
    for (const auto& c : closed_form_curve)
      j["closed_form_curve"].push_back(
          {{"p", c.p}, {"params", c.params}, {"flops", c.flops}});
    return j;
  }
};

namespace detail {

inline std::int64_t module_params(const std::function<void(ParamList&)>& collect) {
  ParamList list;
  collect(list);
  return count_trainable(list);
}

inline std::int64_t conv_layer_flops(const Conv2dLayer& conv, std::int64_t out_h,
                                     std::int64_t out_w) {
  const std::int64_t cout = conv.w.dim(0), cin_g = conv.w.dim(1), k = conv.w.dim(2);
  return 2 * cin_g * k * k * cout * out_h * out_w;
}

inline std::int64_t msra_flops(const MsraParams& p, std::int64_t out_h, std::int64_t out_w) {
  std::int64_t f = 0;
  for (const auto& path : p.paths) f += conv_layer_flops(path.conv, out_h, out_w);
  f += conv_layer_flops(p.out_proj, out_h, out_w);
  if (p.shortcut) f += conv_layer_flops(*p.shortcut, out_h, out_w);
  return f;
}

inline std::int64_t attention_flops(std::int64_t C, std::int64_t h, std::int64_t w,
                                    std::int64_t window, bool md) {
  std::int64_t proj_L, lw, nw;
  if (window >= h && window >= w) {
    proj_L = h * w;
    lw = h * w;
    nw = 1;
  } else {
    const WindowGrid grid = window_grid(h, w, window);
    proj_L = grid.hp * grid.wp;
    lw = window * window;
    nw = grid.tiles();
  }
  std::int64_t f = 8 * C * C * proj_L;            // q, k, v, o projections
  f += nw * (4 * C * lw * lw + 3 * lw * lw);      // scores, weighting, softmax
  if (md) f += 2 * proj_L * C * 3;                // offset/modulation predictor
  return f;
}

inline std::int64_t gli_flops(const GliParams& p, std::int64_t h, std::int64_t w) {
  std::int64_t f = 0;
  if (p.global_channels > 0)
    f += attention_flops(p.global_channels, h, w, p.window, p.deformable);
  if (p.local_channels > 0) {
    f += conv_layer_flops(*p.local_dw, h, w);
    f += conv_layer_flops(*p.local_pw, h, w);
  }
  return f;
}

inline std::int64_t ffn_flops(const FfnParams& p, std::int64_t L) {
  const std::int64_t cin = p.w1.dim(0), hidden = p.w1.dim(1);
  return 2 * L * cin * hidden + 2 * L * hidden * cin;
}

}  // namespace detail

/// Per-layer cost table for a built model at the given square input size.
inline CostReport model_cost(const Model& model, std::int64_t input_hw) {
  detail::check(input_hw >= 32, "model_cost needs input size >= 32");
  CostReport report;
  const std::int64_t padded = (input_hw + 31) / 32 * 32;
  std::int64_t h = padded / 2;

  auto add_row = [&report](const std::string& name, std::int64_t params, std::int64_t flops) {
    report.rows.push_back({name, params, flops});
    report.total_params += params;
    report.total_flops += flops;
  };

  auto msra_row = [&](const std::string& name, const MsraParams& p, std::int64_t oh,
                      std::int64_t ow) {
    add_row(name,
            detail::module_params([&](ParamList& l) { p.collect("m", l); }),
            detail::msra_flops(p, oh, ow));
  };

  msra_row("stem.0", model.stem1, h, h);
  h /= 2;
  msra_row("stem.1", model.stem2, h, h);

  for (int s = 0; s < 4; ++s) {
    const auto& stage = model.stages[s];
    const std::string sp = "stage" + std::to_string(s + 1);
    if (stage.down) {
      h /= 2;
      msra_row(sp + ".down", *stage.down, h, h);
    }
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      const auto& block = stage.blocks[b];
      const std::string bp = sp + ".block" + std::to_string(b);
      if (block.msra) msra_row(bp + ".msra", *block.msra, h, h);
      if (block.gli)
        add_row(bp + ".gli",
                detail::module_params([&](ParamList& l) { block.gli->collect("g", l); }),
                detail::gli_flops(*block.gli, h, h));
      if (block.ffn) {
        std::int64_t params =
            detail::module_params([&](ParamList& l) { block.ffn->collect("f", l); }) +
            detail::module_params([&](ParamList& l) { block.ffn_norm->collect("n", l); });
        add_row(bp + ".ffn", params, detail::ffn_flops(*block.ffn, h * h));
      }
    }
  }

  std::int64_t head_params =
      detail::module_params([&](ParamList& l) { model.head_norm.collect("n", l); }) +
      model.head_w.numel() + model.head_b.numel();
  add_row("head", head_params, 2 * model.head_w.dim(0) * model.head_w.dim(1));
  if (model.trh) {
    const std::int64_t C = model.spec.dims[3];
    const std::int64_t L = h * h, T = model.spec.trh_tasks;
    std::int64_t flops = 0;
    for (const auto& layer : model.trh->layers) {
      flops += 2 * T * C * C + 2 * 2 * L * C * C + 2 * T * C * C;  // q, k+v, o projections
      flops += 2 * 2 * T * L * C + 3 * T * L;                      // scores, weighting, softmax
      flops += detail::ffn_flops(layer.ffn, T);
    }
    for (const auto& proj : model.trh->task_proj) flops += 2 * T * proj.first.numel();
    add_row("trh", detail::module_params([&](ParamList& l) { model.trh->collect("t", l); }),
            flops);
  }

  // closed-form split curve at the stage-3 geometry
  const std::int64_t C3 = model.spec.dims[2];
  const std::int64_t k = model.spec.kernel;
  const std::int64_t L3 = (padded / 16) * (padded / 16);
  for (int i = 0; i <= 20; ++i) {
    const double p = static_cast<double>(i) / 20.0;
    const auto cg = static_cast<std::int64_t>(std::llround(p * static_cast<double>(C3)));
    report.closed_form_curve.push_back(
        {p, gli_params_closed_form(C3, k, cg), gli_flops_closed_form(C3, k, cg, L3)});
  }
  report.argmin_p = gli_params_argmin(C3, k).ratio;
  return report;
}

// ---- mixing-weight report -------------------------------------------------------

struct AlphaRow {
  int stage = 0;                // 1-based
  int block = 0;                // depth index within the stage
  std::vector<double> msra;     // softmaxed path weights; empty when no msra
  std::vector<double> gli;      // softmaxed (global, local) weights
};

struct AlphaReport {
  std::vector<AlphaRow> rows;

  std::string to_csv() const {
    std::ostringstream os;
    os << "stage,block,site,weights\n";
    for (const auto& r : rows) {
      auto emit = [&](const char* site, const std::vector<double>& w) {
        if (w.empty()) return;
        os << r.stage << "," << r.block << "," << site << ",";
        for (std::size_t i = 0; i < w.size(); ++i) os << (i ? ";" : "") << w[i];
        os << "\n";
      };
      emit("msra", r.msra);
      emit("gli", r.gli);
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"stage", r.stage}, {"block", r.block}, {"msra", r.msra}, {"gli", r.gli}});
    return j;
  }
};

namespace detail {

inline std::vector<double> softmax_values(const Tensor& t) {
  std::vector<double> w(t.values());
  double mx = w[0];
  for (double v : w) mx = std::max(mx, v);
  double sum = 0.0;
  for (auto& v : w) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace detail

/// Softmaxed mixing weights for every EAT block, in block order.
inline AlphaReport alpha_report(const Model& model) {
  AlphaReport report;
  for (int s = 0; s < 4; ++s)
    for (std::size_t b = 0; b < model.stages[s].blocks.size(); ++b) {
      const auto& block = model.stages[s].blocks[b];
      AlphaRow row;
      row.stage = s + 1;
      row.block = static_cast<int>(b);
      if (block.msra) row.msra = detail::softmax_values(block.msra->alphas);
      if (block.gli) row.gli = detail::softmax_values(block.gli->alphas);
      report.rows.push_back(std::move(row));
    }
  return report;
}

}  // namespace eatformer
