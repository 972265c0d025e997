#pragma once

#include <filesystem>

#include "eatformer/analysis.hpp"
#include "eatformer/checkpoint.hpp"
#include "eatformer/ea.hpp"

namespace eatformer {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline void add_check(std::vector<CheckResult>& out, const std::string& name, bool pass,
                      const std::string& detail = "") {
  out.push_back({name, pass, detail});
}

/// Central finite-difference probe for a scalar-valued graph builder.
inline bool fd_probe(const std::function<Tensor(std::vector<Tensor>&)>& f,
                     std::vector<Tensor> leaves, double tol, std::string* why,
                     double step = 1e-5) {
  for (auto& leaf : leaves) leaf.set_requires_grad(true);
  Tensor loss = f(leaves);
  for (auto& leaf : leaves) leaf.zero_grad();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    for (std::size_t i = 0; i < leaf.values().size(); ++i) {
      const double saved = leaf.values()[i];
      leaf.values()[i] = saved + step;
      const double up = f(leaves).item();
      leaf.values()[i] = saved - step;
      const double down = f(leaves).item();
      leaf.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[li].empty() ? 0.0 : analytic[li][i];
      const double scale = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      if (std::fabs(a - numeric) > tol * scale) {
        if (why)
          *why = "leaf " + std::to_string(li) + "[" + std::to_string(i) + "]: analytic " +
                 std::to_string(a) + " vs numeric " + std::to_string(numeric);
        return false;
      }
    }
  }
  return true;
}

}  // namespace detail

/// Bitwise operator-equivalence trials plus the elitism and mask-statistics
/// properties of the evolution loop.
inline std::vector<CheckResult> ea_checks(std::int64_t trials = 1000) {
  std::vector<CheckResult> out;
  Rng rng(2024);
  bool cross_ok = true, mut_ok = true;
  for (std::int64_t t = 0; t < trials && (cross_ok || mut_ok); ++t) {
    const std::int64_t L = 2 + rng.uniform_index(7), D = 1 + rng.uniform_index(8);
    ea::Population pop = ea::Population::random(L, D, rng, -5.0, 5.0);
    pop.crossover_rate = rng.uniform();
    pop.mutation_rate = rng.uniform();
    const std::int64_t i = rng.uniform_index(L);
    auto [child, trace] = ea::crossover(pop, i, rng);
    if (ea::crossover_as_attention(pop, trace) != child) cross_ok = false;
    auto [mutant, weights] = ea::mutation(pop, i, rng);
    std::vector<double> x(pop.row(i), pop.row(i) + D);
    if (ea::mutation_as_linear(x, weights) != mutant) mut_ok = false;
  }
  detail::add_check(out, "ea.crossover_attention_bitwise", cross_ok,
                    std::to_string(trials) + " seeded trials");
  detail::add_check(out, "ea.mutation_linear_bitwise", mut_ok,
                    std::to_string(trials) + " seeded trials");

  Rng erng(7);
  ea::Population pop = ea::Population::random(16, 4, erng);
  pop.crossover_rate = 0.3;
  pop.mutation_rate = 0.5;
  pop.lower_scale.assign(4, 0.5);
  pop.upper_scale.assign(4, 1.5);
  auto history = ea::evolve(
      pop, 100,
      [](const std::vector<double>& x) {
        double s = 0.0;
        for (double v : x) s += v * v;
        return s;
      },
      erng);
  bool monotone = true;
  for (std::size_t g = 1; g < history.size(); ++g)
    monotone = monotone && history[g].best_fitness <= history[g - 1].best_fitness;
  detail::add_check(out, "ea.elitism_monotone", monotone);

  Rng srng(11);
  ea::Population spop = ea::Population::random(6, 8, srng);
  spop.crossover_rate = 0.3;
  std::int64_t taken = 0, total = 0;
  for (int t = 0; t < 4000; ++t) {
    auto [child, trace] = ea::crossover(spop, t % 6, srng);
    for (double m : trace.mask) taken += m > 0.5 ? 1 : 0;
    total += spop.features;
  }
  const double freq = static_cast<double>(taken) / static_cast<double>(total);
  const double se = std::sqrt(0.3 * 0.7 / static_cast<double>(total));
  detail::add_check(out, "ea.donor_gene_frequency", std::fabs(freq - 0.3) <= 3.0 * se,
                    "freq " + std::to_string(freq) + " vs CR 0.3");
  return out;
}

/// Finite-difference checks across the differentiable operation set.
inline std::vector<CheckResult> grad_checks(int instances = 10, double tol = 1e-4) {
  std::vector<CheckResult> out;
  Rng rng(515);
  auto run = [&](const std::string& name,
                 const std::function<Tensor(std::vector<Tensor>&)>& f,
                 std::vector<Tensor> leaves, double t) {
    std::string why;
    const bool ok = detail::fd_probe(f, std::move(leaves), t, &why);
    detail::add_check(out, name, ok, why);
  };

  for (int i = 0; i < instances; ++i) {
    Tensor a = Tensor::randn({2, 3}, rng), b = Tensor::randn({3}, rng);
    run("grad.elementwise#" + std::to_string(i),
        [](std::vector<Tensor>& v) {
          return sum_all(mul(add(v[0], v[1]), sigmoid(mul(v[0], v[1]))));
        },
        {a, b}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({2, 5}, rng), w = Tensor::randn({2, 5}, rng);
    run("grad.softmax#" + std::to_string(i),
        [w](std::vector<Tensor>& v) { return sum_all(mul(softmax(v[0], 1), w)); }, {x}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({2, 3, 4}, rng), w = Tensor::randn({4, 3}, rng),
           bb = Tensor::randn({3}, rng);
    run("grad.linear#" + std::to_string(i),
        [](std::vector<Tensor>& v) {
          Tensor y = linear(v[0], v[1], v[2]);
          return sum_all(mul(y, gelu(y)));
        },
        {x, w, bb}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({1, 2, 5, 5}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.0, 0.4);
    Tensor bb = Tensor::randn({3}, rng);
    run("grad.conv2d#" + std::to_string(i),
        [i](std::vector<Tensor>& v) {
          ConvOpts o{1 + i % 2, 1, 1 + i % 2, 1};
          Tensor y = conv2d(v[0], v[1], v[2], o);
          return sum_all(mul(y, y));
        },
        {x, w, bb}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({2, 4, 3, 3}, rng);
    Norm bn = Norm::make(NormKind::batchnorm, 4);
    Norm ln = Norm::make(NormKind::layernorm, 4);
    run("grad.norm#" + std::to_string(i),
        [&bn, &ln, i](std::vector<Tensor>& v) {
          Norm local = i % 2 ? bn : ln;
          local.gamma = v[1];
          local.running_mean = Tensor::zeros({4});
          local.running_var = Tensor::ones({4});
          Tensor y = local.forward(v[0], 1, /*training=*/true);
          return sum_all(mul(y, y));
        },
        {x, bn.gamma.detach()}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({1, 2, 4, 4}, rng);
    Tensor loc = Tensor::zeros({1, 3, 2});
    for (int l = 0; l < 3; ++l) {
      loc.values()[l * 2] = rng.uniform(0.2, 2.8);
      loc.values()[l * 2 + 1] = rng.uniform(0.2, 2.8);
    }
    run("grad.bilinear_sample#" + std::to_string(i),
        [](std::vector<Tensor>& v) {
          Tensor y = bilinear_sample(v[0], v[1]);
          return sum_all(mul(y, y));
        },
        {x, loc}, tol);
  }
  for (int i = 0; i < instances; ++i) {
    Tensor x = Tensor::randn({1, 2, 5, 4}, rng);
    run("grad.windows#" + std::to_string(i),
        [](std::vector<Tensor>& v) {
          Tensor t = window_partition(v[0], 3);
          Tensor back = window_reverse(t, 3, 1, 5, 4);
          return sum_all(mul(back, back));
        },
        {x}, tol);
  }
  {
    Rng prng(99);
    MsaParams p = MsaParams::make(8, 2, prng);
    for (int i = 0; i < instances; ++i) {
      Tensor x = Tensor::randn({1, 4, 8}, rng);
      run("grad.msa#" + std::to_string(i),
          [&p](std::vector<Tensor>& v) {
            MsaParams local = p;
            local.w_q[0] = v[1];
            local.w_o = v[2];
            Tensor y = msa_forward(v[0], local);
            return sum_all(mul(y, y));
          },
          {x, p.w_q[0].detach(), p.w_o.detach()}, tol);
    }
    MdMsaParams md = MdMsaParams::make(8, 1, prng);
    md.w_md = Tensor::randn({8, 3}, prng, 0.0, 0.05).set_requires_grad(true);
    for (int i = 0; i < instances; ++i) {
      Tensor x = Tensor::randn({1, 8, 3, 3}, rng);
      run("grad.md_msa#" + std::to_string(i),
          [&md](std::vector<Tensor>& v) {
            MdMsaParams local = md;
            local.w_md = v[1];
            Tensor y = md_msa_forward(v[0], local);
            return sum_all(mul(y, y));
          },
          {x, md.w_md.detach()}, 2e-4);
    }
  }
  {
    Rng prng(101);
    std::vector<std::int64_t> labels{1, 0};
    for (int i = 0; i < instances; ++i) {
      Tensor logits = Tensor::randn({2, 4}, rng);
      run("grad.cross_entropy#" + std::to_string(i),
          [&labels](std::vector<Tensor>& v) { return cross_entropy(v[0], labels); }, {logits},
          tol);
    }
    (void)prng;
  }
  return out;
}

/// Closed-form vs unfactored identities, the quadratic minimum, the
/// empirical-counter reconciliation and the published-size anchors.
inline std::vector<CheckResult> cost_checks(std::int64_t max_c = 512) {
  std::vector<CheckResult> out;
  bool identity_ok = true;
  bool argmin_ok = true;
  for (std::int64_t C = 1; C <= max_c && (identity_ok || argmin_ok); ++C) {
    for (std::int64_t k : {3, 5, 7}) {
      for (std::int64_t cg = 0; cg <= C; ++cg) {
        if (gli_params_closed_form(C, k, cg) != gli_params_unfactored(C, k, cg) ||
            gli_flops_closed_form(C, k, cg, 49) != gli_flops_unfactored(C, k, cg, 49) ||
            gli_flops_closed_form(C, k, cg, 196) != gli_flops_unfactored(C, k, cg, 196))
          identity_ok = false;
      }
      const QuadraticMin m = gli_params_argmin(C, k);
      const double feasible_vertex =
          std::min(std::max(m.vertex, 0.0), static_cast<double>(C));
      if (std::fabs(static_cast<double>(m.grid_argmin) - feasible_vertex) > 1.0)
        argmin_ok = false;
    }
  }
  detail::add_check(out, "cost.closed_form_identity", identity_ok,
                    "C in 1.." + std::to_string(max_c) + ", k in {3,5,7}, cg in 0..C");
  detail::add_check(out, "cost.params_argmin_near_vertex", argmin_ok,
                    "integer argmin within 1 of (2C+k^2-2)/10 clamped to [0, C]");

  Rng rng(303);
  GliParams layer = GliParams::make(64, 0.5, 32, /*window=*/64, /*deformable=*/false, 3,
                                    NormKind::batchnorm, rng, Activation::gelu,
                                    /*affine_norm=*/false);
  ParamList plist;
  layer.collect("gli", plist);
  const std::int64_t counted = count_trainable(plist) - layer.alphas.numel();
  detail::add_check(out, "cost.empirical_params_match", counted == gli_params_closed_form(64, 3, 32),
                    std::to_string(counted) + " vs closed form " +
                        std::to_string(gli_params_closed_form(64, 3, 32)));
  detail::add_check(out, "cost.empirical_flops_match",
                    detail::gli_flops(layer, 8, 8) == gli_flops_closed_form(64, 3, 32, 64));

  struct Anchor {
    const char* name;
    double params_m, gmacs;
  };
  for (const Anchor& a : {Anchor{"mobile", 1.8, 0.36}, Anchor{"tiny", 6.1, 1.41},
                          Anchor{"small", 24.3, 4.32}}) {
    Model m = build_variant(make_variant_spec(a.name), 1);
    CostReport r = model_cost(m, 224);
    const double params_m = static_cast<double>(r.total_params) / 1e6;
    const double gmacs = static_cast<double>(r.total_macs()) / 1e9;
    const bool ok = std::fabs(params_m / a.params_m - 1.0) <= 0.10 &&
                    std::fabs(gmacs / a.gmacs - 1.0) <= 0.15;
    std::ostringstream os;
    os.precision(3);
    os << params_m << "M / " << gmacs << "G vs published " << a.params_m << "M / " << a.gmacs
       << "G";
    detail::add_check(out, std::string("cost.variant_") + a.name, ok, os.str());
  }
  return out;
}

/// Exact inverse pairs: layout ops, window ops, checkpoint container.
inline std::vector<CheckResult> roundtrip_checks() {
  std::vector<CheckResult> out;
  Rng rng(404);
  {
    Tensor x = Tensor::randn({2, 8, 7, 5}, rng);
    const bool ok =
        Tensor(seq2img(img2seq(x), 7, 5)).values() == x.values();
    detail::add_check(out, "roundtrip.img2seq", ok, "2x8x7x5 bitwise");
  }
  {
    Tensor x = Tensor::randn({2, 4, 9, 11}, rng);
    Tensor back = window_reverse(window_partition(x, 4), 4, 2, 9, 11);
    detail::add_check(out, "roundtrip.windows", back.values() == x.values(),
                      "9x11 map, window 4, padded");
  }
  {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "eatf_selfcheck_ckpt.bin";
    Model m = build_variant(make_variant_spec("desk"), 5);
    Tensor x = Tensor::rand_uniform({1, 3, 32, 32}, rng);
    Tensor before = m.forward(x, false);
    save_checkpoint(m, path.string());
    Model loaded = load_checkpoint(path.string());
    Tensor after = loaded.forward(x, false);
    fs::remove(path);
    detail::add_check(out, "roundtrip.checkpoint", after.values() == before.values(),
                      "bitwise-identical logits after reload");
  }
  return out;
}

inline std::vector<CheckResult> run_suite(const std::string& suite) {
  detail::check(suite == "ea" || suite == "grad" || suite == "cost" ||
                    suite == "roundtrip" || suite == "all",
                "unknown suite '" + suite + "'; known: ea, grad, cost, roundtrip, all");
  std::vector<CheckResult> out;
  auto append = [&out](std::vector<CheckResult> v) {
    out.insert(out.end(), v.begin(), v.end());
  };
  if (suite == "ea" || suite == "all") append(ea_checks());
  if (suite == "grad" || suite == "all") append(grad_checks());
  if (suite == "cost" || suite == "all") append(cost_checks());
  if (suite == "roundtrip" || suite == "all") append(roundtrip_checks());
  return out;
}

}  // namespace eatformer
