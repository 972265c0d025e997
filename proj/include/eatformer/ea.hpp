#pragma once

#include <functional>
#include <limits>

#include "eatformer/rng.hpp"
#include "eatformer/tensor.hpp"

namespace eatformer::ea {

/// Population state for the naive evolutionary operators: L individuals of D
/// features, per-feature mutation scale bounds, and operator constants.
struct Population {
  std::int64_t individuals = 0;  // L
  std::int64_t features = 0;     // D
  std::vector<double> data;      // row-major L x D
  std::vector<double> fitness;   // length L
  double crossover_rate = 0.9;   // CR in [0, 1]
  double mutation_rate = 0.1;    // MU in [0, 1]
  std::vector<double> lower_scale, upper_scale;  // per-feature bounds

  static Population random(std::int64_t L, std::int64_t D, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
    Population p;
    p.individuals = L;
    p.features = D;
    p.data.resize(static_cast<std::size_t>(L * D));
    for (auto& v : p.data) v = rng.uniform(lo, hi);
    p.fitness.assign(L, std::numeric_limits<double>::infinity());
    p.lower_scale.assign(D, 0.9);
    p.upper_scale.assign(D, 1.1);
    return p;
  }

  const double* row(std::int64_t i) const { return data.data() + i * features; }
  double* row(std::int64_t i) { return data.data() + i * features; }

  void validate() const {
    eatformer::detail::check(crossover_rate >= 0.0 && crossover_rate <= 1.0, "CR must lie in [0, 1]");
    eatformer::detail::check(mutation_rate >= 0.0 && mutation_rate <= 1.0, "MU must lie in [0, 1]");
    eatformer::detail::check(lower_scale.size() == static_cast<std::size_t>(features) &&
                      upper_scale.size() == static_cast<std::size_t>(features),
                  "scale bounds must have one entry per feature");
    for (std::int64_t d = 0; d < features; ++d)
      eatformer::detail::check(lower_scale[d] <= upper_scale[d],
                    "lower scale bound exceeds upper at feature " + std::to_string(d));
  }
};

/// Record of one crossover draw: the donor index and the per-gene selection
/// mask (1 = gene taken from the donor).
struct CrossoverTrace {
  std::int64_t parent = 0;
  std::int64_t donor = 0;
  std::vector<double> mask;
};

namespace detail {

inline std::vector<double> crossover_genes(const double* parent, const double* donor,
                                           std::int64_t D, double cr, Rng& rng,
                                           std::vector<double>& mask) {
  std::vector<double> child(D);
  mask.assign(D, 0.0);
  for (std::int64_t d = 0; d < D; ++d) {
    if (rng.uniform() <= cr) {
      child[d] = donor[d];
      mask[d] = 1.0;
    } else {
      child[d] = parent[d];
    }
  }
  return child;
}

inline std::vector<double> mutate_genes(const double* parent, std::int64_t D, double mu,
                                        const std::vector<double>& lo,
                                        const std::vector<double>& hi, Rng& rng,
                                        std::vector<double>& weights) {
  std::vector<double> child(D);
  weights.assign(D, 1.0);
  for (std::int64_t d = 0; d < D; ++d) {
    if (rng.uniform() <= mu) weights[d] = rng.uniform(lo[d], hi[d]);
    child[d] = weights[d] * parent[d];
  }
  return child;
}

}  // namespace detail

/// Crossover of individual i with a uniformly drawn donor j != i: each gene
/// comes from the donor with probability CR. Returns the offspring and the
/// trace needed to replay it as an attention form.
inline std::pair<std::vector<double>, CrossoverTrace> crossover(const Population& pop,
                                                                std::int64_t i, Rng& rng) {
  pop.validate();
  eatformer::detail::check(pop.individuals >= 2, "crossover needs a population of at least 2");
  eatformer::detail::check(i >= 0 && i < pop.individuals, "individual index out of range");
  std::int64_t j = static_cast<std::int64_t>(rng.uniform_index(pop.individuals - 1));
  if (j >= i) ++j;  // uniform over the L-1 others
  CrossoverTrace trace;
  trace.parent = i;
  trace.donor = j;
  auto child = detail::crossover_genes(pop.row(i), pop.row(j), pop.features,
                                        pop.crossover_rate, rng, trace.mask);
  return {std::move(child), std::move(trace)};
}

/// Replays a traced crossover as a sparse attention sum: offspring =
/// sum_l x_l W_l where W_parent = diag(1 - mask), W_donor = diag(mask) and
/// every other individual contributes a zero matrix. Evaluated literally so
/// the result is bit-identical to the selection form.
inline std::vector<double> crossover_as_attention(const Population& pop,
                                                  const CrossoverTrace& trace) {
  const std::int64_t L = pop.individuals, D = pop.features;
  std::vector<double> diag(static_cast<std::size_t>(L * D), 0.0);
  for (std::int64_t d = 0; d < D; ++d) {
    diag[trace.parent * D + d] = 1.0 - trace.mask[d];
    diag[trace.donor * D + d] = trace.mask[d];
  }
  std::vector<double> out(D, 0.0);
  for (std::int64_t l = 0; l < L; ++l)
    for (std::int64_t d = 0; d < D; ++d) out[d] += pop.row(l)[d] * diag[l * D + d];
  return out;
}

/// Mutation of individual i: each gene is rescaled by a uniform draw from
/// its bounds with probability MU, otherwise kept (weight 1). Returns the
/// mutant and the realized per-gene weight vector.
inline std::pair<std::vector<double>, std::vector<double>> mutation(const Population& pop,
                                                                    std::int64_t i, Rng& rng) {
  pop.validate();
  eatformer::detail::check(i >= 0 && i < pop.individuals, "individual index out of range");
  std::vector<double> weights;
  auto child = detail::mutate_genes(pop.row(i), pop.features, pop.mutation_rate,
                                     pop.lower_scale, pop.upper_scale, rng, weights);
  return {std::move(child), std::move(weights)};
}

/// Replays a mutation as a diagonal matrix product x diag(w), evaluated as a
/// full D x D mat-vec so the linear-map form is exercised literally.
inline std::vector<double> mutation_as_linear(const std::vector<double>& x,
                                              const std::vector<double>& weights) {
  eatformer::detail::check(x.size() == weights.size(), "mutation weights must match the gene count");
  const std::int64_t D = static_cast<std::int64_t>(x.size());
  std::vector<double> m(static_cast<std::size_t>(D * D), 0.0);
  for (std::int64_t d = 0; d < D; ++d) m[d * D + d] = weights[d];
  std::vector<double> out(D, 0.0);
  for (std::int64_t r = 0; r < D; ++r)
    for (std::int64_t c = 0; c < D; ++c) out[c] += x[r] * m[r * D + c];
  return out;
}

struct GenerationStats {
  std::int64_t generation = 0;
  double best_fitness = 0.0;
  double mean_fitness = 0.0;
};

using Objective = std::function<double(const std::vector<double>&)>;

/// Greedy elitist evolution loop: per individual, crossover then mutation
/// produce a candidate which replaces its parent only when it is at least as
/// fit (minimization). Returns per-generation best/mean fitness, entry 0
/// being the initial population.
inline std::vector<GenerationStats> evolve(Population& pop, std::int64_t generations,
                                           const Objective& objective, Rng& rng) {
  pop.validate();
  eatformer::detail::check(pop.individuals >= 2, "evolve needs a population of at least 2");
  std::vector<double> child;
  std::vector<GenerationStats> history;
  auto eval_all = [&] {
    for (std::int64_t i = 0; i < pop.individuals; ++i) {
      std::vector<double> x(pop.row(i), pop.row(i) + pop.features);
      pop.fitness[i] = objective(x);
    }
  };
  auto record = [&](std::int64_t gen) {
    GenerationStats s;
    s.generation = gen;
    s.best_fitness = pop.fitness[0];
    s.mean_fitness = 0.0;
    for (double f : pop.fitness) {
      s.best_fitness = std::min(s.best_fitness, f);
      s.mean_fitness += f / static_cast<double>(pop.individuals);
    }
    history.push_back(s);
  };
  eval_all();
  record(0);
  for (std::int64_t g = 1; g <= generations; ++g) {
    for (std::int64_t i = 0; i < pop.individuals; ++i) {
      auto [crossed, trace] = crossover(pop, i, rng);
      std::vector<double> weights;
      child = detail::mutate_genes(crossed.data(), pop.features, pop.mutation_rate,
                                    pop.lower_scale, pop.upper_scale, rng, weights);
      const double f = objective(child);
      if (f <= pop.fitness[i]) {
        std::copy(child.begin(), child.end(), pop.row(i));
        pop.fitness[i] = f;
      }
    }
    record(g);
  }
  return history;
}

inline std::string history_to_csv(const std::vector<GenerationStats>& history) {
  std::ostringstream os;
  os << "generation,best_fitness,mean_fitness\n";
  for (const auto& s : history)
    os << s.generation << "," << s.best_fitness << "," << s.mean_fitness << "\n";
  return os.str();
}

}  // namespace eatformer::ea
