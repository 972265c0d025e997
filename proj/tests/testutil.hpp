#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <functional>
#include <vector>

#include "eatformer/tensor.hpp"

namespace testutil {

using eatformer::Tensor;

/// Central finite-difference gradient check. `f` must rebuild the graph from
/// the given leaves on every call so the numeric probe never reuses stale
/// history. Error metric: |analytic - numeric| <= tol * max(1, |a|, |n|).
inline void gradcheck(const std::function<Tensor(std::vector<Tensor>&)>& f,
                      std::vector<Tensor> leaves, double tol = 1e-4, double step = 1e-5) {
  for (auto& leaf : leaves) leaf.set_requires_grad(true);
  Tensor loss = f(leaves);
  REQUIRE(loss.numel() == 1);
  for (auto& leaf : leaves) leaf.zero_grad();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    REQUIRE(analytic[li].size() == leaf.values().size());
    for (std::size_t i = 0; i < leaf.values().size(); ++i) {
      const double saved = leaf.values()[i];
      leaf.values()[i] = saved + step;
      const double up = f(leaves).item();
      leaf.values()[i] = saved - step;
      const double down = f(leaves).item();
      leaf.values()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[li][i];
      const double scale = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      INFO("leaf " << li << " element " << i << ": analytic " << a << " numeric " << numeric);
      REQUIRE(std::fabs(a - numeric) <= tol * scale);
    }
  }
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace testutil
