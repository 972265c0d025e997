#pragma once

#include <unordered_map>

#include "eatformer/params.hpp"

namespace eatformer {

/// Adam with decoupled weight decay. Parameters whose gradient buffer is
/// empty are treated as zero-gradient (they still decay).
class AdamW {
 public:
  struct Opts {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-2;
  };

  AdamW() = default;
  explicit AdamW(const Opts& opts) : opts_(opts) {}

  const Opts& opts() const { return opts_; }
  Opts& opts() { return opts_; }

  void step(ParamList& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (auto& p : params) {
      if (!p.trainable) continue;
      auto& st = state_[p.tensor.node().get()];
      auto& value = p.tensor.values();
      const auto& grad = p.tensor.grad();
      if (st.m.size() != value.size()) {
        st.m.assign(value.size(), 0.0);
        st.v.assign(value.size(), 0.0);
      }
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        value[i] -= opts_.lr * opts_.weight_decay * value[i];
        st.m[i] = opts_.beta1 * st.m[i] + (1.0 - opts_.beta1) * g;
        st.v[i] = opts_.beta2 * st.v[i] + (1.0 - opts_.beta2) * g * g;
        value[i] -= opts_.lr * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + opts_.eps);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };

  Opts opts_;
  std::int64_t t_ = 0;
  std::unordered_map<const detail::Node*, State> state_;
};

inline void zero_grads(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace eatformer
