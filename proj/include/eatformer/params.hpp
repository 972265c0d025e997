#pragma once

#include <string>
#include <vector>

#include "eatformer/tensor.hpp"

namespace eatformer {

/// Named handle to a module tensor. Buffers (trainable == false) are carried
/// through checkpoints but skipped by the optimizer.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

using ParamList = std::vector<ParamRef>;

inline void add_param(ParamList& out, const std::string& name, const Tensor& t,
                      bool trainable = true) {
  out.push_back({name, t, trainable});
}

inline std::int64_t count_trainable(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& p : params)
    if (p.trainable) n += p.tensor.numel();
  return n;
}

}  // namespace eatformer
