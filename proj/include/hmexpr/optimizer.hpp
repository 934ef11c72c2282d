#pragma once

#include <cstdint>
#include <string_view>

#include "hmexpr/param_set.hpp"

namespace hmexpr {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamSet first_moment;   // adam only, lazily shaped like the parameters
  ParamSet second_moment;
};

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate);

/// One descent step. Only parameters present in `grads` are updated; every
/// gradient must name an existing parameter of the same shape.
void apply_update(ParamSet& params, const ParamSet& grads, OptimizerState& state);

}  // namespace hmexpr
