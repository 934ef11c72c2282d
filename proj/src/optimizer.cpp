#include "hmexpr/optimizer.hpp"

#include <cmath>
#include <string>

#include "hmexpr/errors.hpp"

namespace hmexpr {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer: " + std::string(name));
}

std::string_view optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerState make_optimizer(OptimizerKind kind, double learning_rate) {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  OptimizerState s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  return s;
}

void apply_update(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const Tensor* p = params.find(grads.name(i));
    if (!p) throw ConfigError("gradient for unknown parameter: " + grads.name(i));
    if (p->shape() != grads.tensor(i).shape())
      throw ShapeError("gradient shape mismatch for " + grads.name(i));
    if (!grads.tensor(i).all_finite()) throw NumericError("non-finite gradient for " + grads.name(i));
  }
  ++state.step;
  const double lr = state.learning_rate;
  if (state.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto p = params.at(grads.name(i)).data();
      auto g = grads.tensor(i).data();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
    }
    return;
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const std::string& name = grads.name(i);
    if (!state.first_moment.contains(name)) {
      state.first_moment.add(name, Tensor(grads.tensor(i).shape()));
      state.second_moment.add(name, Tensor(grads.tensor(i).shape()));
    }
    auto p = params.at(name).data();
    auto g = grads.tensor(i).data();
    auto m = state.first_moment.at(name).data();
    auto v = state.second_moment.at(name).data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.epsilon);
    }
  }
}

}  // namespace hmexpr
