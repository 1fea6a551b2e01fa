#include "handcraft/numcore/optim.hpp"

#include <cmath>

namespace handcraft::numcore {

OptimizerState make_optimizer_state(OptimizerKind kind,
                                    const std::vector<Tensor>& params,
                                    Scalar weight_decay, Scalar beta1,
                                    Scalar beta2, Scalar eps) {
  OptimizerState state;
  state.kind = kind;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  state.weight_decay = weight_decay;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void optimizer_step(OptimizerState& state, std::vector<Tensor>& params,
                    Scalar lr) {
  if (params.size() != state.first_moment.size())
    throw ShapeError("optimizer state built for a different parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (static_cast<Index>(state.first_moment[k].size()) != params[k].size())
      throw ShapeError("optimizer moment size mismatch on parameter " +
                       std::to_string(k));
    if (!params[k].has_grad())
      throw Error("optimizer_step before backward: parameter " +
                  std::to_string(k) + " has no grad");
    for (Scalar g : params[k].grad())
      if (!std::isfinite(g))
        throw NonFiniteError("gradient of parameter " + std::to_string(k));
  }

  state.step_count += 1;
  const Scalar t = static_cast<Scalar>(state.step_count);
  const Scalar b1 = state.beta1, b2 = state.beta2;
  const Scalar bc1 = 1.0 - std::pow(b1, t);
  const Scalar bc2 = 1.0 - std::pow(b2, t);

  // RAdam rectification (Liu et al. 2019): length of the approximated SMA.
  const Scalar rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const Scalar rho_t = rho_inf - 2.0 * t * std::pow(b2, t) / bc2;
  const bool rectify = state.kind == OptimizerKind::kRAdam;
  Scalar r_t = 1.0;
  if (rectify && rho_t > 4.0) {
    r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                    ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    auto grads = params[k].grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (state.weight_decay != 0.0)
        values[i] -= lr * state.weight_decay * values[i];
      const Scalar g = grads[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const Scalar m_hat = m[i] / bc1;
      if (state.kind == OptimizerKind::kAdam) {
        const Scalar v_hat = v[i] / bc2;
        values[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
      } else if (rho_t > 4.0) {
        const Scalar v_hat = v[i] / bc2;
        values[i] -= lr * r_t * m_hat / (std::sqrt(v_hat) + state.eps);
      } else {
        values[i] -= lr * m_hat;
      }
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (Tensor& p : params) p.clear_grad();
}

}  // namespace handcraft::numcore
