#pragma once

#include "microcl/net.hpp"

namespace microcl {

/// Classical (heavy-ball) momentum SGD state.
template <typename Scalar>
struct OptimizerState {
  ParamSet<Scalar> velocity;
  double learning_rate = 1e-4;
  double momentum = 0.9;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer(const ParamSet<Scalar>& params, double learning_rate, double momentum) {
  return {zeros_like(params), learning_rate, momentum};
}

/// v <- momentum * v + g;  p <- p - lr * v.  Parameters without a gradient
/// entry are left alone (their velocity still decays).
template <typename Scalar>
void sgd_momentum_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, OptimizerState<Scalar>& state);

/// theta_m <- alpha * theta_m + (1 - alpha) * theta, elementwise.
template <typename Scalar>
void ema_update(ParamSet<Scalar>& theta_m, const ParamSet<Scalar>& theta, double alpha);

}  // namespace microcl
