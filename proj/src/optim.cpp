#include "microcl/optim.hpp"

#include <stdexcept>

namespace microcl {

template <typename Scalar>
void sgd_momentum_step(ParamSet<Scalar>& params, const ParamSet<Scalar>& grads, OptimizerState<Scalar>& state) {
  require_same_layout(params, state.velocity, "sgd_momentum_step (velocity)");
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
    if (g.weight.shape() != it->second.weight.shape() || g.bias.shape() != it->second.bias.shape())
      throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
    if (!g.weight.all_finite() || !g.bias.all_finite())
      throw std::runtime_error("non-finite gradient for '" + name + "'");
  }
  const auto mu = static_cast<Scalar>(state.momentum);
  const auto lr = static_cast<Scalar>(state.learning_rate);
  for (auto& [name, p] : params) {
    auto& v = state.velocity.at(name);
    v.weight.vec() *= mu;
    v.bias.vec() *= mu;
    if (const auto g = grads.find(name); g != grads.end()) {
      v.weight.vec() += g->second.weight.vec();
      v.bias.vec() += g->second.bias.vec();
    }
    p.weight.vec() -= lr * v.weight.vec();
    p.bias.vec() -= lr * v.bias.vec();
  }
}

template <typename Scalar>
void ema_update(ParamSet<Scalar>& theta_m, const ParamSet<Scalar>& theta, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("EMA alpha must lie in [0, 1]");
  require_same_layout(theta_m, theta, "ema_update");
  // Written as m + (1 - alpha)(theta - m) so that theta_m == theta is an exact
  // fixed point; alpha == 0 copies outright.
  const auto take = static_cast<Scalar>(1.0 - alpha);
  for (auto& [name, m] : theta_m) {
    const auto& p = theta.at(name);
    if (alpha == 0.0) {
      m = p;
      continue;
    }
    m.weight.vec() += take * (p.weight.vec() - m.weight.vec());
    m.bias.vec() += take * (p.bias.vec() - m.bias.vec());
  }
}

template void sgd_momentum_step(ParamSet<float>&, const ParamSet<float>&, OptimizerState<float>&);
template void sgd_momentum_step(ParamSet<double>&, const ParamSet<double>&, OptimizerState<double>&);
template void ema_update(ParamSet<float>&, const ParamSet<float>&, double);
template void ema_update(ParamSet<double>&, const ParamSet<double>&, double);

}  // namespace microcl
