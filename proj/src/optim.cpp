#include "mdgr/optim.hpp"

#include <cmath>

namespace mdgr {

template <class T>
void adam_step(ParameterSet<T>& params, const ParameterSet<T>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  require(params.same_layout(grads), ErrorKind::kShapeMismatch,
          "adam_step: gradients do not match parameter layout");
  require(params.same_layout(state.first_moment) && params.same_layout(state.second_moment),
          ErrorKind::kShapeMismatch, "adam_step: optimizer moments do not match parameters");
  require(cfg.lr > 0.0, ErrorKind::kInvalidArgument, "adam_step: learning rate must be positive");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& w = params.at(p);
    const Tensor<T>& g = grads.at(p);
    Tensor<T>& m = state.first_moment.at(p);
    Tensor<T>& v = state.second_moment.at(p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      w[i] = static_cast<T>(w[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

template void adam_step<float>(ParameterSet<float>&, const ParameterSet<float>&,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ParameterSet<double>&, const ParameterSet<double>&,
                                AdamState<double>&, const AdamConfig&);

}  // namespace mdgr
