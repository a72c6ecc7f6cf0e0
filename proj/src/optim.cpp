#include "poseformer/optim.hpp"

#include <cmath>

namespace poseformer {

template <typename T>
OptimizerState<T> make_optimizer_state(const ParameterStore<T>& params, double lr,
                                       double weight_decay) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  OptimizerState<T> state;
  state.lr = lr;
  state.weight_decay = weight_decay;
  for (const auto& p : params.all()) {
    state.m.emplace_back(p.var.shape());
    state.v.emplace_back(p.var.shape());
  }
  return state;
}

template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state) {
  auto& all = params.all();
  if (state.m.size() != all.size() || state.v.size() != all.size()) {
    throw UsageError("optimizer state tracks " + std::to_string(state.m.size()) +
                     " parameters, store has " + std::to_string(all.size()));
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (state.m[i].shape() != all[i].var.shape() || state.v[i].shape() != all[i].var.shape()) {
      throw UsageError("optimizer moment shape mismatch for '" + all[i].name + "'");
    }
    if (all[i].trainable && !all[i].var.has_grad()) {
      throw UsageError("trainable parameter '" + all[i].name + "' has no gradient");
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - state.lr * state.weight_decay;

  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!all[i].trainable) continue;
    T* theta = all[i].var.mutable_value().raw();
    const T* g = all[i].var.grad().raw();
    T* m = state.m[i].raw();
    T* v = state.v[i].raw();
    for (std::size_t j = 0, n = state.m[i].size(); j < n; ++j) {
      const double gj = g[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / bc1;
      const double vhat = vj / bc2;
      const double updated = theta[j] * decay - state.lr * mhat / (std::sqrt(vhat) + state.eps);
      theta[j] = static_cast<T>(updated);
    }
  }
}

template OptimizerState<float> make_optimizer_state(const ParameterStore<float>&, double, double);
template OptimizerState<double> make_optimizer_state(const ParameterStore<double>&, double, double);
template void adam_step(ParameterStore<float>&, OptimizerState<float>&);
template void adam_step(ParameterStore<double>&, OptimizerState<double>&);

}  // namespace poseformer
