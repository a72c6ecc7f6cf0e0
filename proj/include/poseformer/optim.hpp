#pragma once

#include <cstdint>
#include <vector>

#include "poseformer/parameters.hpp"

namespace poseformer {

/// Adam moments for every parameter of a store (index-aligned with
/// `ParameterStore::all()`), plus the step counter and hyperparameters.
template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Zero moments shaped like `params`.
template <typename T>
OptimizerState<T> make_optimizer_state(const ParameterStore<T>& params, double lr,
                                       double weight_decay);

/// One bias-corrected Adam update with weight decay decoupled from the moment
/// estimates: theta <- theta * (1 - lr * wd) - lr * mhat / (sqrt(vhat) + eps).
/// Throws UsageError when a trainable parameter carries no gradient.
template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state);

}  // namespace poseformer
