#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "poseformer/parameters.hpp"

namespace poseformer {

struct GradCheckOptions {
  double step = 1e-5;               // central-difference half-width h
  std::size_t max_scalars = 10000;  // above this, a deterministic subsample is checked
  std::uint64_t seed = 0;           // drives the subsample
  double denominator_floor = 1e-6;  // lower bound on the gradient scale of a parameter
};

struct ParameterGradError {
  std::string name;
  std::size_t checked = 0;
  std::size_t total = 0;
  double max_rel_error = 0.0;          // max |analytic - numeric| over the parameter's gradient scale
  double max_abs_error = 0.0;
  double max_elementwise_rel = 0.0;    // max |a - n| / max(|a|, |n|, floor); noisy where gradients vanish
  std::size_t non_finite = 0;
};

struct GradCheckReport {
  std::vector<ParameterGradError> parameters;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// (f(theta + h) - f(theta - h)) / 2h for every trainable scalar of `params`.
/// A parameter's relative error is its largest absolute discrepancy divided by
/// the largest gradient magnitude (analytic or numeric) among its checked
/// scalars, so entries whose gradient is near zero are judged against the
/// scale of the tensor rather than against finite-difference roundoff.
/// `loss_fn` must be a deterministic function of the parameter values. Non-finite
/// differences are counted per parameter and fail the check without throwing.
GradCheckReport finite_diff_check(ParameterStore<double>& params,
                                  const std::function<Var<double>()>& loss_fn, double tolerance,
                                  const GradCheckOptions& options = {});

}  // namespace poseformer
