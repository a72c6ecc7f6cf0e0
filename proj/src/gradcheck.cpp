#include "poseformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "poseformer/rng.hpp"

namespace poseformer {

GradCheckReport finite_diff_check(ParameterStore<double>& params,
                                  const std::function<Var<double>()>& loss_fn, double tolerance,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;

  Var<double> loss = loss_fn();
  loss.backward();

  std::size_t total_scalars = 0;
  for (const auto& p : params.all()) {
    if (p.trainable) total_scalars += p.var.value().size();
  }
  const bool subsample = total_scalars > options.max_scalars;

  bool ok = true;
  std::uint64_t param_index = 0;
  for (auto& p : params.all()) {
    ++param_index;
    if (!p.trainable) continue;
    ParameterGradError entry;
    entry.name = p.name;
    entry.total = p.var.value().size();

    // Copy: later forward passes must not disturb the analytic reference.
    Tensor<double> analytic =
        p.var.has_grad() ? p.var.grad() : Tensor<double>(p.var.shape());

    std::vector<std::size_t> indices(entry.total);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (subsample) {
      const std::size_t keep = std::max<std::size_t>(
          1, entry.total * options.max_scalars / total_scalars);
      Rng rng(options.seed, "gradcheck", param_index);
      shuffle(indices, rng);
      indices.resize(std::min(keep, entry.total));
      std::sort(indices.begin(), indices.end());
    }

    double scale = 0.0;
    double* theta = p.var.mutable_value().raw();
    for (std::size_t idx : indices) {
      const double original = theta[idx];
      theta[idx] = original + options.step;
      const double up = loss_fn().value()[0];
      theta[idx] = original - options.step;
      const double down = loss_fn().value()[0];
      theta[idx] = original;

      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[idx];
      ++entry.checked;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ++entry.non_finite;
        continue;
      }
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_elementwise_rel = std::max(entry.max_elementwise_rel, abs_err / denom);
      scale = std::max({scale, std::abs(a), std::abs(numeric)});
    }
    entry.max_rel_error = entry.max_abs_error / std::max(scale, options.denominator_floor);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    ok = ok && entry.non_finite == 0 && entry.max_rel_error < tolerance;
    report.parameters.push_back(std::move(entry));
  }
  report.passed = ok;
  return report;
}

}  // namespace poseformer
