#pragma once

#include <cmath>
#include <functional>

#include "poseformer/autodiff.hpp"
#include "poseformer/rng.hpp"

namespace poseformer::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Central-difference gradient of a scalar function of one tensor, independent
// of the library's own gradient checker.
inline Tensor<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f, Tensor<double> x,
                                       double h = 1e-6) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Weighted sum with fixed pseudo-random weights: a scalar probe that exercises
// every output element with a distinct coefficient.
inline Var<double> probe(const Var<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed, "probe");
  Tensor<double> w(y.shape());
  for (double& v : w.data()) v = rng.normal();
  Var<double> weights(w);
  // sum(y * w) expressed with library ops: reshape to [1, n] and multiply by [n, 1]
  const std::size_t n = y.value().size();
  return ops::sum(ops::matmul(ops::reshape(y, Shape{1, n}), ops::reshape(weights, Shape{n, 1})));
}

inline double probe_value(const Tensor<double>& y, std::uint64_t seed = 99) {
  Rng rng(seed, "probe");
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * rng.normal();
  return s;
}

}  // namespace poseformer::testing
