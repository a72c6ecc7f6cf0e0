#include "poseformer/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "gemm.hpp"

namespace poseformer {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  Tensor<T>& buf = grad_buffer();
  T* dst = buf.raw();
  const T* src = g.raw();
  for (std::size_t i = 0, n = buf.size(); i < n; ++i) dst[i] += src[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(T{0});
}

template <typename T>
void Var<T>::backward() {
  if (!node_) throw UsageError("backward() on an undefined value");
  if (node_->value.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad || !node_->backward_fn) {
    throw UsageError("backward() on a tensor with no recorded graph");
  }

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->grad.empty()) {
      n->grad = Tensor<T>(n->value.shape());
    } else {
      n->grad.fill(T{0});
    }
  }
  node_->grad[0] = T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;

namespace ops {
namespace {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<const Var<T>*> inputs, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled()) {
    for (const Var<T>* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    for (const Var<T>* in : inputs) node->parents.push_back(in->defined() ? in->node() : nullptr);
    node->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
bool wants(const Node<T>& self, std::size_t i) {
  const auto& p = self.parents[i];
  return p && p->requires_grad;
}

template <typename T>
const Tensor<T>& parent_value(const Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

void require(bool cond, const std::string& message) {
  if (!cond) throw DimensionError(message);
}

Shape replace_last(Shape s, std::size_t extent) {
  s.back() = extent;
  return s;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() >= 2 && bs.size() >= 2,
          "matmul needs rank >= 2 operands, got " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t k = as.back();
  require(bs[bs.size() - 2] == k,
          "matmul inner extents differ: " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t n = bs.back();

  if (bs.size() == 2) {
    return linear(a, b, Var<T>());
  }

  require(as.size() == bs.size() && std::equal(as.begin(), as.end() - 2, bs.begin()),
          "batched matmul needs equal leading extents: " + shape_str(as) + " x " + shape_str(bs));
  const std::size_t m = as[as.size() - 2];
  const std::size_t batch = a.value().size() / (m * k);
  Tensor<T> out(replace_last(as, n));
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(false, false, m, n, k, a.value().raw() + i * m * k, b.value().raw() + i * k * n,
                 out.raw() + i * m * n, false);
  }
  return make_result<T>(std::move(out), {&a, &b}, [m, n, k, batch](Node<T>& self) {
    const T* dc = self.grad.raw();
    if (wants(self, 0)) {
      Tensor<T>& da = self.parents[0]->grad_buffer();
      const T* bv = parent_value(self, 1).raw();
      for (std::size_t i = 0; i < batch; ++i) {
        detail::gemm(false, true, m, k, n, dc + i * m * n, bv + i * k * n, da.raw() + i * m * k, true);
      }
    }
    if (wants(self, 1)) {
      Tensor<T>& db = self.parents[1]->grad_buffer();
      const T* av = parent_value(self, 0).raw();
      for (std::size_t i = 0; i < batch; ++i) {
        detail::gemm(true, false, k, n, m, av + i * m * k, dc + i * m * n, db.raw() + i * k * n, true);
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(ws.size() == 2 && xs.back() == ws[0],
          "linear shape mismatch: " + shape_str(xs) + " x " + shape_str(ws));
  const std::size_t k = ws[0];
  const std::size_t n = ws[1];
  if (bias.defined()) {
    require(bias.shape() == Shape{n},
            "linear bias shape " + shape_str(bias.shape()) + " does not match output width " +
                std::to_string(n));
  }
  const std::size_t rows = x.value().size() / k;
  Tensor<T> out(replace_last(xs, n));
  detail::gemm(false, false, rows, n, k, x.value().raw(), w.value().raw(), out.raw(), false);
  if (bias.defined()) {
    const T* bv = bias.value().raw();
    T* o = out.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < n; ++j) o[r * n + j] += bv[j];
    }
  }
  return make_result<T>(std::move(out), {&x, &w, &bias}, [rows, n, k](Node<T>& self) {
    const T* dc = self.grad.raw();
    if (wants(self, 0)) {
      detail::gemm(false, true, rows, k, n, dc, parent_value(self, 1).raw(),
                   self.parents[0]->grad_buffer().raw(), true);
    }
    if (wants(self, 1)) {
      detail::gemm(true, false, k, n, rows, parent_value(self, 0).raw(), dc,
                   self.parents[1]->grad_buffer().raw(), true);
    }
    if (wants(self, 2)) {
      T* db = self.parents[2]->grad_buffer().raw();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) db[j] += dc[r * n + j];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(),
          "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out = a.value();
  T* o = out.raw();
  const T* bv = b.value().raw();
  for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] += bv[i];
  return make_result<T>(std::move(out), {&a, &b}, [](Node<T>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& b) {
  const Shape& xs = x.shape();
  const Shape& bs = b.shape();
  require(bs.size() <= xs.size() && std::equal(bs.rbegin(), bs.rend(), xs.rbegin()),
          "broadcast add needs trailing extents " + shape_str(bs) + " in " + shape_str(xs));
  const std::size_t inner = b.value().size();
  const std::size_t outer = x.value().size() / inner;
  Tensor<T> out = x.value();
  T* o = out.raw();
  const T* bv = b.value().raw();
  for (std::size_t r = 0; r < outer; ++r) {
    for (std::size_t j = 0; j < inner; ++j) o[r * inner + j] += bv[j];
  }
  return make_result<T>(std::move(out), {&x, &b}, [outer, inner](Node<T>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      T* db = self.parents[1]->grad_buffer().raw();
      const T* g = self.grad.raw();
      for (std::size_t r = 0; r < outer; ++r) {
        for (std::size_t j = 0; j < inner; ++j) db[j] += g[r * inner + j];
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v *= factor;
  return make_result<T>(std::move(out), {&x}, [factor](Node<T>& self) {
    if (!wants(self, 0)) return;
    T* dx = self.parents[0]->grad_buffer().raw();
    const T* g = self.grad.raw();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) dx[i] += factor * g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total{0};
  for (T v : x.value().data()) total += v;
  return make_result<T>(Tensor<T>({1}, std::vector<T>{total}), {&x}, [](Node<T>& self) {
    if (!wants(self, 0)) return;
    const T g = self.grad[0];
    for (T& d : self.parents[0]->grad_buffer().data()) d += g;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {&x}, [](Node<T>& self) {
    if (!wants(self, 0)) return;
    T* dx = self.parents[0]->grad_buffer().raw();
    const T* g = self.grad.raw();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) dx[i] += g[i];
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.value().size() / d;
  Tensor<T> out(x.shape());
  const T* xv = x.value().raw();
  T* o = out.raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T* orow = o + r * d;
    const T mx = *std::max_element(xr, xr + d);
    T total{0};
    for (std::size_t j = 0; j < d; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      total += orow[j];
    }
    const T inv = T{1} / total;
    for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
  }
  return make_result<T>(std::move(out), {&x}, [rows, d](Node<T>& self) {
    if (!wants(self, 0)) return;
    T* dx = self.parents[0]->grad_buffer().raw();
    const T* y = self.value.raw();
    const T* g = self.grad.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm affine shape must be [" + std::to_string(d) + "], got " +
              shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
  const std::size_t rows = x.value().size() / d;
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(rows);
  Tensor<T> out(x.shape());
  const T* xv = x.value().raw();
  const T* gv = gamma.value().raw();
  const T* bv = beta.value().raw();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result<T>(
      std::move(out), {&x, &gamma, &beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const T* g = self.grad.raw();
        const T* h = xhat.raw();
        if (wants(self, 0)) {
          T* dx = self.parents[0]->grad_buffer().raw();
          const T* gam = parent_value(self, 1).raw();
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_g{0};
            T mean_gh{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T gj = g[r * d + j] * gam[j];
              mean_g += gj;
              mean_gh += gj * h[r * d + j];
            }
            mean_g *= inv_d;
            mean_gh *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const T gj = g[r * d + j] * gam[j];
              dx[r * d + j] += rstd[r] * (gj - mean_g - h[r * d + j] * mean_gh);
            }
          }
        }
        if (wants(self, 1)) {
          T* dg = self.parents[1]->grad_buffer().raw();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * h[r * d + j];
          }
        }
        if (wants(self, 2)) {
          T* db = self.parents[2]->grad_buffer().raw();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
          }
        }
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  Tensor<T> out(x.shape());
  const T* xv = x.value().raw();
  for (std::size_t i = 0, n = out.size(); i < n; ++i) {
    out[i] = T(0.5) * xv[i] * (T{1} + std::erf(xv[i] * inv_sqrt2));
  }
  return make_result<T>(std::move(out), {&x}, [inv_sqrt2](Node<T>& self) {
    if (!wants(self, 0)) return;
    const T inv_sqrt_2pi = static_cast<T>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    const T* xv = parent_value(self, 0).raw();
    const T* g = self.grad.raw();
    T* dx = self.parents[0]->grad_buffer().raw();
    for (std::size_t i = 0, n = self.grad.size(); i < n; ++i) {
      const T cdf = T(0.5) * (T{1} + std::erf(xv[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
      dx[i] += g[i] * (cdf + xv[i] * pdf);
    }
  });
}

template <typename T>
Var<T> attention_heads(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                       Tensor<T>* probs_out) {
  const Shape& qs = q.shape();
  require(qs.size() == 3, "attention expects [B, N, dim] inputs, got " + shape_str(qs));
  require(k.shape() == qs && v.shape() == qs,
          "attention Q/K/V shapes differ: " + shape_str(qs) + ", " + shape_str(k.shape()) + ", " +
              shape_str(v.shape()));
  const std::size_t batch = qs[0];
  const std::size_t n = qs[1];
  const std::size_t dim = qs[2];
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embedding width " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t d = dim / heads;
  const T scale_factor = T{1} / std::sqrt(static_cast<T>(d));

  Tensor<T> probs({batch, heads, n, n});
  Tensor<T> out(qs);
  const T* qv = q.value().raw();
  const T* kv = k.value().raw();
  const T* vv = v.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.raw() + ((b * heads + h) * n) * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = qv + (b * n + i) * dim + h * d;
        T* prow = p + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          const T* kj = kv + (b * n + j) * dim + h * d;
          T s{0};
          for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
          prow[j] = s * scale_factor;
          mx = std::max(mx, prow[j]);
        }
        T total{0};
        for (std::size_t j = 0; j < n; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          total += prow[j];
        }
        const T inv = T{1} / total;
        for (std::size_t j = 0; j < n; ++j) prow[j] *= inv;

        T* oi = out.raw() + (b * n + i) * dim + h * d;
        for (std::size_t j = 0; j < n; ++j) {
          const T* vj = vv + (b * n + j) * dim + h * d;
          const T pj = prow[j];
          for (std::size_t c = 0; c < d; ++c) oi[c] += pj * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = probs;

  return make_result<T>(
      std::move(out), {&q, &k, &v},
      [batch, n, dim, d, heads, scale_factor, probs = std::move(probs)](Node<T>& self) {
        const T* qv = parent_value(self, 0).raw();
        const T* kv = parent_value(self, 1).raw();
        const T* vv = parent_value(self, 2).raw();
        const T* go = self.grad.raw();
        T* dq = wants(self, 0) ? self.parents[0]->grad_buffer().raw() : nullptr;
        T* dk = wants(self, 1) ? self.parents[1]->grad_buffer().raw() : nullptr;
        T* dv = wants(self, 2) ? self.parents[2]->grad_buffer().raw() : nullptr;
        std::vector<T> ds(n * n);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.raw() + ((b * heads + h) * n) * n;
            // dP = dO V^T, then softmax backward into dS (already scaled).
            for (std::size_t i = 0; i < n; ++i) {
              const T* goi = go + (b * n + i) * dim + h * d;
              T dot{0};
              for (std::size_t j = 0; j < n; ++j) {
                const T* vj = vv + (b * n + j) * dim + h * d;
                T s{0};
                for (std::size_t c = 0; c < d; ++c) s += goi[c] * vj[c];
                ds[i * n + j] = s;
                dot += s * p[i * n + j];
              }
              for (std::size_t j = 0; j < n; ++j) {
                ds[i * n + j] = p[i * n + j] * (ds[i * n + j] - dot) * scale_factor;
              }
            }
            if (dv) {
              for (std::size_t i = 0; i < n; ++i) {
                const T* goi = go + (b * n + i) * dim + h * d;
                for (std::size_t j = 0; j < n; ++j) {
                  T* dvj = dv + (b * n + j) * dim + h * d;
                  const T pij = p[i * n + j];
                  for (std::size_t c = 0; c < d; ++c) dvj[c] += pij * goi[c];
                }
              }
            }
            if (dq) {
              for (std::size_t i = 0; i < n; ++i) {
                T* dqi = dq + (b * n + i) * dim + h * d;
                for (std::size_t j = 0; j < n; ++j) {
                  const T* kj = kv + (b * n + j) * dim + h * d;
                  const T s = ds[i * n + j];
                  for (std::size_t c = 0; c < d; ++c) dqi[c] += s * kj[c];
                }
              }
            }
            if (dk) {
              for (std::size_t i = 0; i < n; ++i) {
                const T* qi = qv + (b * n + i) * dim + h * d;
                for (std::size_t j = 0; j < n; ++j) {
                  T* dkj = dk + (b * n + j) * dim + h * d;
                  const T s = ds[i * n + j];
                  for (std::size_t c = 0; c < d; ++c) dkj[c] += s * qi[c];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> weighted_sum_axis1(const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x.shape();
  require(xs.size() == 3, "weighted_sum_axis1 expects [B, F, D], got " + shape_str(xs));
  const std::size_t batch = xs[0];
  const std::size_t frames = xs[1];
  const std::size_t d = xs[2];
  require(w.shape() == Shape{frames},
          "frame weights " + shape_str(w.shape()) + " do not match " + std::to_string(frames) +
              " frames");
  Tensor<T> out({batch, d});
  const T* xv = x.value().raw();
  const T* wv = w.value().raw();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < frames; ++f) {
      const T* xr = xv + (b * frames + f) * d;
      T* o = out.raw() + b * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += wv[f] * xr[j];
    }
  }
  return make_result<T>(std::move(out), {&x, &w}, [batch, frames, d](Node<T>& self) {
    const T* g = self.grad.raw();
    if (wants(self, 0)) {
      const T* wv = parent_value(self, 1).raw();
      T* dx = self.parents[0]->grad_buffer().raw();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < frames; ++f) {
          for (std::size_t j = 0; j < d; ++j) dx[(b * frames + f) * d + j] += wv[f] * g[b * d + j];
        }
      }
    }
    if (wants(self, 1)) {
      const T* xv = parent_value(self, 0).raw();
      T* dw = self.parents[1]->grad_buffer().raw();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t f = 0; f < frames; ++f) {
          T s{0};
          for (std::size_t j = 0; j < d; ++j) s += xv[(b * frames + f) * d + j] * g[b * d + j];
          dw[f] += s;
        }
      }
    }
  });
}

template <typename T>
Var<T> mean_axis1(const Var<T>& x) {
  const Shape& xs = x.shape();
  require(xs.size() == 3, "mean_axis1 expects [B, F, D], got " + shape_str(xs));
  Var<T> uniform(Tensor<T>({xs[1]}, T{1} / static_cast<T>(xs[1])), false);
  return weighted_sum_axis1(x, uniform);
}

template <typename T>
Var<T> scale_rows(const Var<T>& x, std::vector<T> mask) {
  const std::size_t rows = x.shape().front();
  require(mask.size() == rows, "row mask length " + std::to_string(mask.size()) +
                                   " does not match leading extent " + std::to_string(rows));
  const std::size_t inner = x.value().size() / rows;
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] *= mask[r];
  }
  return make_result<T>(std::move(out), {&x}, [rows, inner, mask = std::move(mask)](Node<T>& self) {
    if (!wants(self, 0)) return;
    T* dx = self.parents[0]->grad_buffer().raw();
    const T* g = self.grad.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < inner; ++j) dx[r * inner + j] += mask[r] * g[r * inner + j];
    }
  });
}

template <typename T>
Var<T> mpjpe_loss(const Var<T>& pred, const Var<T>& gt, T smoothing) {
  require(pred.shape() == gt.shape(), "mpjpe shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                          shape_str(gt.shape()));
  require(pred.shape().back() == 3, "mpjpe expects [..., J, 3], got " + shape_str(pred.shape()));
  const std::size_t joints = pred.value().size() / 3;
  std::vector<T> norms(joints);
  const T* p = pred.value().raw();
  const T* g = gt.value().raw();
  T total{0};
  for (std::size_t j = 0; j < joints; ++j) {
    const T dx = p[3 * j] - g[3 * j];
    const T dy = p[3 * j + 1] - g[3 * j + 1];
    const T dz = p[3 * j + 2] - g[3 * j + 2];
    norms[j] = std::sqrt(dx * dx + dy * dy + dz * dz + smoothing);
    total += norms[j];
  }
  const T loss = total / static_cast<T>(joints);
  return make_result<T>(
      Tensor<T>({1}, std::vector<T>{loss}), {&pred, &gt},
      [joints, norms = std::move(norms)](Node<T>& self) {
        const T scale_factor = self.grad[0] / static_cast<T>(joints);
        const T* p = parent_value(self, 0).raw();
        const T* g = parent_value(self, 1).raw();
        T* dp = wants(self, 0) ? self.parents[0]->grad_buffer().raw() : nullptr;
        T* dg = wants(self, 1) ? self.parents[1]->grad_buffer().raw() : nullptr;
        for (std::size_t j = 0; j < joints; ++j) {
          for (std::size_t c = 0; c < 3; ++c) {
            const T dd = scale_factor * (p[3 * j + c] - g[3 * j + c]) / norms[j];
            if (dp) dp[3 * j + c] += dd;
            if (dg) dg[3 * j + c] -= dd;
          }
        }
      });
}

template <typename T>
Var<T> stochastic_depth(const Var<T>& branch, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("stochastic depth rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return branch;
  const std::size_t rows = branch.shape().front();
  std::vector<T> mask(rows);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t r = 0; r < rows; ++r) mask[r] = rng.uniform() < rate ? T{0} : keep_scale;
  return scale_rows(branch, std::move(mask));
}

#define POSEFORMER_INSTANTIATE_OPS(T)                                                          \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> add_broadcast(const Var<T>&, const Var<T>&);                                 \
  template Var<T> scale(const Var<T>&, T);                                                     \
  template Var<T> sum(const Var<T>&);                                                          \
  template Var<T> mean(const Var<T>&);                                                         \
  template Var<T> reshape(const Var<T>&, Shape);                                               \
  template Var<T> softmax_lastdim(const Var<T>&);                                              \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                  \
  template Var<T> gelu(const Var<T>&);                                                         \
  template Var<T> attention_heads(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t,    \
                                  Tensor<T>*);                                                 \
  template Var<T> weighted_sum_axis1(const Var<T>&, const Var<T>&);                            \
  template Var<T> mean_axis1(const Var<T>&);                                                   \
  template Var<T> scale_rows(const Var<T>&, std::vector<T>);                                   \
  template Var<T> mpjpe_loss(const Var<T>&, const Var<T>&, T);                                 \
  template Var<T> stochastic_depth(const Var<T>&, double, bool, Rng&);

POSEFORMER_INSTANTIATE_OPS(float)
POSEFORMER_INSTANTIATE_OPS(double)

#undef POSEFORMER_INSTANTIATE_OPS

}  // namespace ops
}  // namespace poseformer
