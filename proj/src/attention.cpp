#include "poseformer/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace poseformer {

std::size_t EncoderConfig::hidden_dim() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
}

void EncoderConfig::validate() const {
  if (dim == 0) throw ConfigError("encoder width must be positive");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("encoder width " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (layers == 0) throw ConfigError("encoder needs at least one layer");
  if (!(mlp_ratio > 0.0) || hidden_dim() == 0) throw ConfigError("MLP ratio must be positive");
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw ConfigError("drop-path rate must lie in [0, 1)");
  }
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double stddev = 0.02) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
  return t;
}

template <typename T>
Var<T> as_batched(const Var<T>& z) {
  if (z.shape().size() == 3) return z;
  if (z.shape().size() == 2) return ops::reshape(z, Shape{1, z.shape()[0], z.shape()[1]});
  throw DimensionError("encoder input must be [N, dim] or [B, N, dim], got " + shape_str(z.shape()));
}

template <typename T>
Var<T> restore_rank(const Var<T>& out, const Var<T>& like) {
  if (like.shape().size() == 2) return ops::reshape(out, like.shape());
  return out;
}

}  // namespace

template <typename T>
EncoderWeights<T> make_encoder(ParameterStore<T>& store, const std::string& prefix,
                               const EncoderConfig& config, Rng& init_rng) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t hid = config.hidden_dim();
  EncoderWeights<T> w;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    EncoderLayerWeights<T> lw;
    lw.norm1_gamma = store.add(p + ".norm1.gamma", Tensor<T>({d}, T{1}));
    lw.norm1_beta = store.add(p + ".norm1.beta", Tensor<T>({d}));
    lw.w_q = store.add(p + ".msa.w_q", trunc_normal<T>({d, d}, init_rng));
    lw.w_k = store.add(p + ".msa.w_k", trunc_normal<T>({d, d}, init_rng));
    lw.w_v = store.add(p + ".msa.w_v", trunc_normal<T>({d, d}, init_rng));
    if (config.qkv_bias) {
      lw.b_q = store.add(p + ".msa.b_q", Tensor<T>({d}));
      lw.b_k = store.add(p + ".msa.b_k", Tensor<T>({d}));
      lw.b_v = store.add(p + ".msa.b_v", Tensor<T>({d}));
    }
    lw.w_out = store.add(p + ".msa.w_out", trunc_normal<T>({d, d}, init_rng));
    lw.b_out = store.add(p + ".msa.b_out", Tensor<T>({d}));
    lw.norm2_gamma = store.add(p + ".norm2.gamma", Tensor<T>({d}, T{1}));
    lw.norm2_beta = store.add(p + ".norm2.beta", Tensor<T>({d}));
    lw.fc1_w = store.add(p + ".mlp.fc1.w", trunc_normal<T>({d, hid}, init_rng));
    lw.fc1_b = store.add(p + ".mlp.fc1.b", Tensor<T>({hid}));
    lw.fc2_w = store.add(p + ".mlp.fc2.w", trunc_normal<T>({hid, d}, init_rng));
    lw.fc2_b = store.add(p + ".mlp.fc2.b", Tensor<T>({d}));
    w.layers.push_back(std::move(lw));
  }
  w.norm_gamma = store.add(prefix + ".norm.gamma", Tensor<T>({d}, T{1}));
  w.norm_beta = store.add(prefix + ".norm.beta", Tensor<T>({d}));
  return w;
}

std::size_t encoder_parameter_count(const EncoderConfig& config) {
  const std::size_t d = config.dim;
  const std::size_t hid = config.hidden_dim();
  std::size_t layer = 2 * d                         // norm1
                      + 3 * d * d                   // W_Q, W_K, W_V
                      + (config.qkv_bias ? 3 * d : 0)
                      + d * d + d                   // W_out
                      + 2 * d                       // norm2
                      + d * hid + hid + hid * d + d;  // MLP
  return config.layers * layer + 2 * d;
}

template <typename T>
std::vector<AttentionMap> AttentionTrace<T>::maps(std::size_t sample) const {
  std::vector<AttentionMap> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor<T>& probs = layers[l];
    const std::size_t batch = probs.dim(0);
    const std::size_t heads = probs.dim(1);
    const std::size_t n = probs.dim(2);
    if (sample >= batch) {
      throw DimensionError("attention trace holds " + std::to_string(batch) +
                           " samples, requested index " + std::to_string(sample));
    }
    for (std::size_t h = 0; h < heads; ++h) {
      AttentionMap m;
      m.layer = l;
      m.head = h;
      m.tokens = n;
      const T* src = probs.raw() + ((sample * heads + h) * n) * n;
      m.weights.assign(src, src + n * n);
      out.push_back(std::move(m));
    }
  }
  return out;
}

template <typename T>
QKV<T> qkv_project(const Var<T>& z, const Var<T>& w_q, const Var<T>& w_k, const Var<T>& w_v,
                   const Var<T>& b_q, const Var<T>& b_k, const Var<T>& b_v) {
  return QKV<T>{ops::linear(z, w_q, b_q), ops::linear(z, w_k, b_k), ops::linear(z, w_v, b_v)};
}

template <typename T>
Var<T> scaled_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Tensor<T>* probs_out) {
  Var<T> out = ops::attention_heads(as_batched(q), as_batched(k), as_batched(v), 1, probs_out);
  return restore_rank(out, q);
}

template <typename T>
Var<T> msa(const Var<T>& z, const EncoderLayerWeights<T>& w, std::size_t heads,
           Tensor<T>* probs_out) {
  const Var<T> zb = as_batched(z);
  QKV<T> qkv = qkv_project(zb, w.w_q, w.w_k, w.w_v, w.b_q, w.b_k, w.b_v);
  Var<T> attended = ops::attention_heads(qkv.q, qkv.k, qkv.v, heads, probs_out);
  return restore_rank(ops::linear(attended, w.w_out, w.b_out), z);
}

template <typename T>
Var<T> encoder_layer(const Var<T>& z, const EncoderLayerWeights<T>& w, const EncoderConfig& config,
                     const ForwardMode& mode, Tensor<T>* probs_out) {
  const T eps = static_cast<T>(config.ln_eps);
  const bool dropping = mode.training && config.drop_path_rate > 0.0;
  if (dropping && mode.rng == nullptr) {
    throw UsageError("training with stochastic depth needs an RNG stream");
  }
  auto drop = [&](const Var<T>& branch) {
    if (!dropping) return branch;
    return ops::stochastic_depth(branch, config.drop_path_rate, true, *mode.rng);
  };

  const Var<T> zb = as_batched(z);
  Var<T> attn = msa(ops::layer_norm(zb, w.norm1_gamma, w.norm1_beta, eps), w, config.heads, probs_out);
  Var<T> mid = ops::add(zb, drop(attn));
  Var<T> hidden = ops::gelu(ops::linear(ops::layer_norm(mid, w.norm2_gamma, w.norm2_beta, eps),
                                        w.fc1_w, w.fc1_b));
  Var<T> mlp = ops::linear(hidden, w.fc2_w, w.fc2_b);
  return restore_rank(ops::add(mid, drop(mlp)), z);
}

template <typename T>
Var<T> encoder_stack(const Var<T>& z, const EncoderWeights<T>& w, const EncoderConfig& config,
                     const ForwardMode& mode, AttentionTrace<T>* trace) {
  if (w.layers.empty()) throw ConfigError("encoder needs at least one layer");
  if (z.shape().back() != config.dim) {
    throw DimensionError("encoder expects width " + std::to_string(config.dim) + ", got " +
                         shape_str(z.shape()));
  }
  if (trace) trace->layers.clear();
  Var<T> h = as_batched(z);
  for (const auto& layer : w.layers) {
    Tensor<T> probs;
    h = encoder_layer(h, layer, config, mode, trace ? &probs : nullptr);
    if (trace) trace->layers.push_back(std::move(probs));
  }
  h = ops::layer_norm(h, w.norm_gamma, w.norm_beta, static_cast<T>(config.ln_eps));
  return restore_rank(h, z);
}

void write_attention_csv(std::ostream& out, const std::vector<AttentionMap>& maps) {
  out << "layer,head,query,key,weight\n";
  char buf[64];
  for (const auto& m : maps) {
    for (std::size_t i = 0; i < m.tokens; ++i) {
      for (std::size_t j = 0; j < m.tokens; ++j) {
        std::snprintf(buf, sizeof buf, "%.9g", m.at(i, j));
        out << m.layer << ',' << m.head << ',' << i << ',' << j << ',' << buf << '\n';
      }
    }
  }
}

void write_attention_pgm(std::ostream& out, const AttentionMap& map) {
  const auto [lo_it, hi_it] = std::minmax_element(map.weights.begin(), map.weights.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  out << "P5\n" << map.tokens << ' ' << map.tokens << "\n255\n";
  for (double w : map.weights) {
    const double unit = range > 0.0 ? (w - lo) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
}

#define POSEFORMER_INSTANTIATE_ENCODER(T)                                                       \
  template EncoderWeights<T> make_encoder(ParameterStore<T>&, const std::string&,               \
                                          const EncoderConfig&, Rng&);                          \
  template struct AttentionTrace<T>;                                                            \
  template QKV<T> qkv_project(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,       \
                              const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> scaled_attention(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>*);   \
  template Var<T> msa(const Var<T>&, const EncoderLayerWeights<T>&, std::size_t, Tensor<T>*);   \
  template Var<T> encoder_layer(const Var<T>&, const EncoderLayerWeights<T>&,                   \
                                const EncoderConfig&, const ForwardMode&, Tensor<T>*);          \
  template Var<T> encoder_stack(const Var<T>&, const EncoderWeights<T>&, const EncoderConfig&,  \
                                const ForwardMode&, AttentionTrace<T>*);

POSEFORMER_INSTANTIATE_ENCODER(float)
POSEFORMER_INSTANTIATE_ENCODER(double)

#undef POSEFORMER_INSTANTIATE_ENCODER

}  // namespace poseformer
