#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "poseformer/parameters.hpp"
#include "poseformer/rng.hpp"

namespace poseformer {

/// Width-generic pre-norm transformer encoder hyperparameters.
struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t heads = 8;
  std::size_t layers = 4;
  double mlp_ratio = 2.0;
  double drop_path_rate = 0.0;
  bool qkv_bias = false;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden_dim() const;
  /// Throws ConfigError on dim % heads != 0, zero layers, or a rate outside [0, 1).
  void validate() const;
};

/// Attention weights of one head in one layer: N x N, row i holds the weights
/// query token i assigns to every key token. Rows are probability vectors.
struct AttentionMap {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t tokens = 0;
  std::vector<double> weights;

  double at(std::size_t query, std::size_t key) const { return weights[query * tokens + key]; }
};

template <typename T>
struct EncoderLayerWeights {
  Var<T> norm1_gamma, norm1_beta;
  Var<T> w_q, w_k, w_v;
  Var<T> b_q, b_k, b_v;  // undefined unless qkv_bias
  Var<T> w_out, b_out;
  Var<T> norm2_gamma, norm2_beta;
  Var<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

template <typename T>
struct EncoderWeights {
  std::vector<EncoderLayerWeights<T>> layers;
  Var<T> norm_gamma, norm_beta;
};

/// Registers an encoder's parameters under `prefix` ("spatial", "temporal").
/// Linear weights are stored [in, out] and drawn from a truncated normal with
/// std 0.02; biases start at zero; LayerNorm at gamma = 1, beta = 0.
template <typename T>
EncoderWeights<T> make_encoder(ParameterStore<T>& store, const std::string& prefix,
                               const EncoderConfig& config, Rng& init_rng);

/// Scalar count of one encoder as registered by make_encoder.
std::size_t encoder_parameter_count(const EncoderConfig& config);

struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;  // required when training with a positive drop-path rate
};

/// Attention probabilities recorded during a forward pass, one [B, H, N, N]
/// tensor per encoder layer.
template <typename T>
struct AttentionTrace {
  std::vector<Tensor<T>> layers;

  /// Every (layer, head) map of batch element `sample`.
  std::vector<AttentionMap> maps(std::size_t sample) const;
};

template <typename T>
struct QKV {
  Var<T> q, k, v;
};

/// Q = Z W_Q, K = Z W_K, V = Z W_V (plus optional biases).
template <typename T>
QKV<T> qkv_project(const Var<T>& z, const Var<T>& w_q, const Var<T>& w_k, const Var<T>& w_v,
                   const Var<T>& b_q = {}, const Var<T>& b_k = {}, const Var<T>& b_v = {});

/// Softmax(Q K^T / sqrt(d)) V for a single head; inputs [N, d] or [B, N, d].
template <typename T>
Var<T> scaled_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                        Tensor<T>* probs_out = nullptr);

/// Multi-head self-attention: per-head attention on dim/h column blocks of the
/// Q/K/V projections, concatenated and projected by W_out.
template <typename T>
Var<T> msa(const Var<T>& z, const EncoderLayerWeights<T>& w, std::size_t heads,
           Tensor<T>* probs_out = nullptr);

/// z' = z + DropPath(MSA(LN(z))); out = z' + DropPath(MLP(LN(z'))).
template <typename T>
Var<T> encoder_layer(const Var<T>& z, const EncoderLayerWeights<T>& w, const EncoderConfig& config,
                     const ForwardMode& mode, Tensor<T>* probs_out = nullptr);

/// All layers followed by the final LayerNorm. Accepts [N, dim] or [B, N, dim].
template <typename T>
Var<T> encoder_stack(const Var<T>& z, const EncoderWeights<T>& w, const EncoderConfig& config,
                     const ForwardMode& mode, AttentionTrace<T>* trace = nullptr);

/// CSV with header `layer,head,query,key,weight`, one row per map entry.
void write_attention_csv(std::ostream& out, const std::vector<AttentionMap>& maps);

/// Binary 8-bit PGM of one map, min-max normalized to [0, 1] then scaled to 0..255.
/// Image row i is query i, column j is key j.
void write_attention_pgm(std::ostream& out, const AttentionMap& map);

}  // namespace poseformer
