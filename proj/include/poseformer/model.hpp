#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "poseformer/attention.hpp"
#include "poseformer/parameters.hpp"

namespace poseformer {

enum class Architecture { SpatialTemporal, TemporalBaseline };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

/// Every architectural hyperparameter of a lifting model. Defaults are the
/// f = 9 spatial-temporal configuration (c = 32, four layers per encoder, 8 heads).
struct ModelConfig {
  std::size_t frames = 9;           // f, odd
  std::size_t joints = 17;          // J
  std::size_t embed_dim = 32;       // c, spatial token width
  std::size_t spatial_heads = 8;
  std::size_t temporal_heads = 8;
  std::size_t spatial_layers = 4;
  std::size_t temporal_layers = 4;
  double mlp_ratio = 2.0;
  double drop_path_rate = 0.1;
  bool spatial_pos = true;
  bool temporal_pos = true;
  Architecture architecture = Architecture::SpatialTemporal;
  std::size_t baseline_dim = 0;  // C for the temporal baseline; 0 means J * c
  bool qkv_bias = false;
  double ln_eps = 1e-5;
  double output_scale = 100.0;  // the head regresses decimeters, outputs are millimeters

  /// Temporal token width: J * c, or C for the baseline.
  std::size_t temporal_dim() const;
  EncoderConfig spatial_encoder() const;
  EncoderConfig temporal_encoder() const;
  /// Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct PoseFormerWeights {
  // Spatial-temporal: 2 -> c per joint. Baseline: (J * 2) -> C per frame.
  Var<T> embed_w, embed_b;
  Var<T> spatial_pos;  // [J, c]
  EncoderWeights<T> spatial;
  Var<T> temporal_pos;  // [f, temporal_dim]
  EncoderWeights<T> temporal;
  Var<T> frame_weights;  // [f], spatial-temporal only
  Var<T> head_gamma, head_beta;
  Var<T> head_w, head_b;  // temporal_dim -> J * 3
};

/// Attention captured from one forward pass. Spatial maps are batched over
/// (window, frame) pairs: entry b * f + i is frame i of window b.
template <typename T>
struct ForwardTrace {
  AttentionTrace<T> spatial;
  AttentionTrace<T> temporal;
};

/// Spatial-temporal transformer for 2D-to-3D lifting, and the temporal-only
/// baseline, selected by ModelConfig::architecture.
template <typename T>
class PoseFormer {
 public:
  PoseFormer(ModelConfig config, std::uint64_t seed);
  // Weights are shared handles into the parameter store; copies would alias them.
  PoseFormer(const PoseFormer&) = delete;
  PoseFormer& operator=(const PoseFormer&) = delete;
  PoseFormer(PoseFormer&&) = default;
  PoseFormer& operator=(PoseFormer&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  const PoseFormerWeights<T>& weights() const { return weights_; }

  /// Windows [B, f, J, 2] (or one window [f, J, 2]) of normalized 2D joints to
  /// center-frame 3D poses [B, J, 3] (or [J, 3]) in millimeters.
  Var<T> forward(const Var<T>& windows, const ForwardMode& mode,
                 ForwardTrace<T>* trace = nullptr) const;

  /// Per-frame joint tokens: [J, 2] or [B, J, 2] -> [.., J, c].
  Var<T> spatial_forward(const Var<T>& poses, const ForwardMode& mode,
                         AttentionTrace<T>* trace = nullptr) const;
  /// Flattened frame features [f, J*c] or [B, f, J*c] -> same shape.
  Var<T> temporal_forward(const Var<T>& features, const ForwardMode& mode,
                          AttentionTrace<T>* trace = nullptr) const;
  /// Learned frame reduction, LayerNorm, affine: [B, f, D] -> [B, J, 3].
  Var<T> regression_head(const Var<T>& encoded) const;
  /// Temporal-only path: flatten, embed, encode, frame mean, head.
  Var<T> baseline_forward(const Var<T>& windows, const ForwardMode& mode,
                          ForwardTrace<T>* trace = nullptr) const;

 private:
  Var<T> batched_windows(const Var<T>& windows) const;
  Var<T> head_projection(const Var<T>& reduced) const;

  ModelConfig config_;
  ParameterStore<T> params_;
  PoseFormerWeights<T> weights_;
};

/// Convenience: forward one or more windows in evaluation mode without recording a graph.
template <typename T>
Tensor<T> predict(const PoseFormer<T>& model, const Tensor<T>& windows);

}  // namespace poseformer
