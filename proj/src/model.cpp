#include "poseformer/model.hpp"

#include <set>

namespace poseformer {

std::string to_string(Architecture arch) {
  return arch == Architecture::SpatialTemporal ? "spatial-temporal" : "temporal-baseline";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "spatial-temporal" || name == "poseformer") return Architecture::SpatialTemporal;
  if (name == "temporal-baseline" || name == "baseline") return Architecture::TemporalBaseline;
  throw ConfigError("unknown architecture '" + name + "'");
}

std::size_t ModelConfig::temporal_dim() const {
  if (architecture == Architecture::TemporalBaseline && baseline_dim != 0) return baseline_dim;
  return joints * embed_dim;
}

EncoderConfig ModelConfig::spatial_encoder() const {
  return EncoderConfig{embed_dim, spatial_heads, spatial_layers, mlp_ratio, drop_path_rate,
                       qkv_bias,  ln_eps};
}

EncoderConfig ModelConfig::temporal_encoder() const {
  return EncoderConfig{temporal_dim(), temporal_heads, temporal_layers, mlp_ratio, drop_path_rate,
                       qkv_bias,       ln_eps};
}

void ModelConfig::validate() const {
  if (frames == 0 || frames % 2 == 0) {
    throw ConfigError("frames must be odd, got " + std::to_string(frames));
  }
  if (joints == 0) throw ConfigError("joints must be positive");
  if (embed_dim == 0) throw ConfigError("embed_dim must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
  if (architecture == Architecture::SpatialTemporal) spatial_encoder().validate();
  temporal_encoder().validate();
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{{"frames", frames},
                        {"joints", joints},
                        {"embed_dim", embed_dim},
                        {"spatial_heads", spatial_heads},
                        {"temporal_heads", temporal_heads},
                        {"spatial_layers", spatial_layers},
                        {"temporal_layers", temporal_layers},
                        {"mlp_ratio", mlp_ratio},
                        {"drop_path_rate", drop_path_rate},
                        {"spatial_pos", spatial_pos},
                        {"temporal_pos", temporal_pos},
                        {"architecture", to_string(architecture)},
                        {"baseline_dim", baseline_dim},
                        {"qkv_bias", qkv_bias},
                        {"ln_eps", ln_eps},
                        {"output_scale", output_scale}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "frames",         "joints",       "embed_dim",    "spatial_heads", "temporal_heads",
      "spatial_layers", "temporal_layers", "mlp_ratio", "drop_path_rate", "spatial_pos",
      "temporal_pos",   "architecture", "baseline_dim", "qkv_bias",      "ln_eps",
      "output_scale"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.frames = j.value("frames", c.frames);
    c.joints = j.value("joints", c.joints);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.spatial_heads = j.value("spatial_heads", c.spatial_heads);
    c.temporal_heads = j.value("temporal_heads", c.temporal_heads);
    c.spatial_layers = j.value("spatial_layers", c.spatial_layers);
    c.temporal_layers = j.value("temporal_layers", c.temporal_layers);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.drop_path_rate = j.value("drop_path_rate", c.drop_path_rate);
    c.spatial_pos = j.value("spatial_pos", c.spatial_pos);
    c.temporal_pos = j.value("temporal_pos", c.temporal_pos);
    if (j.contains("architecture")) {
      c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    }
    c.baseline_dim = j.value("baseline_dim", c.baseline_dim);
    c.qkv_bias = j.value("qkv_bias", c.qkv_bias);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.output_scale = j.value("output_scale", c.output_scale);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  return c;
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape shape, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.02));
  return t;
}

void expect_extent(const Shape& shape, std::size_t axis, std::size_t want, const char* name) {
  if (shape[axis] != want) {
    throw DimensionError(std::string("input axis '") + name + "' has extent " +
                         std::to_string(shape[axis]) + ", model expects " + std::to_string(want) +
                         " (input shape " + shape_str(shape) + ")");
  }
}

}  // namespace

template <typename T>
PoseFormer<T>::PoseFormer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed, "init");
  const std::size_t f = config_.frames;
  const std::size_t joints = config_.joints;
  const std::size_t c = config_.embed_dim;
  const std::size_t dim = config_.temporal_dim();
  auto& w = weights_;

  if (config_.architecture == Architecture::SpatialTemporal) {
    w.embed_w = params_.add("spatial.patch_embed.w", trunc_normal<T>({2, c}, rng));
    w.embed_b = params_.add("spatial.patch_embed.b", Tensor<T>({c}));
    if (config_.spatial_pos) w.spatial_pos = params_.add("spatial.pos_embed", trunc_normal<T>({joints, c}, rng));
    w.spatial = make_encoder(params_, "spatial", config_.spatial_encoder(), rng);
  } else {
    w.embed_w = params_.add("temporal.patch_embed.w", trunc_normal<T>({joints * 2, dim}, rng));
    w.embed_b = params_.add("temporal.patch_embed.b", Tensor<T>({dim}));
  }
  if (config_.temporal_pos) w.temporal_pos = params_.add("temporal.pos_embed", trunc_normal<T>({f, dim}, rng));
  w.temporal = make_encoder(params_, "temporal", config_.temporal_encoder(), rng);
  if (config_.architecture == Architecture::SpatialTemporal) {
    w.frame_weights =
        params_.add("head.frame_weights", Tensor<T>({f}, static_cast<T>(1.0 / static_cast<double>(f))));
  }
  w.head_gamma = params_.add("head.norm.gamma", Tensor<T>({dim}, T{1}));
  w.head_beta = params_.add("head.norm.beta", Tensor<T>({dim}));
  w.head_w = params_.add("head.linear.w", trunc_normal<T>({dim, joints * 3}, rng));
  w.head_b = params_.add("head.linear.b", Tensor<T>({joints * 3}));
}

template <typename T>
Var<T> PoseFormer<T>::batched_windows(const Var<T>& windows) const {
  const Shape& s = windows.shape();
  if (s.size() != 3 && s.size() != 4) {
    throw DimensionError("expected windows [B, f, J, 2] or [f, J, 2], got " + shape_str(s));
  }
  const std::size_t off = s.size() == 4 ? 1 : 0;
  expect_extent(s, off + 0, config_.frames, "frames");
  expect_extent(s, off + 1, config_.joints, "joints");
  expect_extent(s, off + 2, 2, "coordinates");
  if (s.size() == 4) return windows;
  return ops::reshape(windows, Shape{1, s[0], s[1], s[2]});
}

template <typename T>
Var<T> PoseFormer<T>::spatial_forward(const Var<T>& poses, const ForwardMode& mode,
                                      AttentionTrace<T>* trace) const {
  if (config_.architecture != Architecture::SpatialTemporal) {
    throw UsageError("spatial_forward needs the spatial-temporal architecture");
  }
  const Shape& s = poses.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("expected poses [J, 2] or [B, J, 2], got " + shape_str(s));
  }
  expect_extent(s, s.size() - 2, config_.joints, "joints");
  expect_extent(s, s.size() - 1, 2, "coordinates");
  Var<T> tokens = ops::linear(poses, weights_.embed_w, weights_.embed_b);
  if (config_.spatial_pos) tokens = ops::add_broadcast(tokens, weights_.spatial_pos);
  return encoder_stack(tokens, weights_.spatial, config_.spatial_encoder(), mode, trace);
}

template <typename T>
Var<T> PoseFormer<T>::temporal_forward(const Var<T>& features, const ForwardMode& mode,
                                       AttentionTrace<T>* trace) const {
  const Shape& s = features.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("expected frame features [f, D] or [B, f, D], got " + shape_str(s));
  }
  expect_extent(s, s.size() - 2, config_.frames, "frames");
  expect_extent(s, s.size() - 1, config_.temporal_dim(), "features");
  Var<T> tokens = features;
  if (config_.temporal_pos) tokens = ops::add_broadcast(tokens, weights_.temporal_pos);
  return encoder_stack(tokens, weights_.temporal, config_.temporal_encoder(), mode, trace);
}

template <typename T>
Var<T> PoseFormer<T>::head_projection(const Var<T>& reduced) const {
  const std::size_t batch = reduced.shape()[0];
  Var<T> y = ops::layer_norm(reduced, weights_.head_gamma, weights_.head_beta,
                             static_cast<T>(config_.ln_eps));
  y = ops::linear(y, weights_.head_w, weights_.head_b);
  y = ops::scale(y, static_cast<T>(config_.output_scale));
  return ops::reshape(y, Shape{batch, config_.joints, 3});
}

template <typename T>
Var<T> PoseFormer<T>::regression_head(const Var<T>& encoded) const {
  if (config_.architecture != Architecture::SpatialTemporal) {
    throw UsageError("the learned frame reduction belongs to the spatial-temporal architecture");
  }
  Var<T> batched = encoded;
  if (encoded.shape().size() == 2) {
    batched = ops::reshape(encoded, Shape{1, encoded.shape()[0], encoded.shape()[1]});
  }
  return head_projection(ops::weighted_sum_axis1(batched, weights_.frame_weights));
}

template <typename T>
Var<T> PoseFormer<T>::baseline_forward(const Var<T>& windows, const ForwardMode& mode,
                                       ForwardTrace<T>* trace) const {
  if (config_.architecture != Architecture::TemporalBaseline) {
    throw UsageError("baseline_forward needs the temporal-baseline architecture");
  }
  const bool single = windows.shape().size() == 3;
  Var<T> x = batched_windows(windows);
  const std::size_t batch = x.shape()[0];
  const std::size_t f = config_.frames;
  x = ops::reshape(x, Shape{batch, f, config_.joints * 2});
  Var<T> tokens = ops::linear(x, weights_.embed_w, weights_.embed_b);
  Var<T> encoded = temporal_forward(tokens, mode, trace ? &trace->temporal : nullptr);
  Var<T> out = head_projection(ops::mean_axis1(encoded));
  if (single) out = ops::reshape(out, Shape{config_.joints, 3});
  return out;
}

template <typename T>
Var<T> PoseFormer<T>::forward(const Var<T>& windows, const ForwardMode& mode,
                              ForwardTrace<T>* trace) const {
  if (config_.architecture == Architecture::TemporalBaseline) {
    return baseline_forward(windows, mode, trace);
  }
  const bool single = windows.shape().size() == 3;
  Var<T> x = batched_windows(windows);
  const std::size_t batch = x.shape()[0];
  const std::size_t f = config_.frames;
  const std::size_t joints = config_.joints;
  x = ops::reshape(x, Shape{batch * f, joints, 2});
  Var<T> per_frame = spatial_forward(x, mode, trace ? &trace->spatial : nullptr);
  Var<T> features = ops::reshape(per_frame, Shape{batch, f, joints * config_.embed_dim});
  Var<T> encoded = temporal_forward(features, mode, trace ? &trace->temporal : nullptr);
  Var<T> out = regression_head(encoded);
  if (single) out = ops::reshape(out, Shape{joints, 3});
  return out;
}

template <typename T>
Tensor<T> predict(const PoseFormer<T>& model, const Tensor<T>& windows) {
  NoGradGuard guard;
  return model.forward(Var<T>(windows), ForwardMode{}).value();
}

template class PoseFormer<float>;
template class PoseFormer<double>;
template Tensor<float> predict(const PoseFormer<float>&, const Tensor<float>&);
template Tensor<double> predict(const PoseFormer<double>&, const Tensor<double>&);

}  // namespace poseformer
