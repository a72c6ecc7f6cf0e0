#include "poseformer/complexity.hpp"

namespace poseformer {

std::uint64_t encoder_layer_macs(std::size_t tokens, const EncoderConfig& config) {
  const std::uint64_t n = tokens;
  const std::uint64_t d = config.dim;
  const std::uint64_t m = config.hidden_dim();
  return 3 * n * d * d  // Q, K, V
         + n * n * d    // Q K^T, summed over heads
         + n * n * d    // A V
         + n * d * d    // output projection
         + 2 * n * d * m;  // MLP
}

nlohmann::json ComplexityReport::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& term : terms) t.push_back({{"name", term.name}, {"parameters", term.parameters}, {"macs", term.macs}});
  return nlohmann::json{{"architecture", architecture},
                        {"frames", frames},
                        {"parameters", parameters},
                        {"parameters_millions", parameters_millions()},
                        {"macs", macs},
                        {"flops", flops},
                        {"mflops_per_frame", mflops()},
                        {"tokens", tokens},
                        {"terms", std::move(t)}};
}

namespace {

void finish(ComplexityReport& r) {
  for (const auto& term : r.terms) {
    r.parameters += term.parameters;
    r.macs += term.macs;
  }
  r.flops = 2 * r.macs;
}

}  // namespace

ComplexityReport estimate_complexity(const ModelConfig& config) {
  config.validate();
  ComplexityReport r;
  r.architecture = to_string(config.architecture);
  r.frames = config.frames;
  const std::uint64_t f = config.frames;
  const std::uint64_t joints = config.joints;
  const std::uint64_t c = config.embed_dim;
  const std::uint64_t dim = config.temporal_dim();
  const EncoderConfig te = config.temporal_encoder();

  if (config.architecture == Architecture::SpatialTemporal) {
    const EncoderConfig se = config.spatial_encoder();
    r.terms.push_back({"spatial.patch_embed", 2 * c + c, f * joints * 2 * c});
    r.terms.push_back({"spatial.pos_embed", config.spatial_pos ? joints * c : 0, 0});
    r.terms.push_back({"spatial.encoder", encoder_parameter_count(se), f * se.layers * encoder_layer_macs(joints, se)});
    r.terms.push_back({"temporal.pos_embed", config.temporal_pos ? f * dim : 0, 0});
    r.terms.push_back({"temporal.encoder", encoder_parameter_count(te), te.layers * encoder_layer_macs(f, te)});
    r.terms.push_back({"head.frame_weights", f, f * dim});
    r.tokens = std::max(joints, f);
  } else {
    r.terms.push_back({"temporal.patch_embed", joints * 2 * dim + dim, f * joints * 2 * dim});
    r.terms.push_back({"temporal.pos_embed", config.temporal_pos ? f * dim : 0, 0});
    r.terms.push_back({"temporal.encoder", encoder_parameter_count(te), te.layers * encoder_layer_macs(f, te)});
    r.tokens = f;
  }
  r.terms.push_back({"head.norm", 2 * dim, 0});
  r.terms.push_back({"head.linear", dim * joints * 3 + joints * 3, dim * joints * 3});
  finish(r);
  return r;
}

std::uint64_t count_parameters(const ModelConfig& config) { return estimate_complexity(config).parameters; }

std::uint64_t estimate_flops(const ModelConfig& config) { return estimate_complexity(config).flops; }

ComplexityReport joint_token_complexity(const ModelConfig& config) {
  config.validate();
  ComplexityReport r;
  r.architecture = "joint-token";
  r.frames = config.frames;
  const std::uint64_t f = config.frames;
  const std::uint64_t joints = config.joints;
  const std::uint64_t c = config.embed_dim;
  EncoderConfig enc = config.spatial_encoder();
  enc.layers = config.spatial_layers + config.temporal_layers;
  r.tokens = f * joints;
  r.terms.push_back({"patch_embed", 2 * c + c, r.tokens * 2 * c});
  r.terms.push_back({"pos_embed", r.tokens * c, 0});
  r.terms.push_back({"encoder", encoder_parameter_count(enc), enc.layers * encoder_layer_macs(r.tokens, enc)});
  r.terms.push_back({"head", 3 * c + 3, joints * c * 3});
  finish(r);
  return r;
}

}  // namespace poseformer
