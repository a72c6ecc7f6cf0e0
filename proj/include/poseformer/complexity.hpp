#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "poseformer/model.hpp"

namespace poseformer {

/// Multiply-accumulate count of one encoder layer on `tokens` tokens:
/// Q/K/V and output projections, the two attention products, and the MLP.
std::uint64_t encoder_layer_macs(std::size_t tokens, const EncoderConfig& config);

struct ComplexityTerm {
  std::string name;
  std::uint64_t parameters = 0;
  std::uint64_t macs = 0;
};

struct ComplexityReport {
  std::string architecture;
  std::size_t frames = 0;
  std::uint64_t parameters = 0;
  std::uint64_t macs = 0;          // one forward pass of one window
  std::uint64_t flops = 0;         // 2 per MAC; one window yields one output frame
  std::uint64_t tokens = 0;        // largest token sequence any encoder attends over
  std::vector<ComplexityTerm> terms;

  double parameters_millions() const { return static_cast<double>(parameters) / 1e6; }
  double mflops() const { return static_cast<double>(flops) / 1e6; }
  nlohmann::json to_json() const;
};

/// Closed-form parameter count; equals the instantiated model's scalar count.
std::uint64_t count_parameters(const ModelConfig& config);

/// Analytic parameter and FLOP accounting for the configured architecture.
/// Elementwise work (LayerNorm, softmax, GELU, residual adds) is not counted.
ComplexityReport estimate_complexity(const ModelConfig& config);

/// FLOPs per output frame, shorthand for estimate_complexity(config).flops.
std::uint64_t estimate_flops(const ModelConfig& config);

/// Hypothetical design with one token per (frame, joint): a single encoder of
/// width c and L_S + L_T layers over f * J tokens.
ComplexityReport joint_token_complexity(const ModelConfig& config);

}  // namespace poseformer
