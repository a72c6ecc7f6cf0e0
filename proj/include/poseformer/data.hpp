#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "poseformer/tensor.hpp"

namespace poseformer {

/// Pinhole camera, all quantities in pixels.
struct Camera {
  double width = 1000.0;
  double height = 1000.0;
  double focal = 1000.0;
  double cx = 500.0;
  double cy = 500.0;

  nlohmann::json to_json() const;
  static Camera from_json(const nlohmann::json& j);
  friend bool operator==(const Camera&, const Camera&) = default;
};

struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parents;  // -1 for the root
  std::vector<std::pair<std::size_t, std::size_t>> left_right_pairs;

  std::size_t joints() const { return names.size(); }
  /// Throws ConfigError on inconsistent lengths, a non-root cycle, or pairs
  /// that are out of range, self-paired, or overlapping.
  void validate() const;

  nlohmann::json to_json() const;
  static Skeleton from_json(const nlohmann::json& j);
  /// The 17-joint Human3.6M topology, pelvis at index 0.
  static Skeleton human36m();
  friend bool operator==(const Skeleton&, const Skeleton&) = default;
};

struct PoseSequence {
  std::string id;
  Camera camera;
  Tensor<float> joints2d;                 // [T, J, 2], pixels
  std::optional<Tensor<float>> joints3d;  // [T, J, 3], millimeters, root-relative
  std::optional<std::array<double, 3>> root_mm;  // camera-space root, when known

  std::size_t frames() const { return joints2d.dim(0); }
  friend bool operator==(const PoseSequence&, const PoseSequence&) = default;
};

struct Dataset {
  Skeleton skeleton;
  std::vector<PoseSequence> sequences;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr int kManifestVersion = 1;

/// Writes `manifest.json` plus `<id>.p2d` / `<id>.p3d` blobs (little-endian
/// float32, [frame][joint][dim]) into `dir`, creating it if needed.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Loads a dataset from a manifest path or its directory. Malformed JSON is a
/// ParseError; byte-length, shape, or finiteness violations are an
/// IntegrityError naming the sequence (and frame, where one applies). 2D
/// points outside the image are reported through `warnings` but are not fatal.
Dataset load_dataset(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

/// x' = 2x / width - 1, y' = 2y / height - 1, applied to every trailing (x, y) pair.
Tensor<float> normalize_2d(const Tensor<float>& pixels, const Camera& camera);
Tensor<float> denormalize_2d(const Tensor<float>& normalized, const Camera& camera);

struct PoseWindow {
  Tensor<float> input;   // [f, J, 2], normalized
  Tensor<float> target;  // [J, 3], millimeters, root-relative; empty without 3D
  std::size_t sequence = 0;
  std::size_t frame = 0;  // source frame of the center
};

/// One window per source frame, centered on it; indices beyond the sequence
/// clamp to the first or last frame.
std::vector<PoseWindow> make_windows(const PoseSequence& seq, std::size_t frames,
                                     std::size_t sequence_index = 0);

/// Negates x of input and target and swaps every left/right pair in both.
PoseWindow flip_horizontal(const PoseWindow& window,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

/// Flips a stack of 3D poses [.., J, 3] in place: negate x, swap pairs.
void flip_poses_3d(Tensor<float>& poses, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);
/// Flips a stack of normalized 2D windows [.., J, 2] in place.
void flip_poses_2d(Tensor<float>& poses, const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

/// Contiguous stack of windows for batching.
struct WindowSet {
  Tensor<float> inputs;   // [N, f, J, 2]
  Tensor<float> targets;  // [N, J, 3]
  std::vector<std::size_t> sequence;
  std::vector<std::size_t> frame;

  std::size_t size() const { return sequence.size(); }
  /// Rows `indices` of inputs and targets, in the given order.
  std::pair<Tensor<float>, Tensor<float>> gather(const std::vector<std::size_t>& indices) const;
};

/// Every window of every sequence with 3D ground truth, in sequence order.
WindowSet collect_windows(const Dataset& dataset, std::size_t frames);
WindowSet stack_windows(const std::vector<PoseWindow>& windows);

struct SynthOptions {
  std::size_t sequences = 4;
  std::size_t length = 100;
  std::uint64_t seed = 0;
  Camera camera;
  double fps = 50.0;
  double root_depth_mm = 4000.0;
};

/// Sinusoidally animated kinematic chain with fixed bone lengths, projected
/// through a pinhole camera. Deterministic per (seed, sequence index).
Dataset synth_generate(const SynthOptions& options);

/// Bone lengths (mm) of the generator's skeleton, indexed by child joint; 0 for the root.
std::vector<double> synth_bone_lengths();

}  // namespace poseformer
