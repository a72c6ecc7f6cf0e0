#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "poseformer/model.hpp"
#include "poseformer/optim.hpp"
#include "poseformer/rng.hpp"

namespace poseformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A checkpoint refused to load onto a model or precision it was not written for.
class CheckpointMismatch : public IntegrityError {
 public:
  using IntegrityError::IntegrityError;
};

using NamedRngState = std::pair<std::string, RngState>;

struct CheckpointHeader {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  std::string precision;  // "float32" or "float64"
  nlohmann::json meta;    // free-form: training config, epoch, dataset provenance
};

template <typename T>
std::string precision_name();

/// Single little-endian file: magic "PFCK", u32 version, u32-length canonical
/// JSON header, named parameter blobs (u32 name length, name, u32 rank, u32
/// extents, raw scalars), an optimizer section in the same framing, and the
/// named RNG stream states.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const PoseFormer<T>& model,
                     const OptimizerState<T>* optimizer = nullptr, const std::vector<NamedRngState>& rng = {},
                     const nlohmann::json& meta = nlohmann::json::object());

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

struct LoadedCheckpoint {
  CheckpointHeader header;
  bool has_optimizer = false;
  std::vector<NamedRngState> rng;
};

/// Restores parameters (and optimizer moments when `optimizer` is non-null and
/// the file has them) into an existing model. A config or precision mismatch
/// throws CheckpointMismatch with both configs in the message.
template <typename T>
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, PoseFormer<T>& model,
                                 OptimizerState<T>* optimizer = nullptr);

/// Builds a model from the checkpoint's own config and loads it.
template <typename T>
PoseFormer<T> load_model(const std::filesystem::path& path);

}  // namespace poseformer
