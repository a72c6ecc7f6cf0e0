#pragma once

#include <filesystem>
#include <vector>

#include "poseformer/model.hpp"

namespace poseformer {

/// Attention of one window: the spatial maps of its center frame (empty for
/// the temporal baseline) and the temporal maps, one per layer and head.
struct WindowAttention {
  std::vector<AttentionMap> spatial;
  std::vector<AttentionMap> temporal;
};

/// Runs `window` [f, J, 2] through the model in evaluation mode and collects
/// its attention maps.
template <typename T>
WindowAttention window_attention(const PoseFormer<T>& model, const Tensor<T>& window);

/// Writes `spatial.csv`, `temporal.csv` and one `<module>_layer<l>_head<h>.pgm`
/// per map into `dir`. Returns the number of maps written.
std::size_t export_attention(const WindowAttention& attention, const std::filesystem::path& dir);

}  // namespace poseformer
