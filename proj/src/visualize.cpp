#include "poseformer/visualize.hpp"

#include <fstream>

namespace poseformer {

namespace fs = std::filesystem;

template <typename T>
WindowAttention window_attention(const PoseFormer<T>& model, const Tensor<T>& window) {
  const ModelConfig& c = model.config();
  if (window.shape() != Shape{c.frames, c.joints, 2}) {
    throw DimensionError("attention export expects one window " + shape_str(Shape{c.frames, c.joints, 2}) + ", got " +
                         shape_str(window.shape()));
  }
  ForwardTrace<T> trace;
  {
    NoGradGuard guard;
    model.forward(Var<T>(window), ForwardMode{}, &trace);
  }
  WindowAttention out;
  if (c.architecture == Architecture::SpatialTemporal) out.spatial = trace.spatial.maps(c.frames / 2);
  out.temporal = trace.temporal.maps(0);
  return out;
}

std::size_t export_attention(const WindowAttention& attention, const fs::path& dir) {
  fs::create_directories(dir);
  auto dump = [&](const std::string& name, const std::vector<AttentionMap>& maps) {
    if (maps.empty()) return;
    std::ofstream csv(dir / (name + ".csv"));
    write_attention_csv(csv, maps);
    for (const auto& m : maps) {
      std::ofstream pgm(dir / (name + "_layer" + std::to_string(m.layer) + "_head" + std::to_string(m.head) + ".pgm"),
                        std::ios::binary);
      write_attention_pgm(pgm, m);
      if (!pgm) throw std::runtime_error("failed writing attention image into " + dir.string());
    }
    if (!csv) throw std::runtime_error("failed writing " + (dir / (name + ".csv")).string());
  };
  dump("spatial", attention.spatial);
  dump("temporal", attention.temporal);
  return attention.spatial.size() + attention.temporal.size();
}

template WindowAttention window_attention(const PoseFormer<float>&, const Tensor<float>&);
template WindowAttention window_attention(const PoseFormer<double>&, const Tensor<double>&);

}  // namespace poseformer
