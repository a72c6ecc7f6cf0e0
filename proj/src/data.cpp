#include "poseformer/data.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "binio.hpp"
#include "poseformer/rng.hpp"

namespace poseformer {

namespace fs = std::filesystem;
using nlohmann::json;

json Camera::to_json() const {
  return json{{"width", width}, {"height", height}, {"focal", focal}, {"cx", cx}, {"cy", cy}};
}

Camera Camera::from_json(const json& j) {
  Camera c;
  c.width = j.at("width").get<double>();
  c.height = j.at("height").get<double>();
  c.focal = j.at("focal").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  return c;
}

void Skeleton::validate() const {
  const std::size_t n = names.size();
  if (n == 0) throw ConfigError("skeleton has no joints");
  if (parents.size() != n) {
    throw ConfigError("skeleton lists " + std::to_string(n) + " names but " +
                      std::to_string(parents.size()) + " parents");
  }
  for (std::size_t j = 0; j < n; ++j) {
    const int p = parents[j];
    if (p < -1 || p >= static_cast<int>(n) || p == static_cast<int>(j)) {
      throw ConfigError("joint " + std::to_string(j) + " has invalid parent " + std::to_string(p));
    }
    std::size_t steps = 0;
    for (int a = p; a != -1; a = parents[static_cast<std::size_t>(a)]) {
      if (++steps > n) throw ConfigError("skeleton parent chain of joint " + std::to_string(j) + " cycles");
    }
  }
  std::vector<bool> used(n, false);
  for (const auto& [l, r] : left_right_pairs) {
    if (l >= n || r >= n) {
      throw ConfigError("left/right pair (" + std::to_string(l) + ", " + std::to_string(r) +
                        ") is out of range for " + std::to_string(n) + " joints");
    }
    if (l == r || used[l] || used[r]) {
      throw ConfigError("left/right pairs must be disjoint; joint " + std::to_string(used[l] ? l : r) +
                        " appears twice");
    }
    used[l] = used[r] = true;
  }
}

json Skeleton::to_json() const {
  json pairs = json::array();
  for (const auto& [l, r] : left_right_pairs) pairs.push_back({l, r});
  return json{{"names", names}, {"parents", parents}, {"left_right_pairs", pairs}};
}

Skeleton Skeleton::from_json(const json& j) {
  Skeleton s;
  s.names = j.at("names").get<std::vector<std::string>>();
  s.parents = j.at("parents").get<std::vector<int>>();
  for (const auto& p : j.at("left_right_pairs")) {
    if (!p.is_array() || p.size() != 2) throw ParseError("left_right_pairs entries must be [a, b]");
    s.left_right_pairs.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
  }
  return s;
}

Skeleton Skeleton::human36m() {
  Skeleton s;
  s.names = {"pelvis",     "right_hip",      "right_knee", "right_ankle", "left_hip",
             "left_knee",  "left_ankle",     "spine",      "thorax",      "neck",
             "head",       "left_shoulder",  "left_elbow", "left_wrist",  "right_shoulder",
             "right_elbow", "right_wrist"};
  s.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15};
  s.left_right_pairs = {{4, 1}, {5, 2}, {6, 3}, {11, 14}, {12, 15}, {13, 16}};
  return s;
}

// ---------------------------------------------------------------------------
// Manifest and blobs

namespace {

json blob_entry(const std::string& file, const Shape& shape) {
  return json{{"file", file}, {"offset", 0}, {"bytes", numel(shape) * sizeof(float)}};
}

void write_blob(const fs::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  detail::write_le_array(out, t.raw(), t.size());
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Tensor<float> read_blob(const fs::path& dir, const json& entry, Shape shape, const std::string& id,
                        const char* kind) {
  const fs::path path = dir / entry.at("file").get<std::string>();
  const auto offset = entry.value("offset", std::uint64_t{0});
  const auto bytes = entry.at("bytes").get<std::uint64_t>();
  const std::uint64_t expected = numel(shape) * sizeof(float);
  if (bytes != expected) {
    throw IntegrityError("sequence '" + id + "': " + kind + " blob declares " + std::to_string(bytes) +
                         " bytes, shape " + shape_str(shape) + " needs " + std::to_string(expected));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("sequence '" + id + "': cannot open " + path.string());
  const auto file_size = fs::file_size(path);
  if (offset + bytes > file_size) {
    throw IntegrityError("sequence '" + id + "': " + kind + " blob " + path.string() + " holds " +
                         std::to_string(file_size) + " bytes, expected " + std::to_string(offset + bytes));
  }
  in.seekg(static_cast<std::streamoff>(offset));
  Tensor<float> t(std::move(shape));
  detail::read_le_array(in, t.raw(), t.size(), "sequence '" + id + "' " + kind);
  return t;
}

void check_finite(const Tensor<float>& t, const std::string& id, const char* kind) {
  const std::size_t per_frame = t.size() / t.dim(0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw IntegrityError("sequence '" + id + "': non-finite " + kind + " value at frame " +
                           std::to_string(i / per_frame));
    }
  }
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.skeleton.validate();
  fs::create_directories(dir);
  const std::size_t joints = dataset.skeleton.joints();
  json seqs = json::array();
  for (const auto& seq : dataset.sequences) {
    if (seq.joints2d.rank() != 3 || seq.joints2d.dim(1) != joints || seq.joints2d.dim(2) != 2) {
      throw DimensionError("sequence '" + seq.id + "': joints2d must be [T, " + std::to_string(joints) +
                           ", 2], got " + shape_str(seq.joints2d.shape()));
    }
    json e{{"id", seq.id}, {"frames", seq.frames()}, {"camera", seq.camera.to_json()}};
    write_blob(dir / (seq.id + ".p2d"), seq.joints2d);
    e["p2d"] = blob_entry(seq.id + ".p2d", seq.joints2d.shape());
    if (seq.joints3d) {
      if (seq.joints3d->shape() != Shape{seq.frames(), joints, 3}) {
        throw DimensionError("sequence '" + seq.id + "': joints3d must be [T, J, 3], got " +
                             shape_str(seq.joints3d->shape()));
      }
      write_blob(dir / (seq.id + ".p3d"), *seq.joints3d);
      e["p3d"] = blob_entry(seq.id + ".p3d", seq.joints3d->shape());
    }
    if (seq.root_mm) e["root_mm"] = *seq.root_mm;
    seqs.push_back(std::move(e));
  }
  json manifest{{"format_version", kManifestVersion},
                {"units", {{"joints2d", "px"}, {"joints3d", "mm, root-relative"}}},
                {"normalization", "x' = 2x/width - 1, y' = 2y/height - 1"},
                {"blob_layout", "little-endian float32, [frame][joint][dim]"},
                {"skeleton", dataset.skeleton.to_json()},
                {"sequences", std::move(seqs)}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& path, std::vector<std::string>* warnings) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  const fs::path dir = manifest_path.parent_path();
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  Dataset ds;
  try {
    if (!manifest.contains("format_version")) {
      throw ParseError("manifest " + manifest_path.string() + " lacks format_version");
    }
    const int version = manifest.at("format_version").get<int>();
    if (version != kManifestVersion) {
      throw IntegrityError("manifest format_version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kManifestVersion) + ")");
    }
    ds.skeleton = Skeleton::from_json(manifest.at("skeleton"));
    ds.skeleton.validate();
    const std::size_t joints = ds.skeleton.joints();
    for (const auto& e : manifest.at("sequences")) {
      PoseSequence seq;
      seq.id = e.at("id").get<std::string>();
      const auto frames = e.at("frames").get<std::size_t>();
      if (frames == 0) throw IntegrityError("sequence '" + seq.id + "' has zero frames");
      seq.camera = Camera::from_json(e.at("camera"));
      seq.joints2d = read_blob(dir, e.at("p2d"), {frames, joints, 2}, seq.id, "2D");
      check_finite(seq.joints2d, seq.id, "2D");
      if (e.contains("p3d")) {
        seq.joints3d = read_blob(dir, e.at("p3d"), {frames, joints, 3}, seq.id, "3D");
        check_finite(*seq.joints3d, seq.id, "3D");
      }
      if (e.contains("root_mm")) seq.root_mm = e.at("root_mm").get<std::array<double, 3>>();
      if (warnings) {
        for (std::size_t t = 0; t < frames; ++t) {
          for (std::size_t j = 0; j < joints; ++j) {
            const float x = seq.joints2d.at({t, j, 0});
            const float y = seq.joints2d.at({t, j, 1});
            if (x < 0 || y < 0 || x > seq.camera.width || y > seq.camera.height) {
              warnings->push_back("sequence '" + seq.id + "' frame " + std::to_string(t) + " joint " +
                                  std::to_string(j) + " lies outside the image");
            }
          }
        }
      }
      ds.sequences.push_back(std::move(seq));
    }
  } catch (const json::exception& e) {
    throw ParseError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Normalization, windows, flipping

Tensor<float> normalize_2d(const Tensor<float>& pixels, const Camera& camera) {
  if (!(camera.width > 0 && camera.height > 0)) throw ConfigError("camera width and height must be positive");
  if (pixels.rank() == 0 || pixels.dim(-1) != 2) {
    throw DimensionError("2D poses need a trailing axis of 2, got " + shape_str(pixels.shape()));
  }
  Tensor<float> out = pixels;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    out[i] = static_cast<float>(2.0 * pixels[i] / camera.width - 1.0);
    out[i + 1] = static_cast<float>(2.0 * pixels[i + 1] / camera.height - 1.0);
  }
  return out;
}

Tensor<float> denormalize_2d(const Tensor<float>& normalized, const Camera& camera) {
  if (!(camera.width > 0 && camera.height > 0)) throw ConfigError("camera width and height must be positive");
  if (normalized.rank() == 0 || normalized.dim(-1) != 2) {
    throw DimensionError("2D poses need a trailing axis of 2, got " + shape_str(normalized.shape()));
  }
  Tensor<float> out = normalized;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    out[i] = static_cast<float>((normalized[i] + 1.0) * camera.width / 2.0);
    out[i + 1] = static_cast<float>((normalized[i + 1] + 1.0) * camera.height / 2.0);
  }
  return out;
}

std::vector<PoseWindow> make_windows(const PoseSequence& seq, std::size_t frames, std::size_t sequence_index) {
  if (frames == 0 || frames % 2 == 0) {
    throw ConfigError("frames must be odd, got " + std::to_string(frames));
  }
  const std::size_t total = seq.frames();
  const std::size_t joints = seq.joints2d.dim(1);
  const Tensor<float> norm = normalize_2d(seq.joints2d, seq.camera);
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(frames / 2);
  const std::size_t frame_scalars = joints * 2;

  std::vector<PoseWindow> out;
  out.reserve(total);
  for (std::size_t c = 0; c < total; ++c) {
    PoseWindow w;
    w.sequence = sequence_index;
    w.frame = c;
    w.input = Tensor<float>({frames, joints, 2});
    for (std::size_t i = 0; i < frames; ++i) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(c) + static_cast<std::ptrdiff_t>(i) - half,
                                                            0, static_cast<std::ptrdiff_t>(total) - 1);
      std::copy_n(norm.raw() + static_cast<std::size_t>(src) * frame_scalars, frame_scalars,
                  w.input.raw() + i * frame_scalars);
    }
    if (seq.joints3d) {
      w.target = Tensor<float>({joints, 3});
      const float* pose = seq.joints3d->raw() + c * joints * 3;
      for (std::size_t j = 0; j < joints; ++j) {
        for (std::size_t k = 0; k < 3; ++k) w.target[j * 3 + k] = pose[j * 3 + k] - pose[k];
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

namespace {

void flip_stack(Tensor<float>& poses, std::size_t dims,
                const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (poses.empty()) return;
  if (poses.rank() < 2 || poses.dim(-1) != dims) {
    throw DimensionError("flip expects [.., J, " + std::to_string(dims) + "], got " + shape_str(poses.shape()));
  }
  const std::size_t joints = poses.dim(-2);
  for (const auto& [l, r] : pairs) {
    if (l >= joints || r >= joints) {
      throw ConfigError("left/right pair (" + std::to_string(l) + ", " + std::to_string(r) +
                        ") is out of range for " + std::to_string(joints) + " joints");
    }
  }
  const std::size_t stride = joints * dims;
  for (std::size_t base = 0; base < poses.size(); base += stride) {
    float* p = poses.raw() + base;
    for (std::size_t j = 0; j < joints; ++j) p[j * dims] = -p[j * dims];
    for (const auto& [l, r] : pairs) std::swap_ranges(p + l * dims, p + (l + 1) * dims, p + r * dims);
  }
}

}  // namespace

void flip_poses_3d(Tensor<float>& poses, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  flip_stack(poses, 3, pairs);
}

void flip_poses_2d(Tensor<float>& poses, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  flip_stack(poses, 2, pairs);
}

PoseWindow flip_horizontal(const PoseWindow& window,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  PoseWindow out = window;
  flip_poses_2d(out.input, pairs);
  flip_poses_3d(out.target, pairs);
  return out;
}

std::pair<Tensor<float>, Tensor<float>> WindowSet::gather(const std::vector<std::size_t>& indices) const {
  const Shape& is = inputs.shape();
  const Shape& ts = targets.shape();
  const std::size_t in_row = inputs.size() / is[0];
  const std::size_t tg_row = targets.size() / ts[0];
  Tensor<float> x({indices.size(), is[1], is[2], is[3]});
  Tensor<float> y({indices.size(), ts[1], ts[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DimensionError("window index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(inputs.raw() + indices[i] * in_row, in_row, x.raw() + i * in_row);
    std::copy_n(targets.raw() + indices[i] * tg_row, tg_row, y.raw() + i * tg_row);
  }
  return {std::move(x), std::move(y)};
}

WindowSet stack_windows(const std::vector<PoseWindow>& windows) {
  if (windows.empty()) throw DimensionError("cannot stack an empty window list");
  const Shape& is = windows.front().input.shape();
  const std::size_t joints = is[1];
  WindowSet set;
  set.inputs = Tensor<float>({windows.size(), is[0], is[1], is[2]});
  set.targets = Tensor<float>({windows.size(), joints, 3});
  const std::size_t in_row = numel(is);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const PoseWindow& w = windows[i];
    if (w.input.shape() != is) throw DimensionError("windows disagree in shape");
    if (w.target.shape() != Shape{joints, 3}) {
      throw DimensionError("window of sequence " + std::to_string(w.sequence) + " frame " +
                           std::to_string(w.frame) + " has no [J, 3] target");
    }
    std::copy_n(w.input.raw(), in_row, set.inputs.raw() + i * in_row);
    std::copy_n(w.target.raw(), joints * 3, set.targets.raw() + i * joints * 3);
    set.sequence.push_back(w.sequence);
    set.frame.push_back(w.frame);
  }
  return set;
}

WindowSet collect_windows(const Dataset& dataset, std::size_t frames) {
  std::vector<PoseWindow> all;
  for (std::size_t s = 0; s < dataset.sequences.size(); ++s) {
    if (!dataset.sequences[s].joints3d) continue;
    auto w = make_windows(dataset.sequences[s], frames, s);
    all.insert(all.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return stack_windows(all);
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

// Rest offsets from each joint's parent in camera axes (x right, y down, z away), mm.
const std::array<Eigen::Vector3d, 17>& rest_offsets() {
  static const std::array<Eigen::Vector3d, 17> offsets = {
      Eigen::Vector3d(0, 0, 0),      Eigen::Vector3d(-130, 0, 0),  Eigen::Vector3d(0, 450, 0),
      Eigen::Vector3d(0, 440, 0),    Eigen::Vector3d(130, 0, 0),   Eigen::Vector3d(0, 450, 0),
      Eigen::Vector3d(0, 440, 0),    Eigen::Vector3d(0, -230, 0),  Eigen::Vector3d(0, -250, 0),
      Eigen::Vector3d(0, -110, 0),   Eigen::Vector3d(0, -115, 0),  Eigen::Vector3d(150, 0, 0),
      Eigen::Vector3d(0, 280, 0),    Eigen::Vector3d(0, 250, 0),   Eigen::Vector3d(-150, 0, 0),
      Eigen::Vector3d(0, 280, 0),    Eigen::Vector3d(0, 250, 0)};
  return offsets;
}

// Per-joint (center, amplitude) of the x, y, z Euler angles in radians. Joints
// without children keep the identity.
struct AngleRange {
  std::array<double, 3> center;
  std::array<double, 3> amplitude;
};

const std::array<AngleRange, 17>& angle_ranges() {
  static const std::array<AngleRange, 17> ranges = {{
      {{0, 0, 0}, {0.10, 0.40, 0.10}},     // pelvis: sway and yaw oscillation
      {{0, 0, 0}, {0.50, 0.10, 0.15}},     // right hip
      {{-0.6, 0, 0}, {0.6, 0, 0}},         // right knee
      {{0, 0, 0}, {0, 0, 0}},
      {{0, 0, 0}, {0.50, 0.10, 0.15}},     // left hip
      {{-0.6, 0, 0}, {0.6, 0, 0}},         // left knee
      {{0, 0, 0}, {0, 0, 0}},
      {{0, 0, 0}, {0.20, 0.20, 0.10}},     // spine
      {{0, 0, 0}, {0.10, 0.10, 0.10}},     // thorax
      {{0, 0, 0}, {0.20, 0.30, 0.10}},     // neck
      {{0, 0, 0}, {0, 0, 0}},
      {{0, 0, -0.3}, {0.80, 0.30, 0.50}},  // left shoulder
      {{0.7, 0, 0}, {0.7, 0, 0}},          // left elbow
      {{0, 0, 0}, {0, 0, 0}},
      {{0, 0, 0.3}, {0.80, 0.30, 0.50}},   // right shoulder
      {{0.7, 0, 0}, {0.7, 0, 0}},          // right elbow
      {{0, 0, 0}, {0, 0, 0}},
  }};
  return ranges;
}

}  // namespace

std::vector<double> synth_bone_lengths() {
  std::vector<double> out;
  for (const auto& o : rest_offsets()) out.push_back(o.norm());
  return out;
}

Dataset synth_generate(const SynthOptions& options) {
  if (options.length == 0) throw ConfigError("synthetic sequences need at least one frame");
  if (!(options.fps > 0)) throw ConfigError("fps must be positive");
  Dataset ds;
  ds.skeleton = Skeleton::human36m();
  const auto& parents = ds.skeleton.parents;
  const std::size_t joints = ds.skeleton.joints();
  const auto& offsets = rest_offsets();
  const auto& ranges = angle_ranges();
  constexpr double two_pi = 2.0 * std::numbers::pi;

  for (std::size_t s = 0; s < options.sequences; ++s) {
    Rng rng(options.seed, "synth", s);
    const double yaw = (rng.uniform() - 0.5) * std::numbers::pi;
    const Eigen::Vector3d root(600.0 * (rng.uniform() - 0.5), 300.0 * (rng.uniform() - 0.5),
                               options.root_depth_mm + 600.0 * (rng.uniform() - 0.5));
    std::array<std::array<double, 3>, 17> freq{}, phase{};
    for (std::size_t j = 0; j < joints; ++j) {
      for (int a = 0; a < 3; ++a) {
        freq[j][a] = 0.2 + 0.8 * rng.uniform();
        phase[j][a] = two_pi * rng.uniform();
      }
    }

    PoseSequence seq;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", s);
    seq.id = id;
    seq.camera = options.camera;
    seq.root_mm = std::array<double, 3>{root.x(), root.y(), root.z()};
    seq.joints2d = Tensor<float>({options.length, joints, 2});
    Tensor<float> j3d({options.length, joints, 3});

    std::vector<Eigen::Matrix3d> global(joints);
    std::vector<Eigen::Vector3d> pos(joints);
    for (std::size_t t = 0; t < options.length; ++t) {
      const double time = static_cast<double>(t) / options.fps;
      for (std::size_t j = 0; j < joints; ++j) {
        double ang[3];
        for (int a = 0; a < 3; ++a) {
          ang[a] = ranges[j].center[a] + ranges[j].amplitude[a] * std::sin(two_pi * freq[j][a] * time + phase[j][a]);
        }
        if (j == 0) ang[1] += yaw;
        const Eigen::Matrix3d local = (Eigen::AngleAxisd(ang[0], Eigen::Vector3d::UnitX()) *
                                       Eigen::AngleAxisd(ang[1], Eigen::Vector3d::UnitY()) *
                                       Eigen::AngleAxisd(ang[2], Eigen::Vector3d::UnitZ()))
                                          .toRotationMatrix();
        if (parents[j] < 0) {
          global[j] = local;
          pos[j] = Eigen::Vector3d::Zero();
        } else {
          const auto p = static_cast<std::size_t>(parents[j]);
          global[j] = global[p] * local;
          pos[j] = pos[p] + global[p] * offsets[j];
        }
      }
      for (std::size_t j = 0; j < joints; ++j) {
        const Eigen::Vector3d cam = pos[j] + root;
        for (int a = 0; a < 3; ++a) j3d.at({t, j, static_cast<std::size_t>(a)}) = static_cast<float>(pos[j][a]);
        const auto& c = options.camera;
        seq.joints2d.at({t, j, 0}) = static_cast<float>(c.focal * cam.x() / cam.z() + c.cx);
        seq.joints2d.at({t, j, 1}) = static_cast<float>(c.focal * cam.y() / cam.z() + c.cy);
      }
    }
    seq.joints3d = std::move(j3d);
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

}  // namespace poseformer
