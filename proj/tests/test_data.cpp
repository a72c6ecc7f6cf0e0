#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "poseformer/data.hpp"
#include "poseformer/metrics.hpp"

using namespace poseformer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("poseformer_data_" + name);
  fs::remove_all(p);
  return p;
}

Dataset small_synth(std::size_t sequences = 3, std::size_t length = 40, std::uint64_t seed = 7) {
  SynthOptions o;
  o.sequences = sequences;
  o.length = length;
  o.seed = seed;
  return synth_generate(o);
}

}  // namespace

TEST(Skeleton, Human36mIsValidWithDisjointPairs) {
  const Skeleton s = Skeleton::human36m();
  EXPECT_EQ(s.joints(), 17u);
  EXPECT_NO_THROW(s.validate());
  Skeleton bad = s;
  bad.left_right_pairs.push_back({1, 7});
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.left_right_pairs.push_back({7, 20});
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = s;
  bad.parents[2] = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Normalize, CenterAndCornerAndInverse) {
  Camera cam;
  cam.width = 1000;
  cam.height = 800;
  Tensor<float> px({3, 2}, std::vector<float>{500, 400, 0, 0, 123.5f, 777.25f});
  const Tensor<float> n = normalize_2d(px, cam);
  EXPECT_EQ(n[0], 0.0f);
  EXPECT_EQ(n[1], 0.0f);
  EXPECT_EQ(n[2], -1.0f);
  EXPECT_EQ(n[3], -1.0f);
  const Tensor<float> back = denormalize_2d(n, cam);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_NEAR(back[i], px[i], 1e-4);
  cam.width = 0;
  EXPECT_THROW(normalize_2d(px, cam), ConfigError);
}

TEST(Windows, OnePerFrameWithReplicatePadding) {
  const Dataset ds = small_synth(1, 9);
  const PoseSequence& seq = ds.sequences[0];
  const auto windows = make_windows(seq, 9);
  ASSERT_EQ(windows.size(), 9u);
  const Tensor<float> norm = normalize_2d(seq.joints2d, seq.camera);
  const std::size_t frame = 17 * 2;
  // middle window is the exact sequence
  for (std::size_t i = 0; i < norm.size(); ++i) EXPECT_EQ(windows[4].input[i], norm[i]);
  // first window: 4 copies of frame 0, then frames 0..4
  for (std::size_t i = 0; i < 9; ++i) {
    const std::size_t src = i < 4 ? 0 : i - 4;
    for (std::size_t k = 0; k < frame; ++k) EXPECT_EQ(windows[0].input[i * frame + k], norm[src * frame + k]);
  }
  EXPECT_THROW(make_windows(seq, 8), ConfigError);
}

TEST(Windows, TargetsFollowSourceIndexAndAreRootRelative) {
  const Dataset ds = small_synth(1, 30);
  const PoseSequence& seq = ds.sequences[0];
  const auto windows = make_windows(seq, 27);
  std::vector<bool> seen(30, false);
  for (const auto& w : windows) {
    ASSERT_LT(w.frame, 30u);
    EXPECT_FALSE(seen[w.frame]);
    seen[w.frame] = true;
    for (std::size_t k = 0; k < 17 * 3; ++k) EXPECT_EQ(w.target[k], seq.joints3d->at({w.frame, k / 3, k % 3}));
  }
}

TEST(Windows, TargetsSubtractTheRootWhenTheSourceIsNot) {
  Dataset ds = small_synth(1, 5);
  PoseSequence& seq = ds.sequences[0];
  Tensor<float>& j3d = *seq.joints3d;
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t j = 0; j < 17; ++j) j3d.at({t, j, 2}) += 100.0f;
  }
  for (const auto& w : make_windows(seq, 3)) {
    EXPECT_EQ(w.target[0], 0.0f);
    EXPECT_EQ(w.target[1], 0.0f);
    EXPECT_EQ(w.target[2], 0.0f);
  }
}

TEST(Flip, InvolutionAndMidlineJoints) {
  const Dataset ds = small_synth(1, 12);
  const auto& pairs = ds.skeleton.left_right_pairs;
  const PoseWindow w = make_windows(ds.sequences[0], 9)[5];
  const PoseWindow f = flip_horizontal(w, pairs);
  const PoseWindow ff = flip_horizontal(f, pairs);
  EXPECT_EQ(ff.input, w.input);
  EXPECT_EQ(ff.target, w.target);
  for (std::size_t j : {0, 7, 8, 9, 10}) {
    EXPECT_EQ(f.target.at({j, 0}), -w.target.at({j, 0}));
    EXPECT_EQ(f.target.at({j, 1}), w.target.at({j, 1}));
    EXPECT_EQ(f.target.at({j, 2}), w.target.at({j, 2}));
  }
  // left elbow (12) receives the mirrored right elbow (15)
  EXPECT_EQ(f.target.at({12, 0}), -w.target.at({15, 0}));
  EXPECT_EQ(f.target.at({12, 2}), w.target.at({15, 2}));
  EXPECT_THROW(flip_horizontal(w, {{0, 40}}), ConfigError);
}

TEST(Flip, PreservesMpjpeBetweenPoses) {
  const Dataset ds = small_synth(2, 10);
  const auto& pairs = ds.skeleton.left_right_pairs;
  const auto a = make_windows(ds.sequences[0], 1);
  const auto b = make_windows(ds.sequences[1], 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor<double> pa = a[i].target.cast<double>();
    const Tensor<double> pb = b[i].target.cast<double>();
    Tensor<float> fa = a[i].target, fb = b[i].target;
    flip_poses_3d(fa, pairs);
    flip_poses_3d(fb, pairs);
    EXPECT_NEAR(mpjpe(fa.cast<double>(), fb.cast<double>()), mpjpe(pa, pb), 1e-9);
  }
}

TEST(Synth, ConstantBonesZeroRootAndExactReprojection) {
  const Dataset ds = small_synth(3, 60);
  const auto bones = synth_bone_lengths();
  const auto& parents = ds.skeleton.parents;
  for (const auto& seq : ds.sequences) {
    ASSERT_TRUE(seq.root_mm.has_value());
    const auto& root = *seq.root_mm;
    const Tensor<float>& p3 = *seq.joints3d;
    for (std::size_t t = 0; t < seq.frames(); ++t) {
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(p3.at({t, 0, k}), 0.0f);
      for (std::size_t j = 1; j < 17; ++j) {
        const auto p = static_cast<std::size_t>(parents[j]);
        double sq = 0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double d = p3.at({t, j, k}) - p3.at({t, p, k});
          sq += d * d;
        }
        EXPECT_NEAR(std::sqrt(sq), bones[j], 1e-3);
        const double x = p3.at({t, j, 0}) + root[0];
        const double y = p3.at({t, j, 1}) + root[1];
        const double z = p3.at({t, j, 2}) + root[2];
        EXPECT_NEAR(seq.camera.focal * x / z + seq.camera.cx, seq.joints2d.at({t, j, 0}), 1e-3);
        EXPECT_NEAR(seq.camera.focal * y / z + seq.camera.cy, seq.joints2d.at({t, j, 1}), 1e-3);
        EXPECT_GE(seq.joints2d.at({t, j, 0}), 0.0f);
        EXPECT_LE(seq.joints2d.at({t, j, 0}), seq.camera.width);
        EXPECT_GE(seq.joints2d.at({t, j, 1}), 0.0f);
        EXPECT_LE(seq.joints2d.at({t, j, 1}), seq.camera.height);
      }
    }
  }
}

TEST(Synth, PinholeArithmetic) {
  // A point at (X, Z) = (400, 4000) with focal 1000 and cx 500 lands on x = 600.
  Camera cam;
  EXPECT_DOUBLE_EQ(cam.focal * 400.0 / 4000.0 + cam.cx, 600.0);
}

TEST(Synth, DeterministicPerSeedAndSequence) {
  EXPECT_EQ(small_synth(2, 20, 3), small_synth(2, 20, 3));
  EXPECT_NE(small_synth(2, 20, 3).sequences[0].joints2d, small_synth(2, 20, 4).sequences[0].joints2d);
  // sequence i does not depend on how many sequences are generated
  EXPECT_EQ(small_synth(1, 20, 3).sequences[0], small_synth(3, 20, 3).sequences[0]);
}

TEST(DatasetIo, RoundTripIsBitExactAndLoadsWithoutWarnings) {
  const Dataset ds = small_synth(3, 25);
  const fs::path dir = scratch("roundtrip");
  save_dataset(ds, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "synth_0000.p2d"));
  EXPECT_TRUE(fs::exists(dir / "synth_0000.p3d"));
  std::vector<std::string> warnings;
  const Dataset back = load_dataset(dir / "manifest.json", &warnings);
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(back, ds);
  EXPECT_EQ(load_dataset(dir), ds);
}

TEST(DatasetIo, TruncatedBlobNamesTheSequence) {
  const fs::path dir = scratch("truncated");
  save_dataset(small_synth(2, 10), dir);
  fs::resize_file(dir / "synth_0001.p3d", 100);
  try {
    load_dataset(dir);
    FAIL() << "truncated blob accepted";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_0001"), std::string::npos);
  }
}

TEST(DatasetIo, NonFiniteValueNamesSequenceAndFrame) {
  Dataset ds = small_synth(1, 10);
  ds.sequences[0].joints2d.at({6, 3, 1}) = std::nanf("");
  const fs::path dir = scratch("nonfinite");
  save_dataset(ds, dir);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 6"), std::string::npos);
  }
}

TEST(DatasetIo, MalformedManifestIsAParseError) {
  const fs::path dir = scratch("malformed");
  fs::create_directories(dir);
  std::ofstream(dir / "manifest.json") << "{ not json";
  EXPECT_THROW(load_dataset(dir), ParseError);
  std::ofstream(dir / "manifest.json", std::ios::trunc) << R"({"sequences": []})";
  EXPECT_THROW(load_dataset(dir), ParseError);
}

TEST(DatasetIo, OutOfImagePointsWarnButLoad) {
  Dataset ds = small_synth(1, 5);
  ds.sequences[0].joints2d.at({2, 4, 0}) = -20.0f;
  const fs::path dir = scratch("outside");
  save_dataset(ds, dir);
  std::vector<std::string> warnings;
  load_dataset(dir, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("frame 2"), std::string::npos);
}

TEST(WindowSet, GatherCopiesRowsInOrder) {
  const Dataset ds = small_synth(2, 6);
  const WindowSet set = collect_windows(ds, 3);
  ASSERT_EQ(set.size(), 12u);
  EXPECT_EQ(set.sequence[7], 1u);
  EXPECT_EQ(set.frame[7], 1u);
  auto [x, y] = set.gather({7, 0});
  const std::size_t row = 3 * 17 * 2;
  for (std::size_t k = 0; k < row; ++k) EXPECT_EQ(x[k], set.inputs[7 * row + k]);
  for (std::size_t k = 0; k < 51; ++k) EXPECT_EQ(y[51 + k], set.targets[k]);
}
