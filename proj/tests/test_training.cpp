#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "poseformer/checkpoint.hpp"
#include "poseformer/training.hpp"

using namespace poseformer;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.frames = 3;
  c.embed_dim = 8;
  c.spatial_heads = 2;
  c.temporal_heads = 4;
  c.spatial_layers = 1;
  c.temporal_layers = 1;
  return c;
}

struct Data {
  Dataset ds;
  WindowSet windows;
  Data() {
    SynthOptions o;
    o.sequences = 2;
    o.length = 20;
    o.seed = 11;
    ds = synth_generate(o);
    windows = collect_windows(ds, 3);
  }
};

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.seed = 5;
  t.lr = 1e-3;
  return t;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("poseformer_train_" + name);
  fs::remove_all(p);
  return p;
}

template <typename T>
void expect_same_parameters(const PoseFormer<T>& a, const PoseFormer<T>& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters().all()[i].var.value(), b.parameters().all()[i].var.value())
        << a.parameters().all()[i].name;
  }
}

}  // namespace

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(TrainConfig::from_json(t.to_json()), t);
  t.lr = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = TrainConfig{};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1}}), ConfigError);
}

TEST(Schedule, ExponentialDecayPerEpoch) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(lr_at(t, 0), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(t, 1), 2e-4 * 0.98);
  EXPECT_NEAR(lr_at(t, 10), 2e-4 * std::pow(0.98, 10), 1e-18);
}

TEST(Trainer, SameSeedGivesBitIdenticalRuns) {
  Data d;
  PoseFormer<float> a(small_model(), 1), b(small_model(), 1);
  Trainer<float> ta(a, d.windows, quick(3), d.ds.skeleton.left_right_pairs);
  Trainer<float> tb(b, d.windows, quick(3), d.ds.skeleton.left_right_pairs);
  const auto la = ta.train().losses();
  const auto lb = tb.train().losses();
  EXPECT_EQ(la, lb);
  expect_same_parameters(a, b);
  EXPECT_EQ(ta.log().epochs[2].lr, lr_at(quick(3), 2));
}

TEST(Trainer, ResumeContinuesBitIdentically) {
  Data d;
  const fs::path dir = fresh_dir("resume");
  TrainConfig cfg = quick(4);
  cfg.eval_interval = 2;

  PoseFormer<float> full(small_model(), 2);
  Trainer<float> tf(full, d.windows, cfg, d.ds.skeleton.left_right_pairs, &d.windows, dir);
  tf.train();
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "epoch_2.pfck"));
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "epoch_4.pfck"));

  PoseFormer<float> resumed(small_model(), 77);
  Trainer<float> tr(resumed, d.windows, cfg, d.ds.skeleton.left_right_pairs, &d.windows);
  tr.resume(dir / "ckpt" / "epoch_2.pfck");
  EXPECT_EQ(tr.epoch(), 2u);
  tr.train();
  expect_same_parameters(full, resumed);
  EXPECT_EQ(tr.log().losses(), tf.log().losses());
  EXPECT_EQ(tr.optimizer().step, tf.optimizer().step);
  ASSERT_TRUE(tr.log().epochs[3].eval_mpjpe.has_value());
  EXPECT_EQ(*tr.log().epochs[3].eval_mpjpe, *tf.log().epochs[3].eval_mpjpe);

  std::ifstream log(dir / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) {
    EXPECT_EQ(nlohmann::json::parse(line).at("epoch").get<std::size_t>(), lines);
    ++lines;
  }
  EXPECT_EQ(lines, 4u);
}

TEST(Trainer, ResumeRefusesADifferentSeed) {
  Data d;
  const fs::path dir = fresh_dir("seed");
  PoseFormer<float> m(small_model(), 2);
  Trainer<float> t(m, d.windows, quick(1), d.ds.skeleton.left_right_pairs);
  t.train();
  t.save(dir / "a.pfck");
  TrainConfig other = quick(1);
  other.seed = 6;
  Trainer<float> t2(m, d.windows, other, d.ds.skeleton.left_right_pairs);
  EXPECT_THROW(t2.resume(dir / "a.pfck"), CheckpointMismatch);
}

TEST(Trainer, LossDecreasesOnASmallSet) {
  Data d;
  PoseFormer<float> m(small_model(), 3);
  TrainConfig cfg = quick(15);
  cfg.flip_augment = false;
  Trainer<float> t(m, d.windows, cfg, d.ds.skeleton.left_right_pairs);
  const auto losses = t.train().losses();
  EXPECT_LT(losses.back(), 0.7 * losses.front());
}

TEST(Trainer, NonFiniteLossStopsWithTheLastCheckpoint) {
  Data d;
  const fs::path dir = fresh_dir("nan");
  TrainConfig cfg = quick(3);
  cfg.eval_interval = 1;
  PoseFormer<float> m(small_model(), 4);
  Trainer<float> t(m, d.windows, cfg, d.ds.skeleton.left_right_pairs, nullptr, dir);
  t.run_epoch();
  m.parameters().find("head.linear.b")->var.mutable_value()[0] = std::nanf("");
  try {
    t.run_epoch();
    FAIL() << "NaN loss went unnoticed";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.last_good_checkpoint, dir / "ckpt" / "epoch_1.pfck");
    EXPECT_NE(std::string(e.what()).find("epoch_1.pfck"), std::string::npos);
  }
}

TEST(Trainer, RejectsWindowsOfTheWrongLength) {
  Data d;
  ModelConfig c = small_model();
  c.frames = 5;
  PoseFormer<float> m(c, 1);
  EXPECT_THROW(Trainer<float>(m, d.windows, quick(1), d.ds.skeleton.left_right_pairs), DimensionError);
}

TEST(Evaluate, FlipAverageIsMeanOfBothPasses) {
  Data d;
  PoseFormer<double> m(small_model(), 8);
  const auto& pairs = d.ds.skeleton.left_right_pairs;
  const Tensor<double> plain = predict_windows(m, d.windows.inputs, pairs, false, 7);
  const Tensor<double> avg = predict_windows(m, d.windows.inputs, pairs, true, 7);
  Tensor<float> mirrored_in = d.windows.inputs;
  flip_poses_2d(mirrored_in, pairs);
  Tensor<float> mirrored = predict_windows(m, mirrored_in, pairs, false).cast<float>();
  flip_poses_3d(mirrored, pairs);
  for (std::size_t i = 0; i < avg.size(); ++i) {
    EXPECT_NEAR(avg[i], 0.5 * (plain[i] + static_cast<double>(mirrored[i])), 1e-4);
  }
  const EvalReport r = evaluate(m, d.windows, pairs, true);
  EXPECT_TRUE(r.flip_averaged);
  EXPECT_EQ(r.samples, d.windows.size());
}

TEST(Evaluate, BatchSizeDoesNotChangePredictions) {
  Data d;
  PoseFormer<double> m(small_model(), 9);
  const auto& pairs = d.ds.skeleton.left_right_pairs;
  const Tensor<double> a = predict_windows(m, d.windows.inputs, pairs, false, 1);
  const Tensor<double> b = predict_windows(m, d.windows.inputs, pairs, false, 64);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}
