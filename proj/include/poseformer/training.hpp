#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "poseformer/data.hpp"
#include "poseformer/metrics.hpp"
#include "poseformer/model.hpp"
#include "poseformer/optim.hpp"

namespace poseformer {

/// Optimization schedule. The stochastic-depth rate belongs to ModelConfig
/// because it shapes the encoder's training-mode forward pass.
struct TrainConfig {
  std::size_t epochs = 130;
  double lr = 2e-4;
  double lr_decay = 0.98;  // per epoch
  double weight_decay = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 0;  // epochs between evaluations/checkpoints; 0 disables
  bool flip_augment = true;
  double flip_probability = 0.5;
  bool flip_average_eval = true;
  double grad_clip = 0.0;  // global L2 norm bound; 0 disables

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// base * decay^epoch, epochs counted from 0.
double lr_at(const TrainConfig& config, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mm, mean over every augmented training sample of the epoch
  std::optional<double> eval_mpjpe;
  std::optional<double> eval_p_mpjpe;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  std::vector<double> losses() const;
};

/// Training stopped on a NaN or infinite loss.
class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::filesystem::path last_good)
      : std::runtime_error(what), last_good_checkpoint(std::move(last_good)) {}
  std::filesystem::path last_good_checkpoint;  // empty when none was written
};

/// Eval-mode predictions [N, J, 3] in millimeters. With `flip_average`, each
/// prediction is the mean of the plain pass and the unflipped pass on the
/// mirrored input.
template <typename T>
Tensor<double> predict_windows(const PoseFormer<T>& model, const Tensor<float>& inputs,
                               const std::vector<std::pair<std::size_t, std::size_t>>& pairs, bool flip_average,
                               std::size_t batch_size = 256);

template <typename T>
EvalReport evaluate(const PoseFormer<T>& model, const WindowSet& windows,
                    const std::vector<std::pair<std::size_t, std::size_t>>& pairs, bool flip_average,
                    bool with_scale = true);

/// Mini-batch Adam training over a fixed window set. Every random draw comes
/// from streams keyed by (seed, purpose, epoch), so a run resumed from an
/// epoch checkpoint continues bit-identically.
template <typename T>
class Trainer {
 public:
  /// `out_dir` receives `train_log.jsonl` and `ckpt/epoch_<n>.pfck`; leave it
  /// empty to keep everything in memory.
  Trainer(PoseFormer<T>& model, const WindowSet& train, TrainConfig config,
          std::vector<std::pair<std::size_t, std::size_t>> pairs, const WindowSet* eval = nullptr,
          std::filesystem::path out_dir = {});

  /// One pass over the shuffled training windows; evaluates and checkpoints
  /// when the epoch count hits the eval interval.
  EpochRecord run_epoch();
  /// Runs the remaining epochs up to config().epochs.
  const TrainLog& train();
  /// Restores model, optimizer and epoch counter from a checkpoint written by this class.
  void resume(const std::filesystem::path& checkpoint);
  /// Writes `path` with the current model, optimizer and next-epoch RNG streams.
  void save(const std::filesystem::path& path) const;

  std::size_t epoch() const { return epoch_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& config() const { return config_; }
  const OptimizerState<T>& optimizer() const { return optimizer_; }

 private:
  PoseFormer<T>& model_;
  const WindowSet& train_;
  TrainConfig config_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  const WindowSet* eval_;
  std::filesystem::path out_dir_;
  OptimizerState<T> optimizer_;
  std::size_t epoch_ = 0;
  TrainLog log_;
  std::filesystem::path last_checkpoint_;
};

}  // namespace poseformer
