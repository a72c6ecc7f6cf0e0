#include "poseformer/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "poseformer/checkpoint.hpp"

namespace poseformer {

namespace fs = std::filesystem;
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!(lr_decay > 0 && lr_decay <= 1)) throw ConfigError("lr decay must lie in (0, 1]");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(grad_clip >= 0)) throw ConfigError("gradient clip bound must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{{"epochs", epochs},
                        {"lr", lr},
                        {"lr_decay", lr_decay},
                        {"weight_decay", weight_decay},
                        {"batch_size", batch_size},
                        {"seed", seed},
                        {"eval_interval", eval_interval},
                        {"flip_augment", flip_augment},
                        {"flip_probability", flip_probability},
                        {"flip_average_eval", flip_average_eval},
                        {"grad_clip", grad_clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  const TrainConfig d;
  for (const auto& [key, _] : j.items()) {
    if (!d.to_json().contains(key)) throw ConfigError("unknown train config key '" + key + "'");
  }
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", d.epochs);
    c.lr = j.value("lr", d.lr);
    c.lr_decay = j.value("lr_decay", d.lr_decay);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.eval_interval = j.value("eval_interval", d.eval_interval);
    c.flip_augment = j.value("flip_augment", d.flip_augment);
    c.flip_probability = j.value("flip_probability", d.flip_probability);
    c.flip_average_eval = j.value("flip_average_eval", d.flip_average_eval);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  return c;
}

double lr_at(const TrainConfig& config, std::size_t epoch) {
  return config.lr * std::pow(config.lr_decay, static_cast<double>(epoch));
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch}, {"lr", lr}, {"train_loss_mm", train_loss}, {"wall_seconds", wall_seconds}};
  if (eval_mpjpe) j["eval_mpjpe_mm"] = *eval_mpjpe;
  if (eval_p_mpjpe) j["eval_p_mpjpe_mm"] = *eval_p_mpjpe;
  return j;
}

namespace {

EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.train_loss = j.at("train_loss_mm").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  if (j.contains("eval_mpjpe_mm")) r.eval_mpjpe = j.at("eval_mpjpe_mm").get<double>();
  if (j.contains("eval_p_mpjpe_mm")) r.eval_p_mpjpe = j.at("eval_p_mpjpe_mm").get<double>();
  return r;
}

template <typename T>
Tensor<T> to_precision(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    return t.cast<T>();
  }
}

// Flips sample i of a [B, ...] stack when flags[i] is set.
void flip_selected(Tensor<float>& stack, std::size_t dims, const std::vector<bool>& flags, const Pairs& pairs) {
  const std::size_t row = stack.size() / stack.dim(0);
  const std::size_t joints = stack.dim(-2);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    Tensor<float> one({row / (joints * dims), joints, dims},
                      std::vector<float>(stack.raw() + i * row, stack.raw() + (i + 1) * row));
    if (dims == 2) {
      flip_poses_2d(one, pairs);
    } else {
      flip_poses_3d(one, pairs);
    }
    std::copy_n(one.raw(), row, stack.raw() + i * row);
  }
}

template <typename T>
void clip_gradients(ParameterStore<T>& params, double bound) {
  double sq = 0;
  for (const auto& p : params.all()) {
    if (!p.var.has_grad()) continue;
    for (T g : p.var.grad().data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > bound)) return;
  const T s = static_cast<T>(bound / norm);
  for (auto& p : params.all()) {
    if (!p.var.has_grad()) continue;
    for (T& g : p.var.mutable_grad().data()) g *= s;
  }
}

}  // namespace

std::vector<double> TrainLog::losses() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.train_loss);
  return out;
}

template <typename T>
Tensor<double> predict_windows(const PoseFormer<T>& model, const Tensor<float>& inputs, const Pairs& pairs,
                               bool flip_average, std::size_t batch_size) {
  const std::size_t n = inputs.dim(0);
  const std::size_t joints = model.config().joints;
  const std::size_t in_row = inputs.size() / n;
  Tensor<double> out({n, joints, 3});
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    Shape shape = inputs.shape();
    shape[0] = b;
    Tensor<float> x(shape, std::vector<float>(inputs.raw() + start * in_row, inputs.raw() + (start + b) * in_row));
    Tensor<T> y = predict(model, to_precision<T>(x));
    if (flip_average) {
      flip_poses_2d(x, pairs);
      Tensor<float> mirrored = predict(model, to_precision<T>(x)).template cast<float>();
      flip_poses_3d(mirrored, pairs);
      for (std::size_t i = 0; i < y.size(); ++i) {
        out[start * joints * 3 + i] = 0.5 * (static_cast<double>(y[i]) + static_cast<double>(mirrored[i]));
      }
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) out[start * joints * 3 + i] = static_cast<double>(y[i]);
    }
  }
  return out;
}

template <typename T>
EvalReport evaluate(const PoseFormer<T>& model, const WindowSet& windows, const Pairs& pairs, bool flip_average,
                    bool with_scale) {
  const Tensor<double> pred = predict_windows(model, windows.inputs, pairs, flip_average);
  EvalReport r = make_report(pred, windows.targets.cast<double>(), windows.frame, with_scale);
  r.flip_averaged = flip_average;
  return r;
}

template <typename T>
Trainer<T>::Trainer(PoseFormer<T>& model, const WindowSet& train, TrainConfig config, Pairs pairs,
                    const WindowSet* eval, fs::path out_dir)
    : model_(model),
      train_(train),
      config_(std::move(config)),
      pairs_(std::move(pairs)),
      eval_(eval),
      out_dir_(std::move(out_dir)) {
  config_.validate();
  if (train_.size() == 0) throw ConfigError("training set is empty");
  const Shape& s = train_.inputs.shape();
  if (s[1] != model_.config().frames || s[2] != model_.config().joints) {
    throw DimensionError("training windows " + shape_str(s) + " do not fit a model with " +
                         std::to_string(model_.config().frames) + " frames and " +
                         std::to_string(model_.config().joints) + " joints");
  }
  optimizer_ = make_optimizer_state(model_.parameters(), config_.lr, config_.weight_decay);
}

template <typename T>
EpochRecord Trainer<T>::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t e = epoch_;
  Rng shuffle_rng(config_.seed, "shuffle", e);
  Rng flip_rng(config_.seed, "flip", e);
  Rng drop_rng(config_.seed, "droppath", e);

  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, shuffle_rng);

  optimizer_.lr = lr_at(config_, e);
  double loss_sum = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    auto [x, y] = train_.gather(idx);
    if (config_.flip_augment) {
      std::vector<bool> flags(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) flags[i] = flip_rng.bernoulli(config_.flip_probability);
      flip_selected(x, 2, flags, pairs_);
      flip_selected(y, 3, flags, pairs_);
    }
    ForwardMode mode{true, &drop_rng};
    Var<T> pred = model_.forward(Var<T>(to_precision<T>(x)), mode);
    Var<T> loss = ops::mpjpe_loss(pred, Var<T>(to_precision<T>(y)));
    const double value = static_cast<double>(loss.value()[0]);
    if (!std::isfinite(value)) {
      throw NonFiniteLossError("non-finite training loss at epoch " + std::to_string(e) + ", batch starting at " +
                                   std::to_string(begin) +
                                   (last_checkpoint_.empty() ? std::string(" (no checkpoint written yet)")
                                                             : "; last good checkpoint: " + last_checkpoint_.string()),
                               last_checkpoint_);
    }
    loss.backward();
    if (config_.grad_clip > 0) clip_gradients(model_.parameters(), config_.grad_clip);
    adam_step(model_.parameters(), optimizer_);
    loss_sum += value * static_cast<double>(idx.size());
  }

  EpochRecord rec;
  rec.epoch = e;
  rec.lr = optimizer_.lr;
  rec.train_loss = loss_sum / static_cast<double>(train_.size());
  ++epoch_;

  const bool milestone = config_.eval_interval > 0 && epoch_ % config_.eval_interval == 0;
  if (milestone && eval_) {
    const EvalReport r = evaluate(model_, *eval_, pairs_, config_.flip_average_eval);
    rec.eval_mpjpe = r.mpjpe;
    rec.eval_p_mpjpe = r.p_mpjpe;
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_.epochs.push_back(rec);

  if (!out_dir_.empty()) {
    fs::create_directories(out_dir_);
    std::ofstream log(out_dir_ / "train_log.jsonl", std::ios::app);
    log << rec.to_json().dump() << '\n';
    if (milestone) {
      const fs::path ckpt = out_dir_ / "ckpt" / ("epoch_" + std::to_string(epoch_) + ".pfck");
      save(ckpt);
      last_checkpoint_ = ckpt;
    }
  }
  return rec;
}

template <typename T>
const TrainLog& Trainer<T>::train() {
  while (epoch_ < config_.epochs) run_epoch();
  return log_;
}

template <typename T>
void Trainer<T>::save(const fs::path& path) const {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : log_.epochs) records.push_back(r.to_json());
  const nlohmann::json meta{{"train", config_.to_json()}, {"epoch", epoch_}, {"log", std::move(records)}};
  const std::vector<NamedRngState> rng = {{"shuffle", Rng(config_.seed, "shuffle", epoch_).state()},
                                          {"flip", Rng(config_.seed, "flip", epoch_).state()},
                                          {"droppath", Rng(config_.seed, "droppath", epoch_).state()}};
  save_checkpoint(path, model_, &optimizer_, rng, meta);
}

template <typename T>
void Trainer<T>::resume(const fs::path& checkpoint) {
  OptimizerState<T> opt;
  const LoadedCheckpoint loaded = load_checkpoint(checkpoint, model_, &opt);
  if (!loaded.has_optimizer) throw IntegrityError("checkpoint " + checkpoint.string() + " has no optimizer state");
  const auto& meta = loaded.header.meta;
  if (!meta.contains("epoch") || !meta.contains("train")) {
    throw IntegrityError("checkpoint " + checkpoint.string() + " was not written by a trainer");
  }
  const TrainConfig saved = TrainConfig::from_json(meta.at("train"));
  if (saved.seed != config_.seed) {
    throw CheckpointMismatch("checkpoint seed " + std::to_string(saved.seed) + " differs from the run seed " +
                             std::to_string(config_.seed));
  }
  const auto next = meta.at("epoch").get<std::size_t>();
  for (const auto& [name, state] : loaded.rng) {
    if (Rng(config_.seed, name, next).state() != state) {
      throw IntegrityError("checkpoint RNG stream '" + name + "' is inconsistent with epoch " + std::to_string(next));
    }
  }
  optimizer_ = std::move(opt);
  optimizer_.weight_decay = config_.weight_decay;
  epoch_ = next;
  log_.epochs.clear();
  for (const auto& r : meta.value("log", nlohmann::json::array())) log_.epochs.push_back(record_from_json(r));
  last_checkpoint_ = checkpoint;
}

template class Trainer<float>;
template class Trainer<double>;
template Tensor<double> predict_windows(const PoseFormer<float>&, const Tensor<float>&, const Pairs&, bool,
                                        std::size_t);
template Tensor<double> predict_windows(const PoseFormer<double>&, const Tensor<float>&, const Pairs&, bool,
                                        std::size_t);
template EvalReport evaluate(const PoseFormer<float>&, const WindowSet&, const Pairs&, bool, bool);
template EvalReport evaluate(const PoseFormer<double>&, const WindowSet&, const Pairs&, bool, bool);

}  // namespace poseformer
