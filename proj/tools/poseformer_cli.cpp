// Command-line entry point: train, eval, infer, attn, complexity, synth.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "poseformer/checkpoint.hpp"
#include "poseformer/complexity.hpp"
#include "poseformer/data.hpp"
#include "poseformer/metrics.hpp"
#include "poseformer/training.hpp"
#include "poseformer/visualize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace poseformer;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string precision = "float32";
  std::string config_path;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

// Model flags left unset keep the config-file (or default) value.
struct ModelFlags {
  std::optional<std::size_t> frames, embed_dim, layers, heads;
  std::optional<double> mlp_ratio, drop_path;
  std::optional<std::string> arch;
  bool no_spatial_pos = false;
  bool no_temporal_pos = false;

  void add_to(CLI::App& cmd, bool with_training) {
    cmd.add_option("--frames", frames, "Receptive field f (odd)");
    cmd.add_option("--c,--embed-dim", embed_dim, "Spatial embedding width c");
    cmd.add_option("--layers", layers, "Layers per encoder (L_S = L_T)");
    cmd.add_option("--heads", heads, "Attention heads per encoder");
    cmd.add_option("--mlp-ratio", mlp_ratio, "MLP hidden width ratio r");
    if (with_training) {
      cmd.add_option("--drop-path", drop_path, "Stochastic depth rate");
      cmd.add_option("--arch", arch, "spatial-temporal | temporal-baseline");
      cmd.add_flag("--no-spatial-pos", no_spatial_pos, "Disable the spatial positional embedding");
      cmd.add_flag("--no-temporal-pos", no_temporal_pos, "Disable the temporal positional embedding");
    }
  }

  void apply(ModelConfig& m) const {
    if (frames) m.frames = *frames;
    if (embed_dim) m.embed_dim = *embed_dim;
    if (layers) m.spatial_layers = m.temporal_layers = *layers;
    if (heads) m.spatial_heads = m.temporal_heads = *heads;
    if (mlp_ratio) m.mlp_ratio = *mlp_ratio;
    if (drop_path) m.drop_path_rate = *drop_path;
    if (arch) m.architecture = architecture_from_string(*arch);
    if (no_spatial_pos) m.spatial_pos = false;
    if (no_temporal_pos) m.temporal_pos = false;
  }
};

json load_config_file(const Globals& g) {
  if (g.config_path.empty()) return json::object();
  std::ifstream in(g.config_path);
  if (!in) throw std::runtime_error("cannot open config file " + g.config_path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed config file " + g.config_path + ": " + e.what());
  }
}

void echo_config(const std::string& command, const Globals& g, json extra) {
  json j{{"command", command}, {"seed", g.seed}, {"precision", g.precision}, {"threads", g.threads}};
  j.update(extra);
  std::cout << "config: " << j.dump() << std::endl;
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("no such file: " + p.string());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, eval_data, out, resume;
  ModelFlags model;
  std::optional<std::size_t> epochs, batch_size, eval_interval;
  std::optional<double> lr;
  bool no_flip = false;
};

template <typename T>
int run_train(const Globals& g, const TrainArgs& a) {
  const json file = load_config_file(g);
  ModelConfig mc = ModelConfig::from_json(file.value("model", json::object()));
  TrainConfig tc = TrainConfig::from_json(file.value("train", json::object()));
  a.model.apply(mc);
  tc.seed = g.seed;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.eval_interval) tc.eval_interval = *a.eval_interval;
  if (a.lr) tc.lr = *a.lr;
  if (a.no_flip) tc.flip_augment = false;
  mc.validate();
  tc.validate();
  echo_config("train", g, {{"model", mc.to_json()}, {"train", tc.to_json()}, {"data", a.data}, {"out", a.out}});

  require_file(a.data);
  const Dataset train_ds = load_dataset(a.data);
  const WindowSet train = collect_windows(train_ds, mc.frames);
  std::optional<WindowSet> eval;
  if (!a.eval_data.empty()) {
    require_file(a.eval_data);
    eval = collect_windows(load_dataset(a.eval_data), mc.frames);
  }
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.json",
             json{{"model", mc.to_json()}, {"train", tc.to_json()}, {"precision", g.precision}}.dump(2) + "\n");

  PoseFormer<T> model(mc, g.seed);
  Trainer<T> trainer(model, train, tc, train_ds.skeleton.left_right_pairs, eval ? &*eval : nullptr, a.out);
  if (!a.resume.empty()) {
    require_file(a.resume);
    trainer.resume(a.resume);
  }
  while (trainer.epoch() < tc.epochs) {
    const EpochRecord r = trainer.run_epoch();
    std::cout << r.to_json().dump() << std::endl;
  }
  const fs::path final_ckpt = fs::path(a.out) / "final.pfck";
  trainer.save(final_ckpt);
  std::cout << "wrote " << final_ckpt.string() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, data, out;
  std::string protocol = "both";
  bool flip_average = false;
  bool no_scale = false;
};

template <typename T>
int run_eval(const Globals& g, const EvalArgs& a) {
  require_file(a.ckpt);
  require_file(a.data);
  const PoseFormer<T> model = load_model<T>(a.ckpt);
  echo_config("eval", g,
              {{"model", model.config().to_json()},
               {"ckpt", a.ckpt},
               {"data", a.data},
               {"protocol", a.protocol},
               {"flip_average", a.flip_average},
               {"alignment_scale", !a.no_scale}});
  const Dataset ds = load_dataset(a.data);
  const WindowSet windows = collect_windows(ds, model.config().frames);
  const EvalReport r = evaluate(model, windows, ds.skeleton.left_right_pairs, a.flip_average, !a.no_scale);
  json j = r.to_json();
  if (a.protocol == "1") j.erase("p_mpjpe_mm");
  if (a.protocol == "2") j.erase("mpjpe_mm");
  j["model"] = model.config().to_json();
  std::cout << j.dump(2) << std::endl;
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    write_text(dir / "report.json", j.dump(2) + "\n");
    std::ostringstream pj, pf;
    r.write_per_joint_csv(pj);
    r.write_per_frame_csv(pf);
    write_text(dir / "per_joint.csv", pj.str());
    write_text(dir / "per_frame.csv", pf.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string ckpt, data, out;
  bool flip_average = false;
};

template <typename T>
int run_infer(const Globals& g, const InferArgs& a) {
  require_file(a.ckpt);
  require_file(a.data);
  const PoseFormer<T> model = load_model<T>(a.ckpt);
  echo_config("infer", g,
              {{"model", model.config().to_json()}, {"ckpt", a.ckpt}, {"data", a.data}, {"out", a.out},
               {"flip_average", a.flip_average}});
  const Dataset ds = load_dataset(a.data);
  std::ostringstream csv;
  csv << "sequence,frame,joint,x_mm,y_mm,z_mm\n";
  char buf[128];
  for (std::size_t s = 0; s < ds.sequences.size(); ++s) {
    const WindowSet w = stack_windows(
        [&] {
          auto windows = make_windows(ds.sequences[s], model.config().frames, s);
          for (auto& win : windows) {
            if (win.target.empty()) win.target = Tensor<float>({model.config().joints, 3});
          }
          return windows;
        }());
    const Tensor<double> pred = predict_windows(model, w.inputs, ds.skeleton.left_right_pairs, a.flip_average);
    const std::size_t joints = model.config().joints;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < joints; ++j) {
        const double* p = pred.raw() + (i * joints + j) * 3;
        std::snprintf(buf, sizeof buf, ",%zu,%zu,%.6f,%.6f,%.6f\n", w.frame[i], j, p[0], p[1], p[2]);
        csv << ds.sequences[s].id << buf;
      }
    }
  }
  write_text(a.out, csv.str());
  std::cout << "wrote " << a.out << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct AttnArgs {
  std::string ckpt, data, out;
  std::size_t frame = 0;
  std::size_t sequence = 0;
};

template <typename T>
int run_attn(const Globals& g, const AttnArgs& a) {
  require_file(a.ckpt);
  require_file(a.data);
  const PoseFormer<T> model = load_model<T>(a.ckpt);
  echo_config("attn", g,
              {{"model", model.config().to_json()}, {"ckpt", a.ckpt}, {"data", a.data}, {"frame", a.frame},
               {"sequence", a.sequence}, {"out", a.out}});
  const Dataset ds = load_dataset(a.data);
  if (a.sequence >= ds.sequences.size()) {
    throw ConfigError("sequence index " + std::to_string(a.sequence) + " out of range");
  }
  const auto& seq = ds.sequences[a.sequence];
  if (a.frame >= seq.frames()) {
    throw ConfigError("frame " + std::to_string(a.frame) + " out of range for a " + std::to_string(seq.frames()) +
                      "-frame sequence");
  }
  const auto windows = make_windows(seq, model.config().frames, a.sequence);
  const WindowAttention attention = window_attention(model, windows[a.frame].input.template cast<T>());
  const fs::path dir(a.out);
  const std::size_t count = export_attention(attention, dir);
  std::cout << "wrote " << count << " attention maps to " << dir.string() << std::endl;
  return 0;
}

// ---------------------------------------------------------------------------

struct ComplexityArgs {
  ModelFlags model;
  std::string arch = "poseformer";
  bool as_json = false;
};

int run_complexity(const Globals& g, const ComplexityArgs& a) {
  const json file = load_config_file(g);
  ModelConfig mc = ModelConfig::from_json(file.value("model", json::object()));
  a.model.apply(mc);
  const bool joint_token = a.arch == "joint-token";
  if (!joint_token) mc.architecture = architecture_from_string(a.arch);
  mc.validate();
  echo_config("complexity", g, {{"model", mc.to_json()}, {"arch", a.arch}});
  const ComplexityReport r = joint_token ? joint_token_complexity(mc) : estimate_complexity(mc);
  if (a.as_json) {
    std::cout << r.to_json().dump(2) << std::endl;
    return 0;
  }
  std::printf("architecture: %s\nframes: %zu\nparameters: %llu (%.2fM)\nMFLOPs per frame: %.1f\ntokens: %llu\n",
              r.architecture.c_str(), r.frames, static_cast<unsigned long long>(r.parameters), r.parameters_millions(),
              r.mflops(), static_cast<unsigned long long>(r.tokens));
  for (const auto& t : r.terms) {
    std::printf("  %-20s params %10llu  MACs %12llu\n", t.name.c_str(), static_cast<unsigned long long>(t.parameters),
                static_cast<unsigned long long>(t.macs));
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t sequences = 4;
  std::size_t length = 100;
  std::string out;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  SynthOptions o;
  o.sequences = a.sequences;
  o.length = a.length;
  o.seed = g.seed;
  echo_config("synth", g,
              {{"sequences", o.sequences}, {"length", o.length}, {"camera", o.camera.to_json()}, {"fps", o.fps},
               {"out", a.out}});
  save_dataset(synth_generate(o), a.out);
  std::cout << "wrote " << a.sequences << " sequences to " << a.out << std::endl;
  return 0;
}

// Commands that read a checkpoint run in the precision it was written in.
bool checkpoint_is_double(Globals& g, const std::string& ckpt) {
  require_file(ckpt);
  g.precision = read_checkpoint_header(ckpt).precision;
  return g.precision == "float64";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D-to-3D pose lifting with spatial-temporal transformers"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--precision", g.precision, "Scalar type")->check(CLI::IsMember({"float32", "float64"}));
  app.add_option("--config", g.config_path, "JSON file with \"model\" and \"train\" sections; flags win");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a model on a dataset manifest");
  train->add_option("--data", ta.data, "Training manifest")->required();
  train->add_option("--eval-data", ta.eval_data, "Held-out manifest evaluated every --eval-interval epochs");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--epochs", ta.epochs, "Epoch count");
  train->add_option("--batch-size", ta.batch_size, "Mini-batch size");
  train->add_option("--eval-interval", ta.eval_interval, "Epochs between evaluations and checkpoints");
  train->add_option("--lr", ta.lr, "Initial learning rate");
  train->add_flag("--no-flip", ta.no_flip, "Disable flip augmentation");
  ta.model.add_to(*train, true);

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  eval->add_option("--data", ea.data, "Dataset manifest")->required();
  eval->add_option("--out", ea.out, "Directory for report.json and CSV curves");
  eval->add_option("--protocol", ea.protocol, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  eval->add_flag("--flip-average", ea.flip_average, "Average with the mirrored prediction");
  eval->add_flag("--no-scale", ea.no_scale, "Protocol 2 without scale");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Write per-frame 3D predictions as CSV");
  infer->add_option("--ckpt", ia.ckpt, "Checkpoint")->required();
  infer->add_option("--data", ia.data, "Dataset manifest")->required();
  infer->add_option("--out", ia.out, "Output CSV")->required();
  infer->add_flag("--flip-average", ia.flip_average, "Average with the mirrored prediction");

  AttnArgs aa;
  auto* attn = app.add_subcommand("attn", "Export attention maps of one window");
  attn->add_option("--ckpt", aa.ckpt, "Checkpoint")->required();
  attn->add_option("--data", aa.data, "Dataset manifest")->required();
  attn->add_option("--frame", aa.frame, "Center frame of the window")->required();
  attn->add_option("--sequence", aa.sequence, "Sequence index");
  attn->add_option("--out", aa.out, "Output directory")->required();

  ComplexityArgs ca;
  auto* complexity = app.add_subcommand("complexity", "Parameter and FLOP accounting");
  ca.model.add_to(*complexity, false);
  complexity->add_option("--arch", ca.arch, "poseformer, baseline or joint-token")
      ->check(CLI::IsMember({"poseformer", "baseline", "joint-token"}));
  complexity->add_flag("--json", ca.as_json, "Print JSON");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--sequences", sa.sequences, "Sequence count")->check(CLI::PositiveNumber);
  synth->add_option("--length", sa.length, "Frames per sequence")->check(CLI::PositiveNumber);
  synth->add_option("--out", sa.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Eigen::setNbThreads(static_cast<int>(g.threads));
  try {
    if (*train) return g.precision == "float64" ? run_train<double>(g, ta) : run_train<float>(g, ta);
    if (*eval) return checkpoint_is_double(g, ea.ckpt) ? run_eval<double>(g, ea) : run_eval<float>(g, ea);
    if (*infer) return checkpoint_is_double(g, ia.ckpt) ? run_infer<double>(g, ia) : run_infer<float>(g, ia);
    if (*attn) return checkpoint_is_double(g, aa.ckpt) ? run_attn<double>(g, aa) : run_attn<float>(g, aa);
    if (*complexity) return run_complexity(g, ca);
    if (*synth) return run_synth(g, sa);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 2;
}
