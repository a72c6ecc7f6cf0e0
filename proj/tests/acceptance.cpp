// Acceptance suite. Each criterion prints one PASS/FAIL line per check and
// exits non-zero when any check fails.
//
//   acceptance params | flops | gradcheck | overfit | ordering | metrics | formats | all

#include <Eigen/Geometry>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "poseformer/checkpoint.hpp"
#include "poseformer/complexity.hpp"
#include "poseformer/data.hpp"
#include "poseformer/gradcheck.hpp"
#include "poseformer/metrics.hpp"
#include "poseformer/training.hpp"
#include "poseformer/visualize.hpp"

using namespace poseformer;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void check(bool ok, const std::string& criterion, const std::string& what) {
  std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", criterion.c_str(), what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void info(const std::string& criterion, const std::string& what) {
  std::printf("[INFO] %s: %s\n", criterion.c_str(), what.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t env_size(const char* name, std::size_t fallback) {
  const char* v = std::getenv(name);
  return v ? static_cast<std::size_t>(std::strtoull(v, nullptr, 10)) : fallback;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("poseformer_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Dataset synth(std::size_t sequences, std::size_t length, std::uint64_t seed) {
  SynthOptions o;
  o.sequences = sequences;
  o.length = length;
  o.seed = seed;
  return synth_generate(o);
}

// ---------------------------------------------------------------------------

void params() {
  const std::pair<std::size_t, double> rows[] = {{9, 9.58}, {27, 9.59}, {81, 9.60}};
  for (auto [f, target] : rows) {
    ModelConfig c;
    c.frames = f;
    const double m = static_cast<double>(count_parameters(c)) / 1e6;
    const double rel = (m - target) / target;
    check(std::abs(rel) <= 0.01, "1 params", fmt("f=%zu %.4fM vs %.2fM (%+.2f%%, tol 1%%)", f, m, target, 100 * rel));
  }
  // The closed form must agree with what the model actually allocates.
  ModelConfig c;
  const PoseFormer<float> model(c, 0);
  check(model.parameters().scalar_count() == count_parameters(c), "1 params",
        fmt("instantiated f=9 model holds %zu scalars, closed form %llu", model.parameters().scalar_count(),
            static_cast<unsigned long long>(count_parameters(c))));
}

void flops() {
  const std::pair<std::size_t, double> rows[] = {{9, 150}, {27, 452}, {81, 1358}};
  for (auto [f, target] : rows) {
    ModelConfig c;
    c.frames = f;
    const double mf = estimate_complexity(c).mflops();
    const double rel = (mf - target) / target;
    check(std::abs(rel) <= 0.20, "2 flops", fmt("f=%zu %.1f MFLOPs vs %.0f (%+.1f%%, tol 20%%)", f, mf, target, 100 * rel));
  }
  ModelConfig c;
  c.frames = 243;
  const ComplexityReport jt = joint_token_complexity(c);
  check(jt.tokens == 4131, "2 flops", fmt("joint-per-token sequence at f=243, J=17: %llu tokens (want 4131)",
                                          static_cast<unsigned long long>(jt.tokens)));
}

void gradcheck() {
  ModelConfig c;
  c.frames = 3;
  c.joints = 4;
  c.embed_dim = 8;
  c.spatial_layers = c.temporal_layers = 2;
  c.spatial_heads = c.temporal_heads = 2;
  c.drop_path_rate = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const bool perturbed : {false, true}) {
    PoseFormer<double> model(c, 3);
    if (perturbed) {
      // Moves weights off their small initial scale so attention is far from uniform.
      Rng rng(3, "perturb");
      for (auto& p : model.parameters().all()) {
        for (double& v : p.var.mutable_value().data()) v += 0.2 * rng.normal();
      }
    }
    Rng rng(4, "gradcheck-data");
    Tensor<double> x({2, 3, 4, 2}), y({2, 4, 3});
    for (double& v : x.data()) v = 2.0 * rng.uniform() - 1.0;
    for (double& v : y.data()) v = 300.0 * rng.normal();
    const Var<double> xv(x), yv(y);
    const GradCheckReport r = finite_diff_check(
        model.parameters(), [&] { return ops::mpjpe_loss(model.forward(xv, ForwardMode{}), yv); }, 1e-4);
    std::string worst;
    double elementwise = 0;
    std::size_t non_finite = 0;
    for (const auto& p : r.parameters) {
      if (p.max_rel_error == r.max_rel_error) worst = p.name;
      elementwise = std::max(elementwise, p.max_elementwise_rel);
      non_finite += p.non_finite;
    }
    const char* which = perturbed ? "perturbed" : "initial";
    check(r.passed, "3 gradcheck",
          fmt("%s weights, %zu parameters: max relative error %.2e (worst %s, tol 1e-4), %zu non-finite", which,
              r.parameters.size(), r.max_rel_error, worst.c_str(), non_finite));
    info("3 gradcheck", fmt("%s weights: largest element-wise relative error %.2e", which, elementwise));
  }
  info("3 gradcheck", fmt("runtime %.1f s (budget 120 s)", seconds_since(t0)));
}

void overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = synth(2, 100, 1);
  const WindowSet windows = collect_windows(ds, 9);
  check(windows.size() == 200, "4 overfit", fmt("%zu synthetic training windows (want 200)", windows.size()));

  PoseFormer<float> model(ModelConfig{}, 1);
  TrainConfig tc;
  tc.epochs = 500;
  tc.batch_size = 64;
  tc.seed = 1;
  const auto& pairs = ds.skeleton.left_right_pairs;
  Trainer<float> trainer(model, windows, tc, pairs);
  info("4 overfit", "model " + model.config().to_json().dump() + " train " + tc.to_json().dump());
  while (trainer.epoch() < tc.epochs) {
    const EpochRecord r = trainer.run_epoch();
    if (trainer.epoch() % 50 == 0) {
      const double train_mpjpe = evaluate(model, windows, pairs, false).mpjpe;
      info("4 overfit", fmt("epoch %zu lr %.3g loss %.2f mm train MPJPE %.2f mm (%.0f s)", trainer.epoch(), r.lr,
                            r.train_loss, train_mpjpe, seconds_since(t0)));
    }
  }
  const double final_mpjpe = evaluate(model, windows, pairs, false).mpjpe;
  check(final_mpjpe < 5.0, "4 overfit", fmt("final train MPJPE %.2f mm after 500 epochs (want < 5 mm)", final_mpjpe));
  const auto losses = trainer.log().losses();
  const double early = median({losses.begin(), losses.begin() + 100});
  const double late = median({losses.begin() + 400, losses.end()});
  check(late < early, "4 overfit", fmt("median loss epochs 401-500 %.2f mm < epochs 1-100 %.2f mm", late, early));
  info("4 overfit", fmt("runtime %.0f s (budget 1800 s)", seconds_since(t0)));
}

void ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t epochs = env_size("POSEFORMER_ORDERING_EPOCHS", 30);
  const Dataset train_ds = synth(20, 100, 1000);
  const Dataset eval_ds = synth(5, 100, 2000);
  const WindowSet train = collect_windows(train_ds, 9);
  const WindowSet eval = collect_windows(eval_ds, 9);
  check(train.size() == 2000 && eval.size() == 500, "5 ordering",
        fmt("held-out split: %zu train / %zu eval windows from disjoint sequences", train.size(), eval.size()));

  struct Variant {
    std::string name;
    ModelConfig config;
  };
  ModelConfig st;
  ModelConfig baseline;
  baseline.architecture = Architecture::TemporalBaseline;
  ModelConfig no_pos;
  no_pos.spatial_pos = no_pos.temporal_pos = false;
  const std::vector<Variant> variants = {{"spatial-temporal", st}, {"temporal-baseline", baseline}, {"no-pos-emb", no_pos}};
  for (const auto& v : variants) {
    info("5 ordering", fmt("%s: %.3fM parameters", v.name.c_str(), static_cast<double>(count_parameters(v.config)) / 1e6));
  }

  std::map<std::string, std::vector<double>> results;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& v : variants) {
      PoseFormer<float> model(v.config, seed);
      TrainConfig tc;
      tc.epochs = epochs;
      tc.seed = seed;
      Trainer<float> trainer(model, train, tc, train_ds.skeleton.left_right_pairs);
      trainer.train();
      const double e = evaluate(model, eval, eval_ds.skeleton.left_right_pairs, tc.flip_average_eval).mpjpe;
      results[v.name].push_back(e);
      info("5 ordering", fmt("seed %llu %s: eval MPJPE %.2f mm after %zu epochs (%.0f s elapsed)",
                             static_cast<unsigned long long>(seed), v.name.c_str(), e, epochs, seconds_since(t0)));
    }
  }
  const double m_st = median(results["spatial-temporal"]);
  const double m_base = median(results["temporal-baseline"]);
  const double m_nopos = median(results["no-pos-emb"]);
  check(m_st <= m_base, "5 ordering",
        fmt("median eval MPJPE spatial-temporal %.2f mm <= temporal-only baseline %.2f mm", m_st, m_base));
  check(m_st <= m_nopos, "5 ordering",
        fmt("median eval MPJPE with positional embeddings %.2f mm <= without %.2f mm", m_st, m_nopos));
  info("5 ordering", fmt("runtime %.0f s (budget 10800 s)", seconds_since(t0)));
}

Tensor<double> rigid(const Tensor<double>& pose, const Eigen::Matrix3d& r, double s, const Eigen::Vector3d& t) {
  Tensor<double> out(pose.shape());
  for (std::size_t j = 0; j < pose.dim(0); ++j) {
    const Eigen::Vector3d p(pose.at({j, 0}), pose.at({j, 1}), pose.at({j, 2}));
    const Eigen::Vector3d q = s * r * p + t;
    for (std::size_t k = 0; k < 3; ++k) out.at({j, k}) = q(static_cast<Eigen::Index>(k));
  }
  return out;
}

void metric_properties() {
  Rng rng(6, "acceptance-metrics");
  auto random_pose = [&](double scale) {
    Tensor<double> p({17, 3});
    for (double& v : p.data()) v = scale * rng.normal();
    return p;
  };

  std::size_t violations = 0;
  double worst_gap = -1e300;
  for (int i = 0; i < 1000; ++i) {
    const Tensor<double> gt = random_pose(200.0);
    const Tensor<double> pred = random_pose(200.0);
    const double gap = p_mpjpe(pred, gt) - mpjpe(pred, gt);
    worst_gap = std::max(worst_gap, gap);
    if (gap > 0) ++violations;
  }
  check(violations == 0, "6 metrics",
        fmt("P-MPJPE <= MPJPE on 1000 random pairs: %zu violations, max P-MPJPE - MPJPE %.3g mm", violations, worst_gap));

  double residual = 0;
  for (int i = 0; i < 1000; ++i) {
    const Tensor<double> gt = random_pose(200.0);
    const Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const Eigen::Vector3d t(500 * rng.normal(), 500 * rng.normal(), 500 * rng.normal());
    residual = std::max(residual, p_mpjpe(rigid(gt, q.normalized().toRotationMatrix(), 1.0, t), gt));
  }
  check(residual <= 1e-6, "6 metrics", fmt("Procrustes residual on 1000 rigid copies: max %.2e mm (tol 1e-6)", residual));

  // Single-joint poses with errors placed exactly on threshold boundaries.
  auto single = [](double err) {
    Tensor<double> p({1, 1, 3});
    p[0] = err;
    return p;
  };
  const Tensor<double> origin({1, 1, 3});
  const bool pck_ok = pck(single(150.0), origin, 150.0) == 1.0 && pck(single(150.5), origin, 150.0) == 0.0 &&
                      pck(single(0.0), origin, 0.0) == 1.0;
  check(pck_ok, "6 metrics", "PCK counts an error equal to the threshold and rejects one just above it");
  const bool auc_ok = auc(single(0.0), origin) == 1.0 && auc(single(1000.0), origin) == 0.0 &&
                      auc(single(5.0), origin) == 1.0 && auc(single(150.0), origin) == 1.0 / 30.0 &&
                      auc(single(72.5), origin) == 16.0 / 30.0;
  check(auc_ok, "6 metrics", "AUC over 5..150 mm: errors 0, 5, 72.5, 150, 1000 give 1, 1, 16/30, 1/30, 0 exactly");

  double gap = 0;
  for (int i = 0; i < 100; ++i) {
    Tensor<double> gt({8, 17, 3}), pred({8, 17, 3});
    for (double& v : gt.data()) v = 200 * rng.normal();
    for (double& v : pred.data()) v = 200 * rng.normal();
    const auto pj = per_joint_error(pred, gt);
    const double mean = std::accumulate(pj.begin(), pj.end(), 0.0) / static_cast<double>(pj.size());
    gap = std::max(gap, std::abs(mean - mpjpe(pred, gt)));
  }
  check(gap <= 1e-9, "6 metrics", fmt("mean of per-joint errors equals MPJPE: max gap %.2e (tol 1e-9)", gap));
}

template <typename T>
bool same_parameters(const PoseFormer<T>& a, const PoseFormer<T>& b) {
  const auto& pa = a.parameters().all();
  const auto& pb = b.parameters().all();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto& x = pa[i].var.value().data();
    const auto& y = pb[i].var.value().data();
    if (pa[i].name != pb[i].name || x.size() != y.size() ||
        std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) != 0) {
      return false;
    }
  }
  return true;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void formats() {
  const Dataset ds = synth(2, 64, 7);
  const WindowSet windows = collect_windows(ds, 9);
  const auto& pairs = ds.skeleton.left_right_pairs;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 9;

  PoseFormer<float> a(ModelConfig{}, 9), b(ModelConfig{}, 9);
  Trainer<float> ta(a, windows, tc, pairs), tb(b, windows, tc, pairs);
  ta.train();
  tb.train();
  bool same_log = ta.log().epochs.size() == tb.log().epochs.size();
  for (std::size_t i = 0; same_log && i < ta.log().epochs.size(); ++i) {
    const auto &x = ta.log().epochs[i], &y = tb.log().epochs[i];
    same_log = x.train_loss == y.train_loss && x.lr == y.lr;
  }
  check(same_parameters(a, b) && same_log, "7 formats",
        "two fixed-seed training runs give bit-identical weights and loss logs");

  const fs::path dir = scratch("formats");
  ta.save(dir / "a.pfck");
  PoseFormer<float> loaded(ModelConfig{}, 123);
  OptimizerState<float> opt;
  load_checkpoint(dir / "a.pfck", loaded, &opt);
  bool same_opt = opt.step == ta.optimizer().step && opt.m.size() == ta.optimizer().m.size();
  for (std::size_t i = 0; same_opt && i < opt.m.size(); ++i) {
    same_opt = opt.m[i] == ta.optimizer().m[i] && opt.v[i] == ta.optimizer().v[i];
  }
  Trainer<float> tc2(loaded, windows, tc, pairs);
  tc2.resume(dir / "a.pfck");
  tc2.save(dir / "b.pfck");
  check(same_parameters(a, loaded) && same_opt && file_bytes(dir / "a.pfck") == file_bytes(dir / "b.pfck"),
        "7 formats", "checkpoint round-trip restores weights and optimizer moments bit-exactly and re-saves identically");

  save_dataset(ds, dir / "data_a");
  const Dataset back = load_dataset(dir / "data_a");
  save_dataset(back, dir / "data_b");
  bool same_blobs = true;
  for (const auto& entry : fs::directory_iterator(dir / "data_a")) {
    same_blobs = same_blobs && file_bytes(entry.path()) == file_bytes(dir / "data_b" / entry.path().filename());
  }
  check(back == ds && same_blobs, "7 formats", "dataset round-trip is bit-exact and re-saves identically");

  // Every map of every layer and head, over all frames of several windows.
  double worst = 0;
  std::size_t maps = 0;
  for (std::size_t w = 0; w < windows.size(); w += 16) {
    auto [x, y] = windows.gather({w});
    ForwardTrace<float> trace;
    {
      NoGradGuard guard;
      a.forward(Var<float>(x), ForwardMode{}, &trace);
    }
    std::vector<AttentionMap> all = trace.temporal.maps(0);
    for (std::size_t f = 0; f < 9; ++f) {
      auto s = trace.spatial.maps(f);
      all.insert(all.end(), s.begin(), s.end());
    }
    for (const auto& m : all) {
      ++maps;
      for (std::size_t q = 0; q < m.tokens; ++q) {
        double row = 0;
        for (std::size_t k = 0; k < m.tokens; ++k) row += m.at(q, k);
        worst = std::max(worst, std::abs(row - 1.0));
      }
    }
  }
  check(worst <= 1e-6, "7 formats",
        fmt("attention rows of a trained f=9 model sum to 1: max deviation %.2e over %zu maps (tol 1e-6)", worst, maps));

  const WindowAttention attention = window_attention(a, windows.gather({0}).first.reshaped(Shape{9, 17, 2}));
  const fs::path out = dir / "attention";
  export_attention(attention, out);
  for (const std::string module : {"spatial", "temporal"}) {
    std::map<std::size_t, std::set<std::size_t>> heads_by_layer;
    std::ifstream csv(out / (module + ".csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      std::size_t layer = 0, head = 0;
      std::sscanf(line.c_str(), "%zu,%zu", &layer, &head);
      heads_by_layer[layer].insert(head);
    }
    bool ok = heads_by_layer.size() == 4;
    std::string counts;
    for (const auto& [layer, heads] : heads_by_layer) {
      const bool pgm = fs::exists(out / (module + "_layer" + std::to_string(layer) + "_head7.pgm"));
      ok = ok && heads.size() == 8 && pgm;
      counts += (counts.empty() ? "" : ",") + std::to_string(heads.size());
    }
    check(ok, "7 formats", fmt("%s export: %zu layers with %s heads each, one PGM per map", module.c_str(),
                               heads_by_layer.size(), counts.c_str()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<void()>> criteria = {
      {"params", params},     {"flops", flops},     {"gradcheck", gradcheck},        {"overfit", overfit},
      {"ordering", ordering}, {"metrics", metric_properties}, {"formats", formats}};
  const std::string which = argc > 1 ? argv[1] : "all";
  try {
    if (which == "all") {
      for (const char* name : {"params", "flops", "gradcheck", "metrics", "formats", "overfit", "ordering"}) {
        criteria.at(name)();
      }
    } else if (auto it = criteria.find(which); it != criteria.end()) {
      it->second();
    } else {
      std::fprintf(stderr, "unknown criterion '%s'\n", which.c_str());
      return 2;
    }
  } catch (const std::exception& e) {
    check(false, which, std::string("aborted: ") + e.what());
  }
  return failures == 0 ? 0 : 1;
}
