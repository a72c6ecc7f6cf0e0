#include "poseformer/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "binio.hpp"

namespace poseformer {

namespace fs = std::filesystem;
using detail::read_le;
using detail::write_le;

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};

void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  const auto n = read_le<std::uint32_t>(in, what + " length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IntegrityError("unexpected end of file while reading " + what);
  return s;
}

template <typename T>
void write_blob(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  write_string(out, name);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  detail::write_le_array(out, t.raw(), t.size());
}

template <typename T>
std::pair<std::string, Tensor<T>> read_blob(std::istream& in) {
  std::string name = read_string(in, "blob name");
  const auto rank = read_le<std::uint32_t>(in, "rank of '" + name + "'");
  if (rank > 8) throw IntegrityError("blob '" + name + "' declares rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = read_le<std::uint32_t>(in, "extents of '" + name + "'");
    if (e == 0) throw IntegrityError("blob '" + name + "' has a zero extent");
    shape.push_back(e);
  }
  Tensor<T> t(std::move(shape));
  detail::read_le_array(in, t.raw(), t.size(), "scalars of '" + name + "'");
  return {std::move(name), std::move(t)};
}

CheckpointHeader read_header(std::istream& in, const fs::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw ParseError(path.string() + " is not a checkpoint (bad magic)");
  }
  CheckpointHeader h;
  h.version = read_le<std::uint32_t>(in, "checkpoint version");
  if (h.version != kCheckpointVersion) {
    throw CheckpointMismatch("checkpoint " + path.string() + " has version " + std::to_string(h.version) +
                             ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const std::string text = read_string(in, "checkpoint header");
  try {
    const auto j = nlohmann::json::parse(text);
    h.model = ModelConfig::from_json(j.at("model"));
    h.precision = j.at("precision").get<std::string>();
    h.meta = j.value("meta", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + " has a malformed header: " + e.what());
  }
  return h;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

template <>
std::string precision_name<float>() {
  return "float32";
}
template <>
std::string precision_name<double>() {
  return "float64";
}

template <typename T>
void save_checkpoint(const fs::path& path, const PoseFormer<T>& model, const OptimizerState<T>* optimizer,
                     const std::vector<NamedRngState>& rng, const nlohmann::json& meta) {
  const auto& params = model.parameters().all();
  if (optimizer && (optimizer->m.size() != params.size() || optimizer->v.size() != params.size())) {
    throw UsageError("optimizer state does not match the model's parameter list");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, 4);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    const nlohmann::json header{
        {"model", model.config().to_json()}, {"precision", precision_name<T>()}, {"meta", meta}};
    write_string(out, header.dump());

    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) write_blob(out, p.name, p.var.value());

    write_le<std::uint8_t>(out, optimizer ? 1 : 0);
    if (optimizer) {
      write_le<std::uint64_t>(out, optimizer->step);
      for (double h : {optimizer->lr, optimizer->beta1, optimizer->beta2, optimizer->eps, optimizer->weight_decay}) {
        write_le<double>(out, h);
      }
      write_le<std::uint32_t>(out, static_cast<std::uint32_t>(2 * params.size()));
      for (std::size_t i = 0; i < params.size(); ++i) write_blob(out, "m." + params[i].name, optimizer->m[i]);
      for (std::size_t i = 0; i < params.size(); ++i) write_blob(out, "v." + params[i].name, optimizer->v[i]);
    }

    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(rng.size()));
    for (const auto& [name, state] : rng) {
      write_string(out, name);
      write_le<std::uint64_t>(out, state.key);
      write_le<std::uint64_t>(out, state.counter);
    }
    if (!out.flush()) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const fs::path& path) {
  std::ifstream in = open_in(path);
  return read_header(in, path);
}

template <typename T>
LoadedCheckpoint load_checkpoint(const fs::path& path, PoseFormer<T>& model, OptimizerState<T>* optimizer) {
  std::ifstream in = open_in(path);
  LoadedCheckpoint out;
  out.header = read_header(in, path);
  if (out.header.model != model.config() || out.header.precision != precision_name<T>()) {
    throw CheckpointMismatch("checkpoint " + path.string() + " does not match the model.\n  checkpoint (" +
                             out.header.precision + "): " + out.header.model.to_json().dump() + "\n  model (" +
                             precision_name<T>() + "): " + model.config().to_json().dump());
  }

  auto& params = model.parameters();
  const auto count = read_le<std::uint32_t>(in, "parameter count");
  if (count != params.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                         std::to_string(params.size()));
  }
  std::vector<Tensor<T>> values(params.size());
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = read_blob<T>(in);
    const Parameter<T>* p = params.find(name);
    if (!p) throw IntegrityError("checkpoint parameter '" + name + "' is unknown to the model");
    if (p->var.shape() != t.shape()) {
      throw IntegrityError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) +
                           ", model expects " + shape_str(p->var.shape()));
    }
    auto& slot = values[static_cast<std::size_t>(p - params.all().data())];
    if (!slot.empty()) throw IntegrityError("checkpoint repeats parameter '" + name + "'");
    slot = std::move(t);
  }

  out.has_optimizer = read_le<std::uint8_t>(in, "optimizer flag") != 0;
  OptimizerState<T> opt;
  if (out.has_optimizer) {
    opt.step = read_le<std::uint64_t>(in, "optimizer step");
    opt.lr = read_le<double>(in, "optimizer lr");
    opt.beta1 = read_le<double>(in, "optimizer beta1");
    opt.beta2 = read_le<double>(in, "optimizer beta2");
    opt.eps = read_le<double>(in, "optimizer eps");
    opt.weight_decay = read_le<double>(in, "optimizer weight decay");
    const auto moments = read_le<std::uint32_t>(in, "moment count");
    if (moments != 2 * params.size()) throw IntegrityError("checkpoint optimizer section is incomplete");
    opt.m.resize(params.size());
    opt.v.resize(params.size());
    for (std::uint32_t i = 0; i < moments; ++i) {
      auto [name, t] = read_blob<T>(in);
      const bool is_m = name.starts_with("m.");
      if (!is_m && !name.starts_with("v.")) throw IntegrityError("unexpected optimizer blob '" + name + "'");
      const Parameter<T>* p = params.find(name.substr(2));
      if (!p || p->var.shape() != t.shape()) throw IntegrityError("optimizer blob '" + name + "' does not fit the model");
      const auto idx = static_cast<std::size_t>(p - params.all().data());
      (is_m ? opt.m : opt.v)[idx] = std::move(t);
    }
  }

  const auto rng_count = read_le<std::uint32_t>(in, "RNG stream count");
  for (std::uint32_t i = 0; i < rng_count; ++i) {
    std::string name = read_string(in, "RNG stream name");
    RngState s;
    s.key = read_le<std::uint64_t>(in, "RNG key");
    s.counter = read_le<std::uint64_t>(in, "RNG counter");
    out.rng.emplace_back(std::move(name), s);
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw IntegrityError("checkpoint " + path.string() + " has trailing bytes");
  }

  for (std::size_t i = 0; i < values.size(); ++i) params.all()[i].var.mutable_value() = std::move(values[i]);
  if (optimizer && out.has_optimizer) *optimizer = std::move(opt);
  return out;
}

template <typename T>
PoseFormer<T> load_model(const fs::path& path) {
  const CheckpointHeader h = read_checkpoint_header(path);
  if (h.precision != precision_name<T>()) {
    throw CheckpointMismatch("checkpoint " + path.string() + " stores " + h.precision + " parameters, requested " +
                             precision_name<T>());
  }
  PoseFormer<T> model(h.model, 0);
  load_checkpoint(path, model);
  return model;
}

template void save_checkpoint(const fs::path&, const PoseFormer<float>&, const OptimizerState<float>*,
                              const std::vector<NamedRngState>&, const nlohmann::json&);
template void save_checkpoint(const fs::path&, const PoseFormer<double>&, const OptimizerState<double>*,
                              const std::vector<NamedRngState>&, const nlohmann::json&);
template LoadedCheckpoint load_checkpoint(const fs::path&, PoseFormer<float>&, OptimizerState<float>*);
template LoadedCheckpoint load_checkpoint(const fs::path&, PoseFormer<double>&, OptimizerState<double>*);
template PoseFormer<float> load_model(const fs::path&);
template PoseFormer<double> load_model(const fs::path&);

}  // namespace poseformer
