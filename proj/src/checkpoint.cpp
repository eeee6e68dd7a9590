#include "nutri/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "nutri/errors.hpp"
#include "nutri/tensor_io.hpp"

namespace nutri {

using json = nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw DataError("checkpoint: truncated " + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json meta = {{"format", kCheckpointVersion},
               {"config", ckpt.config},
               {"fingerprint", ckpt.fingerprint},
               {"epoch", ckpt.epoch},
               {"task_weights", std::vector<double>(ckpt.weights.w.begin(), ckpt.weights.w.end())},
               {"task_weight_smoothing", ckpt.weights.smoothing},
               {"task_weight_updates", ckpt.weights.t},
               {"optimizer_steps", ckpt.optimizer_steps},
               {"optimizer_tensors", ckpt.optimizer.size()}};
  const auto text = meta.dump();

  // Write to a sibling file first so an interrupted save never leaves a
  // truncated checkpoint behind.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size() + ckpt.optimizer.size()));
    for (const auto* group : {&ckpt.tensors, &ckpt.optimizer}) {
      for (const auto& t : *group) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_tensor(os, t.tensor, Precision::kFloat64);
      }
    }
    if (!os) throw DataError("cannot write checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot write checkpoint " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is, "header");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint format version " + std::to_string(version) + " is not supported");
  }
  const auto len = get<std::uint64_t>(is, "header");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint: truncated metadata");

  Checkpoint ckpt;
  std::size_t n_opt = 0;
  try {
    const auto meta = json::parse(text);
    ckpt.config = meta.at("config").get<std::map<std::string, std::string>>();
    ckpt.fingerprint = meta.at("fingerprint").get<std::string>();
    ckpt.epoch = meta.at("epoch").get<int>();
    const auto w = meta.at("task_weights").get<std::vector<double>>();
    if (w.size() != kNumTasks) throw DataError("checkpoint: expected 5 task weights");
    std::copy(w.begin(), w.end(), ckpt.weights.w.begin());
    ckpt.weights.smoothing = meta.at("task_weight_smoothing").get<double>();
    ckpt.weights.t = meta.at("task_weight_updates").get<std::int64_t>();
    ckpt.optimizer_steps = meta.at("optimizer_steps").get<std::int64_t>();
    n_opt = meta.at("optimizer_tensors").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError("checkpoint: malformed metadata: " + std::string(e.what()));
  }

  const auto count = get<std::uint32_t>(is, "tensor table");
  if (n_opt > count) throw DataError("checkpoint: inconsistent tensor counts");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(is, "tensor name");
    std::string name(nlen, '\0');
    if (!is.read(name.data(), nlen)) throw DataError("checkpoint: truncated tensor name");
    auto t = read_tensor(is);
    auto& group = i < count - n_opt ? ckpt.tensors : ckpt.optimizer;
    group.push_back({std::move(name), std::move(t)});
  }
  return ckpt;
}

std::vector<NamedTensor> snapshot(const ParamList& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params.items()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

void restore(const ParamList& target, const std::vector<NamedTensor>& values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& v : values) by_name[v.name] = &v.tensor;
  std::vector<std::string> problems;
  for (const auto& p : target.items()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      problems.push_back(p.name + ": missing from checkpoint (model " + shape_str(p.tensor.shape()) + ")");
    } else if (it->second->shape() != p.tensor.shape()) {
      problems.push_back(p.name + ": checkpoint " + shape_str(it->second->shape()) + " vs model " +
                         shape_str(p.tensor.shape()));
    }
    if (it != by_name.end()) by_name.erase(it);
  }
  for (const auto& [name, t] : by_name) problems.push_back(name + ": not in model (checkpoint " + shape_str(t->shape()) + ")");
  if (!problems.empty()) {
    std::string msg = "incompatible checkpoint:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  for (const auto& p : target.items()) {
    const auto* src = [&]() -> const Tensor* {
      for (const auto& v : values) {
        if (v.name == p.name) return &v.tensor;
      }
      return nullptr;
    }();
    auto dst = p.tensor;
    const auto s = src->data();
    std::copy(s.begin(), s.end(), dst.mutable_data().begin());
  }
}

}  // namespace nutri
