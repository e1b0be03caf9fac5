#include "posesynth/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "posesynth/errors.hpp"

namespace posesynth {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'N', 'T', '0', '0', '0', '1'};
constexpr const char* kFormat = "posesynth-named-tensors/1";

struct Fnv1a {
  std::uint64_t state = 0xcbf29ce484222325ULL;
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= 0x100000001b3ULL;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state));
    return buf;
  }
};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw Error(ErrorCode::CheckpointError, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw Error(ErrorCode::CheckpointError, "unknown dtype code " + std::to_string(c));
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorCode::CheckpointError, "truncated archive");
  return v;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

std::string fnv1a_hex(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string json_hash(const nlohmann::json& value) { return fnv1a_hex(value.dump()); }

std::string Checkpoint::tensors_hash() const {
  Fnv1a h;
  for (const auto& [name, tensor] : tensors) {
    h.update(name.data(), name.size());
    const auto t = tensor.contiguous();
    for (auto d : t.sizes()) h.update(&d, sizeof(d));
    h.update(t.data_ptr(), t.nbytes());
  }
  return h.hex();
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void Checkpoint::save(const std::filesystem::path& stem) const {
  if (!stem.parent_path().empty()) std::filesystem::create_directories(stem.parent_path());
  {
    std::ofstream out(with_suffix(stem, ".ckpt"), std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + with_suffix(stem, ".ckpt").string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
      const auto t = tensor.detach().contiguous();
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, dtype_code(t.scalar_type()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
      for (auto d : t.sizes()) put<std::int64_t>(out, d);
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    }
  }
  nlohmann::json meta;
  meta["format"] = kFormat;
  meta["kind"] = kind;
  meta["config"] = config;
  meta["config_hash"] = config_hash();
  meta["step"] = step;
  meta["seed"] = seed;
  meta["tensors_hash"] = tensors_hash();
  meta["metadata"] = metadata;
  std::ofstream js(with_suffix(stem, ".json"));
  if (!js) throw Error(ErrorCode::IoError, "cannot write " + with_suffix(stem, ".json").string());
  js << meta.dump(2) << '\n';
}

bool Checkpoint::exists(const std::filesystem::path& stem) {
  return std::filesystem::exists(with_suffix(stem, ".ckpt")) && std::filesystem::exists(with_suffix(stem, ".json"));
}

Checkpoint Checkpoint::load(const std::filesystem::path& stem) {
  if (!exists(stem)) throw Error(ErrorCode::CheckpointError, "no checkpoint at " + stem.string());
  Checkpoint ckpt;
  {
    std::ifstream js(with_suffix(stem, ".json"));
    nlohmann::json meta;
    try {
      js >> meta;
      if (meta.at("format") != kFormat) throw Error(ErrorCode::CheckpointError, "unknown checkpoint format");
      ckpt.kind = meta.at("kind").get<std::string>();
      ckpt.config = meta.at("config");
      ckpt.step = meta.at("step").get<std::int64_t>();
      ckpt.seed = meta.at("seed").get<std::uint64_t>();
      ckpt.metadata = meta.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CheckpointError, std::string("checkpoint metadata: ") + e.what());
    }
    if (meta.value("config_hash", "") != ckpt.config_hash()) {
      throw Error(ErrorCode::CheckpointError, "config hash in " + stem.string() + " does not match its config");
    }
  }
  std::ifstream in(with_suffix(stem, ".ckpt"), std::ios::binary);
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::CheckpointError, "bad archive magic in " + stem.string());
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) {
      throw Error(ErrorCode::CheckpointError, "truncated archive");
    }
    const auto dtype = dtype_from_code(get<std::uint8_t>(in));
    std::vector<std::int64_t> dims(get<std::uint32_t>(in));
    for (auto& d : dims) d = get<std::int64_t>(in);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (!in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()))) {
      throw Error(ErrorCode::CheckpointError, "truncated tensor data for " + name);
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void append_module_state(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& item : module.named_parameters(true)) {
    ckpt.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
  for (const auto& item : module.named_buffers(true)) {
    ckpt.tensors.emplace_back(prefix + item.key(), item.value().detach().clone());
  }
}

void restore_module_state(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  std::set<std::string> expected;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    const std::string key = prefix + name;
    expected.insert(key);
    const torch::Tensor* src = ckpt.find(key);
    if (src == nullptr) throw Error(ErrorCode::CheckpointError, "checkpoint lacks tensor " + key);
    if (src->sizes() != target.sizes()) {
      throw Error(ErrorCode::CheckpointError, "shape mismatch for " + key);
    }
    target.copy_(*src);
  };
  for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
  for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind(prefix, 0) == 0 && !expected.contains(name)) {
      throw Error(ErrorCode::CheckpointError, "checkpoint has unexpected tensor " + name);
    }
  }
}

}  // namespace posesynth
