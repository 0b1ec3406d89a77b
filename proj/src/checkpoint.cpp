#include "compass/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "compass/errors.hpp"
#include "compass/image_io.hpp"

namespace compass {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'M', 'P', 'K'};

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_string(std::vector<uint8_t>& out, const std::string& s) {
  put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : bytes_(b) {}

  const uint8_t* take(size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated in ") + what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  std::string string(const char* what) {
    const auto n = get<uint32_t>(what);
    const auto* p = take(n, what);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

std::string config_text(const std::map<std::string, std::string>& kv) {
  std::string text;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint config entries may not contain '=' in keys or newlines");
    }
    text += k + "=" + v + "\n";
  }
  return text;
}

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

const torch::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::vector<uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put<uint32_t>(out, ckpt.version);
  put<uint64_t>(out, ckpt.seed);
  put<uint64_t>(out, ckpt.step);
  put_string(out, config_text(ckpt.config));
  put<uint32_t>(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_string(out, name);
    put<uint32_t>(out, static_cast<uint32_t>(t.dim()));
    for (const auto d : t.sizes()) put<int64_t>(out, d);
    const auto f = t.detach().to(torch::kFloat).contiguous();
    const auto* p = reinterpret_cast<const uint8_t*>(f.data_ptr<float>());
    out.insert(out.end(), p, p + f.numel() * sizeof(float));
  }
  return out;
}

Checkpoint deserialize(std::span<const uint8_t> bytes) {
  Reader in(bytes);
  if (std::memcmp(in.take(4, "magic"), kMagic, 4) != 0) throw DataError("not a checkpoint (bad magic)");
  Checkpoint ckpt;
  ckpt.version = in.get<uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.seed = in.get<uint64_t>("seed");
  ckpt.step = in.get<uint64_t>("step");
  ckpt.config = parse_config(in.string("config"));
  const auto count = in.get<uint32_t>("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    auto name = in.string("tensor name");
    const auto rank = in.get<uint32_t>("tensor rank");
    if (rank > 8) throw DataError("checkpoint tensor '" + name + "' has implausible rank");
    std::vector<int64_t> dims(rank);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = in.get<int64_t>("tensor dims");
      if (d < 0 || d > (int64_t{1} << 32)) throw DataError("checkpoint tensor '" + name + "' has bad dims");
      numel *= d;
    }
    const auto* p = in.take(static_cast<size_t>(numel) * sizeof(float), "tensor data");
    auto t = torch::empty(dims, torch::kFloat);
    std::memcpy(t.data_ptr<float>(), p, static_cast<size_t>(numel) * sizeof(float));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw DataError("trailing bytes after checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize(ckpt);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto s = read_file(path);
  try {
    return deserialize(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void add_module_tensors(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& p : module.named_parameters()) ckpt.tensors.emplace_back(prefix + p.key(), p.value());
}

void load_module_tensors(const Checkpoint& ckpt, torch::nn::Module& module, const std::string& prefix) {
  torch::NoGradGuard no_grad;
  for (auto& p : module.named_parameters()) {
    const auto& src = ckpt.tensor(prefix + p.key());
    if (src.sizes() != p.value().sizes()) {
      throw DataError("checkpoint tensor '" + prefix + p.key() + "' has shape " +
                      c10::str(src.sizes()) + ", model expects " + c10::str(p.value().sizes()));
    }
    p.value().copy_(src);
  }
}

}  // namespace compass
