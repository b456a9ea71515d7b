#include "lithomt/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "lithomt/error.hpp"
#include "lithomt/hash.hpp"

namespace lmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'L', 'M', 'T', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

template <typename U>
void put(std::string& out, U v) {
  char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  out.append(b, sizeof(U));
}

template <typename U>
U get(const std::string& in, size_t& pos, const std::string& origin) {
  if (pos + sizeof(U) > in.size()) throw IoError(origin + ": truncated checkpoint");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& [n, t] : tensors)
    if (n.rfind(prefix, 0) == 0) return true;
  return false;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  json dir = json::array();
  long offset = 0;
  for (const auto& [name, t] : c.tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", static_cast<long>(t.numel())}});
    offset += t.numel();
  }
  json cfg = json::object();
  for (const auto& [k, v] : c.config.entries()) cfg[k] = v;
  const json header = {{"version", kCheckpointVersion}, {"kind", c.kind},   {"step", c.step},
                       {"corpus_hash", c.corpus_hash},  {"config", cfg}, {"tensors", dir}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  for (const auto& [name, t] : c.tensors)
    out.append(reinterpret_cast<const char*>(t.ptr()), sizeof(float) * static_cast<size_t>(t.numel()));
  return out;
}

Checkpoint parse_checkpoint(const std::string& in, const std::string& origin) {
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw IoError(origin + ": not a lithomt checkpoint");
  size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(in, pos, origin);
  if (version != kCheckpointVersion)
    throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, pos, origin);
  if (pos + len > in.size()) throw IoError(origin + ": truncated header");
  json header;
  try {
    header = json::parse(in.substr(pos, len));
  } catch (const json::exception& e) {
    throw IoError(origin + ": bad header: " + e.what());
  }
  pos += len;
  Checkpoint c;
  c.kind = header.at("kind").get<std::string>();
  c.step = header.at("step").get<long>();
  c.corpus_hash = header.value("corpus_hash", "");
  for (const auto& [k, v] : header.at("config").items()) c.config.set(k, v.get<std::string>());
  const size_t base = pos;
  for (const auto& e : header.at("tensors")) {
    Tensor<float> t(e.at("shape").get<Shape>());
    const long count = e.at("count").get<long>(), offset = e.at("offset").get<long>();
    if (count != t.numel()) throw IoError(origin + ": tensor count does not match its shape");
    const size_t at = base + sizeof(float) * static_cast<size_t>(offset);
    if (at + sizeof(float) * count > in.size()) throw IoError(origin + ": truncated tensor data");
    std::memcpy(t.ptr(), in.data() + at, sizeof(float) * count);
    c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    const std::string bytes = serialize_checkpoint(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return parse_checkpoint(s.str(), path.string());
}

template <typename T>
void store_parameters(Checkpoint& c, const ParamList<T>& ps) {
  for (const auto& [name, v] : ps) c.tensors.emplace_back(name, v.value().template cast<float>());
}

template <typename T>
void restore_parameters(const Checkpoint& c, const ParamList<T>& ps) {
  for (auto [name, v] : ps) {
    const Tensor<float>* t = c.find(name);
    if (!t) throw ConfigError("checkpoint has no tensor '" + name + "'");
    if (t->shape != v.shape())
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(t->shape) + ", model expects " +
                        shape_str(v.shape()));
    v.mutable_value() = t->template cast<T>();
  }
}

template <typename T>
void store_optimizer(Checkpoint& c, const ParamList<T>& ps, const Adam<T>& opt) {
  if (opt.first_moments().size() != ps.size()) return;
  for (size_t i = 0; i < ps.size(); ++i) {
    c.tensors.emplace_back("opt.m." + ps[i].first, opt.first_moments()[i].template cast<float>());
    c.tensors.emplace_back("opt.v." + ps[i].first, opt.second_moments()[i].template cast<float>());
  }
  c.config.set("opt.steps", std::to_string(opt.steps()));
}

template <typename T>
bool restore_optimizer(const Checkpoint& c, const ParamList<T>& ps, Adam<T>& opt) {
  if (!c.config.has("opt.steps")) return false;
  auto& m = opt.first_moments();
  auto& v = opt.second_moments();
  m.resize(ps.size());
  v.resize(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    const Tensor<float>* tm = c.find("opt.m." + ps[i].first);
    const Tensor<float>* tv = c.find("opt.v." + ps[i].first);
    if (!tm || !tv || tm->shape != ps[i].second.shape()) throw ConfigError("checkpoint optimizer state is incomplete");
    m[i] = tm->template cast<T>();
    v[i] = tv->template cast<T>();
  }
  opt.set_steps(c.config.get_int("opt.steps", 0));
  return true;
}

template <typename T>
std::string weight_hash(const ParamList<T>& ps) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, v] : ps) {
    h = fnv1a(name, h);
    h = fnv1a(shape_str(v.shape()), h);
    const auto& t = v.value();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(t.ptr()), sizeof(T) * static_cast<size_t>(t.numel())), h);
  }
  return hex(h);
}

#define LMT_CKPT(T)                                                                 \
  template void store_parameters(Checkpoint&, const ParamList<T>&);                 \
  template void restore_parameters(const Checkpoint&, const ParamList<T>&);         \
  template void store_optimizer(Checkpoint&, const ParamList<T>&, const Adam<T>&);  \
  template bool restore_optimizer(const Checkpoint&, const ParamList<T>&, Adam<T>&); \
  template std::string weight_hash(const ParamList<T>&);

LMT_CKPT(float)
LMT_CKPT(double)

}  // namespace lmt
