#include "dkcnet/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dkcnet/errors.hpp"

namespace dkcnet {

Var ParamStore::add(const std::string& name, Tensor4 value, bool trainable) {
  Var v(std::move(value), trainable);
  add_existing(name, v, trainable);
  return v;
}

void ParamStore::add_existing(const std::string& name, const Var& var, bool trainable) {
  if (contains(name)) throw ArgumentError("duplicate parameter name: " + name);
  if (!var.is_leaf()) throw ArgumentError("parameter must be a leaf: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, var, trainable});
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
  return entries_[it->second].var;
}

std::vector<Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.var);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_)
    if (e.trainable) total += e.var.value().size();
  return total;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.var.zero_grad();
}

std::map<std::string, Tensor4> ParamStore::snapshot() const {
  std::map<std::string, Tensor4> out;
  for (const auto& e : entries_) out.emplace(e.name, e.var.value());
  return out;
}

void ParamStore::restore(const std::map<std::string, Tensor4>& values) {
  if (values.size() != entries_.size()) {
    throw DimensionError("restore: expected " + std::to_string(entries_.size()) +
                         " tensors, got " + std::to_string(values.size()));
  }
  for (auto& e : entries_) {
    auto it = values.find(e.name);
    if (it == values.end()) throw ArgumentError("restore: missing tensor " + e.name);
    require_same_shape(it->second.shape(), e.var.shape(), e.name.c_str());
    Var v = e.var;
    v.mutable_value() = it->second;
  }
}

Checkpoint Checkpoint::from_store(const ParamStore& store, std::string metadata) {
  Checkpoint c;
  c.metadata = std::move(metadata);
  for (const auto& e : store.entries()) c.tensors.push_back({e.name, e.trainable, e.var.value()});
  return c;
}

void Checkpoint::apply_to(ParamStore& store) const {
  std::map<std::string, Tensor4> values;
  for (const auto& t : tensors) values.emplace(t.name, t.value);
  store.restore(values);
}

namespace {

constexpr char kMagic[8] = {'D', 'K', 'C', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& is) {
  const auto len = get<std::uint32_t>(is);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw IoError("truncated checkpoint string");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.metadata.size()));
  os.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(os, t.trainable ? 1 : 0);
    const Shape& s = t.value.shape();
    for (std::uint64_t d : {s.n, s.c, s.h, s.w}) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.value.data().data()),
             static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("not a checkpoint file: " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.metadata = get_string(is);
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint::Tensor t;
    t.name = get_string(is);
    t.trainable = get<std::uint8_t>(is) != 0;
    Shape s;
    s.n = get<std::uint64_t>(is);
    s.c = get<std::uint64_t>(is);
    s.h = get<std::uint64_t>(is);
    s.w = get<std::uint64_t>(is);
    std::vector<double> values(s.size());
    if (!values.empty() &&
        !is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw IoError("truncated tensor data for " + t.name);
    }
    t.value = Tensor4(s, std::move(values));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

}  // namespace dkcnet
