#include "cadgd/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace cadgd {

void ParamStore::add(const std::string& path, Tensor init) {
  if (path.empty()) throw std::invalid_argument("parameter path is empty");
  Tensor grad(init.shape());
  auto [it, inserted] = entries_.emplace(path, Entry{std::move(init), std::move(grad)});
  if (!inserted) throw std::invalid_argument("duplicate parameter path: " + path);
}

bool ParamStore::contains(const std::string& path) const {
  return entries_.count(path) != 0;
}

const ParamStore::Entry& ParamStore::entry(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

ParamStore::Entry& ParamStore::entry(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + path);
  return it->second;
}

const Tensor& ParamStore::value(const std::string& path) const { return entry(path).value; }
Tensor& ParamStore::value(const std::string& path) { return entry(path).value; }
const Tensor& ParamStore::grad(const std::string& path) const { return entry(path).grad; }
Tensor& ParamStore::grad(const std::string& path) { return entry(path).grad; }

void ParamStore::zero_grad() {
  for (auto& [path, e] : entries_) {
    for (double& g : e.grad.data()) g = 0.0;
  }
}

std::vector<std::string> ParamStore::paths() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [path, e] : entries_) out.push_back(path);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [path, e] : entries_) n += e.value.size();
  return n;
}

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("tensor file truncated");
  return v;
}

}  // namespace

void write_tensor_file(std::ostream& out, const std::vector<NamedTensor>& records) {
  out.write(kTensorFileMagic, sizeof(kTensorFileMagic));
  put<std::uint32_t>(out, kTensorFileVersion);
  for (const auto& [path, t] : records) {
    put<std::uint64_t>(out, path.size());
    out.write(path.data(), static_cast<std::streamsize>(path.size()));
    put<std::uint64_t>(out, t.rank());
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<float>(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("tensor file write failed");
}

std::vector<NamedTensor> read_tensor_file(std::istream& in) {
  char magic[sizeof(kTensorFileMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTensorFileMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("not a cadgd tensor file (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kTensorFileVersion) {
    throw std::runtime_error("unsupported tensor file version " + std::to_string(version));
  }
  std::vector<NamedTensor> records;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = get<std::uint64_t>(in);
    if (len > (1u << 16)) throw std::runtime_error("tensor file path too long");
    std::string path(len, '\0');
    in.read(path.data(), static_cast<std::streamsize>(len));
    const auto rank = get<std::uint64_t>(in);
    if (rank > 8) throw std::runtime_error("tensor file rank too large");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in);
    Tensor t(shape);
    for (double& v : t.data()) v = get<float>(in);
    records.emplace_back(std::move(path), std::move(t));
  }
  return records;
}

void save_tensor_file(const std::filesystem::path& path,
                      const std::vector<NamedTensor>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  write_tensor_file(out, records);
}

std::vector<NamedTensor> load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return read_tensor_file(in);
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::vector<NamedTensor> records;
  for (const auto& p : store.paths()) records.emplace_back(p, store.value(p));
  save_tensor_file(path, records);
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
  auto records = load_tensor_file(path);
  if (records.size() != store.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(records.size()) +
                             " tensors, model expects " + std::to_string(store.size()));
  }
  for (auto& [name, t] : records) {
    if (!store.contains(name)) {
      throw std::runtime_error("checkpoint tensor not in model: " + name);
    }
    Tensor& dst = store.value(name);
    if (dst.shape() != t.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                               shape_string(t.shape()) + " vs " +
                               shape_string(dst.shape()));
    }
    dst = std::move(t);
  }
}

}  // namespace cadgd
