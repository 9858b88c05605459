#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cadgd/tensor.hpp"

namespace cadgd {

// Named learnable tensors with a gradient accumulator per entry. Paths are
// slash-separated ("decoder/block0/self/q/weight") and iterate in sorted order.
class ParamStore {
 public:
  void add(const std::string& path, Tensor init);
  bool contains(const std::string& path) const;

  const Tensor& value(const std::string& path) const;
  Tensor& value(const std::string& path);
  const Tensor& grad(const std::string& path) const;
  Tensor& grad(const std::string& path);

  void zero_grad();
  std::vector<std::string> paths() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t parameter_count() const;

  // Calls fn(path, value, grad) for every entry in path order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [path, e] : entries_) fn(path, e.value, e.grad);
  }

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
  };
  const Entry& entry(const std::string& path) const;
  Entry& entry(const std::string& path);

  std::map<std::string, Entry> entries_;
};

// Binary tensor container shared by checkpoints and exported density maps:
//   magic "CADGDTNS", u32 version,
//   then per record: u64 path length, path bytes, u64 rank,
//   rank x u64 extents, row-major f32 data. All integers little-endian.
inline constexpr char kTensorFileMagic[8] = {'C', 'A', 'D', 'G', 'D', 'T', 'N', 'S'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

using NamedTensor = std::pair<std::string, Tensor>;

void write_tensor_file(std::ostream& out, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_tensor_file(std::istream& in);

void save_tensor_file(const std::filesystem::path& path,
                      const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_tensor_file(const std::filesystem::path& path);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
// The stored path set and every shape must equal the store's exactly.
void load_checkpoint(ParamStore& store, const std::filesystem::path& path);

}  // namespace cadgd
