#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ug/common.hpp"
#include "ug/tensor.hpp"

namespace ug {

// On-disk container shared by checkpoints ("UGCKPT1") and caches
// ("UGCACHE1"):
//
//   magic bytes, '\n'
//   u32 config length, config bytes (key=value lines, order preserved)
//   u32 tensor count
//   per tensor: u32 name length, name, u8 dtype code, u8 flags (bit0 =
//   trainable), u32 rank, u64 extents, raw little-endian values
//
// The config blob is carried verbatim so files round-trip byte-exactly.
struct TensorFile {
  std::string magic;
  std::vector<std::pair<std::string, std::string>> config;
  struct Entry {
    std::string name;
    Dtype dtype = Dtype::f32;
    bool trainable = false;
    Shape shape;
    std::vector<uint8_t> raw;
  };
  std::vector<Entry> entries;

  void set(const std::string& key, const std::string& value);
  const std::string* find(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // io_error if missing

  const Entry* find_entry(const std::string& name) const;
  const Entry& entry(const std::string& name) const;  // io_error if missing

  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t, bool trainable);
  template <typename T>
  Tensor<T> get_tensor(const std::string& name) const;
};

void save_tensor_file(const std::string& path, const TensorFile& f);
TensorFile load_tensor_file(const std::string& path, const std::string& expected_magic);

// Reads just the magic + config block (cheap peek for dtype dispatch).
TensorFile load_tensor_file_header(const std::string& path, const std::string& expected_magic);

}  // namespace ug
