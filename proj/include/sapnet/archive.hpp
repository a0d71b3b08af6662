#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "sapnet/tensor.hpp"

namespace sapnet {

/// Keyed container of tensors, text blobs and integers with a little-endian
/// binary encoding. Entries are written in key order, so equal contents give
/// identical bytes.
///
/// Layout: magic "SAPNETAR", u32 version, u32 entry count, then per entry
/// u32 key length, key bytes, u8 tag (0 tensor, 1 text, 2 int64) and payload:
///   tensor: u32 rank, rank x i32 dims, f64 values
///   text:   u64 length, bytes
///   int64:  i64
class Archive {
 public:
  using Value = std::variant<Tensor, std::string, std::int64_t>;

  void put_tensor(const std::string& key, Tensor t) { entries_[key] = std::move(t); }
  void put_text(const std::string& key, std::string s) { entries_[key] = std::move(s); }
  void put_int(const std::string& key, std::int64_t v) { entries_[key] = v; }

  bool contains(const std::string& key) const { return entries_.count(key) != 0; }
  const Tensor& tensor(const std::string& key) const;
  const std::string& text(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

  std::string serialize() const;
  static Archive deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  friend bool operator==(const Archive&, const Archive&) = default;

 private:
  std::map<std::string, Value> entries_;
};

}  // namespace sapnet
