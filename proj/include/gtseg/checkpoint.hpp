#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gtseg/params.hpp"
#include "gtseg/tensor.hpp"

namespace gtseg {

// Self-describing parameter archive.
//
//   magic    8 bytes  "GTSEGARC"
//   version  u32      kArchiveVersion
//   count    u32      number of entries
//   entry*   u32 name length, name bytes (UTF-8), u8 dtype, u8 rank,
//            rank x u64 dims, u64 payload bytes, payload
//
// Every integer and every f64 payload element is little-endian.
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { f64 = 1, u8 = 2 };

struct ArchiveEntry {
  DType dtype = DType::f64;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

class Archive {
public:
  void put_tensor(const std::string &name, const Tensor &t);
  void put_text(const std::string &name, const std::string &text);
  void put_params(const std::string &prefix, const ParamList &params);

  bool contains(const std::string &name) const { return entries_.count(name) != 0; }
  Tensor get_tensor(const std::string &name) const;
  std::string get_text(const std::string &name) const;
  // Loads prefix + name for every parameter, checking shapes.
  void get_params(const std::string &prefix, const ParamList &params) const;
  bool has_prefix(const std::string &prefix) const;
  std::size_t count_prefix(const std::string &prefix) const;

  const std::map<std::string, ArchiveEntry> &entries() const { return entries_; }
  std::map<std::string, ArchiveEntry> &entries() { return entries_; }

private:
  std::map<std::string, ArchiveEntry> entries_;
};

void write_archive(const std::filesystem::path &path, const Archive &archive);
// Throws IoError naming the path on missing, truncated or malformed files.
Archive read_archive(const std::filesystem::path &path);

} // namespace gtseg
