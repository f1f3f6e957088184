#ifndef DMMIA_CHECKPOINT_HPP
#define DMMIA_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmmia/tensor.hpp"

namespace dmmia {

// Binary container for named parameter blocks plus string metadata.
//
// Layout (all integers little-endian):
//   5 bytes   magic "DMIA1"
//   u32       metadata entry count
//   per entry u32 key length, key bytes, u32 value length, value bytes
//   u32       block count
//   per block u32 name length, name bytes, u32 rank, u64 dims...,
//             f64 values (little-endian IEEE-754)...
//
// Round trips are bit-exact. Parsing errors name the offset.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  // Insertion order is preserved so writes are deterministic.
  std::vector<std::pair<std::string, Tensor>> blocks;

  void add(const std::string& name, const Tensor& t);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  // Returns the block after validating its shape; mismatch names the block.
  Tensor get_checked(const std::string& name, const Shape& expect) const;

  std::string meta(const std::string& key) const;                      // throws if absent
  std::string meta_or(const std::string& key, const std::string& d) const;

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(const std::vector<std::uint8_t>& bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace dmmia

#endif
