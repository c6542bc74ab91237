#pragma once

// LATC checkpoint container (little-endian):
//   "LATC" | u16 version=1 | u32 config_len | config_len bytes of UTF-8
//   "key=value\n" lines | u32 section_count | per section: u16 name_len,
//   name bytes, u8 rank, rank x u32 extents, numel x f32

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lat/binary_io.hpp"
#include "lat/tensor.hpp"

namespace lat {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointSection {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;  // in write order
  std::vector<CheckpointSection> sections;

  /// Value of `key`, if present.
  std::optional<std::string> get(std::string_view key) const;
  /// Value of `key`; FormatError when absent.
  const std::string& require(std::string_view key) const;
  /// Replaces an existing key or appends a new one.
  void set(std::string key, std::string value);

  const CheckpointSection* find_section(std::string_view name) const;
};

bool operator==(const CheckpointSection& a, const CheckpointSection& b);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Shortest decimal text that parses back to the same double.
std::string exact_decimal(double value);

}  // namespace lat
