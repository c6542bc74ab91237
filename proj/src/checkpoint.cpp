#include "lat/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <cstring>

namespace lat {

std::optional<std::string> Checkpoint::get(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& Checkpoint::require(std::string_view key) const {
  for (const auto& [k, v] : config) {
    if (k == key) return v;
  }
  throw FormatError("checkpoint: missing config key '" + std::string(key) + "'", 0);
}

void Checkpoint::set(std::string key, std::string value) {
  for (auto& [k, v] : config) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  config.emplace_back(std::move(key), std::move(value));
}

const CheckpointSection* Checkpoint::find_section(std::string_view name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

bool operator==(const CheckpointSection& a, const CheckpointSection& b) {
  return a.name == b.name && a.shape == b.shape && a.data.size() == b.data.size() &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

std::string exact_decimal(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  std::string text;
  for (const auto& [k, v] : checkpoint.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint: config key/value may not contain '=' or newlines: " + k);
    }
    text += k + "=" + v + "\n";
  }
  ByteWriter w;
  w.bytes("LATC");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(checkpoint.sections.size()));
  for (const auto& s : checkpoint.sections) {
    if (s.name.size() > 0xFFFF) throw ContractError("checkpoint: section name too long");
    if (s.data.size() != s.shape.numel()) {
      throw ContractError("checkpoint: section " + s.name + " payload does not match " + s.shape.str());
    }
    w.u16(static_cast<std::uint16_t>(s.name.size()));
    w.bytes(s.name);
    w.u8(static_cast<std::uint8_t>(s.shape.rank()));
    for (std::size_t a = 0; a < s.shape.rank(); ++a) w.u32(static_cast<std::uint32_t>(s.shape[a]));
    for (const float x : s.data) w.f32(x);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  static constexpr std::string_view kMagic = "LATC";
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    const std::size_t at = r.offset();
    if (static_cast<char>(r.u8()) != kMagic[i]) throw BadMagicError("checkpoint: bad magic, expected LATC", at);
  }
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  Checkpoint out;
  const std::uint32_t text_len = r.u32();
  const std::size_t text_at = r.offset();
  const std::string_view text = r.bytes(text_len);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) throw FormatError("checkpoint: unterminated config line", text_at + pos);
    const std::string_view line = text.substr(pos, end - pos);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("checkpoint: config line without '='", text_at + pos);
    out.config.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
    pos = end + 1;
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t s = 0; s < count; ++s) {
    CheckpointSection section;
    const std::uint16_t name_len = r.u16();
    section.name = std::string(r.bytes(name_len));
    const std::size_t rank_at = r.offset();
    const std::uint8_t rank = r.u8();
    if (rank > Shape::kMaxRank) throw FormatError("checkpoint: section rank " + std::to_string(rank) + " > 3", rank_at);
    std::vector<std::size_t> extents;
    for (std::uint8_t a = 0; a < rank; ++a) {
      const std::size_t at = r.offset();
      const std::uint32_t e = r.u32();
      if (e == 0) throw FormatError("checkpoint: zero extent in section " + section.name, at);
      extents.push_back(e);
    }
    section.shape = Shape(std::span<const std::size_t>(extents));
    const std::size_t n = section.shape.numel();
    r.require(n * 4);
    section.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = r.offset();
      section.data[i] = r.f32();
      if (!std::isfinite(section.data[i])) {
        throw NonFiniteValueError("checkpoint: non-finite value in section " + section.name, at);
      }
    }
    out.sections.push_back(std::move(section));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes after last section", r.offset());
  return out;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  write_file(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace lat
