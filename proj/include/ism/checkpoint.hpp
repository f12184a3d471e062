#pragma once

// Checkpoint container.
//
//   "ISMC"            4 bytes
//   version           u16
//   meta length       u32, then that many bytes of key=value text
//   entry count       u32
//   name table        per entry: u16 name length, name, u8 rank, u32 dims[rank]
//   data              per entry, in table order: f32 values
//
// All integers and floats are little-endian.

#include "ism/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'I', 'S', 'M', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Malformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointData {
  std::string meta;
  std::vector<NamedArray> entries;

  const NamedArray& find(const std::string& name) const {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw CheckpointError(CheckpointError::Kind::Malformed, "checkpoint has no entry '" + name + "'");
  }
};

namespace detail {

template <class V>
void write_le(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_le(std::istream& in, const std::string& path) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated checkpoint");
  }
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path + " for writing");
  out.write(kCheckpointMagic, 4);
  detail::write_le<std::uint16_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.meta.size()));
  out.write(data.meta.data(), static_cast<std::streamsize>(data.meta.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.entries.size()));
  for (const auto& e : data.entries) {
    if (numel_of(e.shape) != e.values.size()) throw ShapeError("write_checkpoint " + e.name, e.shape, "size mismatch");
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (const auto& e : data.entries) {
    out.write(reinterpret_cast<const char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4));
  }
  if (!out) throw CheckpointError(CheckpointError::Kind::Io, "write failed: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::Io, "cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4)) throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated checkpoint");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, path + ": not a checkpoint (bad magic)");
  }
  const auto version = detail::read_le<std::uint16_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          path + ": checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  CheckpointData data;
  data.meta.resize(detail::read_le<std::uint32_t>(in, path));
  if (!in.read(data.meta.data(), static_cast<std::streamsize>(data.meta.size()))) {
    throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated checkpoint");
  }
  const auto count = detail::read_le<std::uint32_t>(in, path);
  data.entries.resize(count);
  for (auto& e : data.entries) {
    e.name.resize(detail::read_le<std::uint16_t>(in, path));
    if (!in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated checkpoint");
    }
    e.shape.resize(detail::read_le<std::uint8_t>(in, path));
    for (auto& d : e.shape) {
      d = detail::read_le<std::uint32_t>(in, path);
      if (d == 0) throw CheckpointError(CheckpointError::Kind::Malformed, path + ": zero extent in " + e.name);
    }
  }
  for (auto& e : data.entries) {
    e.values.resize(numel_of(e.shape));
    if (!in.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * 4))) {
      throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated checkpoint");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError(CheckpointError::Kind::Malformed, path + ": trailing bytes after data");
  }
  return data;
}

}  // namespace ism
