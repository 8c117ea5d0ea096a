#pragma once

// File plumbing shared by every artifact writer: content digests, atomic
// writes, and the "magic + JSON header + raw little-endian blocks" container
// used by dataset snapshots and checkpoints.

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace datadiet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using Json = nlohmann::json;

// 64-bit FNV-1a, rendered as 16 hex digits.
std::string digest_hex(std::string_view bytes);
std::string digest_json(const Json& value);

// Write to a sibling temp file and rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

class BinaryWriter {
 public:
  template <typename T>
  void put(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buffer_.append(p, sizeof(T));
  }
  template <typename T>
  void put_span(std::span<const T> values) {
    static_assert(std::is_trivially_copyable_v<T>);
    buffer_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }
  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }
  const std::string& bytes() const { return buffer_; }

 private:
  std::string buffer_;
};

// Bounds-checked reader; every failure reports the byte offset.
class BinaryReader {
 public:
  explicit BinaryReader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get(const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }
  template <typename T>
  std::vector<T> get_vector(std::size_t count, const char* what) {
    std::vector<T> values(count);
    if (count) std::memcpy(values.data(), take(count * sizeof(T), what), count * sizeof(T));
    return values;
  }
  std::string get_bytes(std::size_t count, const char* what) {
    return std::string(take(count, what), count);
  }
  std::uint64_t offset() const { return offset_; }
  std::uint64_t size() const { return bytes_.size(); }
  bool at_end() const { return offset_ == bytes_.size(); }

 private:
  const char* take(std::size_t count, const char* what);

  std::string bytes_;
  std::uint64_t offset_ = 0;
};

// <8-byte magic><u64 header length><JSON header>; payload follows.
void write_container_header(BinaryWriter& out, std::string_view magic, const Json& header);
Json read_container_header(BinaryReader& in, std::string_view magic);

// Rows of a CSV file; blank lines and lines starting with '#' are skipped.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
std::string provenance_comment(const std::string& config_digest, std::uint64_t master_seed);

// Shortest representation that round-trips a double.
std::string format_double(double value);

}  // namespace datadiet
