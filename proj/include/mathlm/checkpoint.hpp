#pragma once

// Binary model container:
//   "MLM1"
//   u32 n, kind tag bytes
//   u32 n, config text (key=value lines)
//   u32 record count, then per record:
//     u32 n, name; u8 element kind; u32 rank; u64 extents[rank]; payload
//   u32 CRC-32 of every byte between the magic and the checksum
// All integers and payload elements are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mathlm {

enum class ElementKind : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

struct TensorRecord {
  std::string name;
  ElementKind kind = ElementKind::F32;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;  // little-endian elements

  static TensorRecord from_f32(std::string name, std::vector<std::uint64_t> shape,
                               std::span<const float> values);
  static TensorRecord from_f64(std::string name, std::vector<std::uint64_t> shape,
                               std::span<const double> values);
  static TensorRecord from_i64(std::string name, std::vector<std::uint64_t> shape,
                               std::span<const std::int64_t> values);

  std::uint64_t element_count() const;
  std::vector<float> to_f32() const;  // throws FormatError on kind mismatch
  std::vector<double> to_f64() const;
  std::vector<std::int64_t> to_i64() const;
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<TensorRecord> records;

  void set(std::string key, std::string value);
  /// Throws FormatError when absent.
  const std::string& get(std::string_view key) const;
  bool has(std::string_view key) const;
  /// Throws FormatError when absent.
  const TensorRecord& record(std::string_view name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on truncation or bad structure, ChecksumMismatch when
/// the stored CRC disagrees.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Throws IoError.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mathlm
