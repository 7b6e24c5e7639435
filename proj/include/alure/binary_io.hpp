#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alure {

/// Appends little-endian primitives to a byte buffer.
class ByteWriter {
 public:
  void raw(std::string_view bytes);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  /// u64 length prefix followed by the bytes.
  void str(std::string_view s);

  /// Appends the CRC32 of everything written so far.
  void finish_with_crc();

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

/// Reads little-endian primitives; throws FormatError on truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : data_(bytes) {}

  void expect_magic(std::string_view magic);
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  double f64();
  void f64s(std::span<double> out);
  std::string str();

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view take(std::size_t n);

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes);

/// Verifies the trailing CRC32 and returns the payload without it.
/// Throws ChecksumError on mismatch or if the buffer is too short.
std::string_view verify_crc(std::string_view bytes);

std::string read_file(const std::string& path);
/// Writes to path.tmp then renames over path.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace alure
