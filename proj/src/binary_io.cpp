#include "alure/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "alure/common.hpp"

namespace alure {

namespace {

template <typename T>
void put_le(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    buf.append(bytes.data(), sizeof(T));
  } else {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));
  }
}

template <typename T>
T get_le(std::string_view bytes) {
  std::array<char, sizeof(T)> raw{};
  std::memcpy(raw.data(), bytes.data(), sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(raw.begin(), raw.end());
  }
  return std::bit_cast<T>(raw);
}

}  // namespace

void ByteWriter::raw(std::string_view bytes) { buf_.append(bytes); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::i64(std::int64_t v) { put_le(buf_, v); }
void ByteWriter::f64(double v) { put_le(buf_, v); }

void ByteWriter::f64s(std::span<const double> values) {
  buf_.reserve(buf_.size() + values.size() * sizeof(double));
  for (double v : values) put_le(buf_, v);
}

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  raw(s);
}

void ByteWriter::finish_with_crc() { u32(crc32_of(buf_)); }

std::string_view ByteReader::take(std::size_t n) {
  if (remaining() < n) {
    throw FormatError("truncated input: needed " + std::to_string(n) +
                      " bytes at offset " + std::to_string(pos_));
  }
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_magic(std::string_view magic) {
  if (take(magic.size()) != magic) {
    throw FormatError("bad magic, expected " + std::string(magic));
  }
}

std::uint32_t ByteReader::u32() { return get_le<std::uint32_t>(take(4)); }
std::uint64_t ByteReader::u64() { return get_le<std::uint64_t>(take(8)); }
std::int64_t ByteReader::i64() { return get_le<std::int64_t>(take(8)); }
double ByteReader::f64() { return get_le<double>(take(8)); }

void ByteReader::f64s(std::span<double> out) {
  auto bytes = take(out.size() * sizeof(double));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = get_le<double>(bytes.substr(i * sizeof(double)));
  }
}

std::string ByteReader::str() {
  const auto n = u64();
  return std::string(take(n));
}

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - off);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off),
                static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string_view verify_crc(std::string_view bytes) {
  if (bytes.size() < 4) throw ChecksumError("file too short for checksum");
  auto payload = bytes.substr(0, bytes.size() - 4);
  ByteReader tail(bytes.substr(bytes.size() - 4));
  if (tail.u32() != crc32_of(payload)) {
    throw ChecksumError("checksum mismatch (truncated or corrupt file)");
  }
  return payload;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace alure
