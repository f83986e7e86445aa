#pragma once

// Little-endian byte packing and base-128 varints shared by the FLD1/SBC1
// containers and the stream protocol.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "sbc/error.hpp"

namespace sbc {

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(raw[sizeof(T) - 1 - i]);
    } else {
      buf_.insert(buf_.end(), raw, raw + sizeof(T));
    }
  }

  void put_varint(std::uint64_t value) {
    while (value >= 0x80) {
      buf_.push_back(static_cast<std::uint8_t>(value | 0x80));
      value >>= 7;
    }
    buf_.push_back(static_cast<std::uint8_t>(value));
  }

  void put_bytes(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void put_string(std::string_view s) {
    put_varint(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& bytes() { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

inline std::size_t varint_size(std::uint64_t value) {
  std::size_t n = 1;
  while (value >= 0x80) {
    value >>= 7;
    ++n;
  }
  return n;
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : data_(bytes) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = data_[pos_ + sizeof(T) - 1 - i];
    } else {
      std::memcpy(raw, data_.data() + pos_, sizeof(T));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::uint64_t get_varint() {
    std::uint64_t value = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      need(1);
      std::uint8_t b = data_[pos_++];
      value |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return value;
    }
    throw Error(ErrorCode::corrupt_stream, "varint longer than 64 bits");
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::string get_string() {
    auto n = get_varint();
    auto raw = get_bytes(n);
    return std::string(raw.begin(), raw.end());
  }

  void skip(std::size_t n) { get_bytes(n); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(ErrorCode::truncated, "unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace sbc
