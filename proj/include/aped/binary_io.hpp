#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "aped/error.hpp"

namespace aped::io {

// Little-endian writer/reader over an in-memory byte buffer.

class ByteWriter {
 public:
  void bytes(std::string_view data) { buf_.insert(buf_.end(), data.begin(), data.end()); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, std::string context)
      : data_(data), size_(size), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    std::string_view out(data_ + pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw FormatError(context_ + ": truncated payload");
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string context_;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& data);

}  // namespace aped::io
