#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "spar/errors.hpp"

namespace spar::io {

/// Little-endian encoder into a growing byte buffer.
class Writer {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

/// Little-endian decoder; every read checks bounds and reports the offset.
class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const std::string& what) { return std::bit_cast<double>(u64(what)); }

 private:
  void need(std::size_t n, const std::string& what) {
    if (remaining() < n) throw FormatError("truncated file while reading " + what, pos_);
  }

  std::string buf_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
// Writes to "<path>.tmp" and renames over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace spar::io
