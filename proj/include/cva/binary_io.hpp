#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "cva/tensor.hpp"

namespace cva::io {

/// Little-endian writer independent of host byte order.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os_) throw std::runtime_error("write failed");
  }
  template <class U>
  void uint(U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(U));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::ostream& os_;
};

/// Little-endian reader; every short read raises FormatError with the offset
/// at which the read started.
class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  std::uint64_t offset() const { return offset_; }

  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError(std::string("truncated ") + what, offset_);
    offset_ += n;
  }
  template <class U>
  U uint(const char* what) {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
    return v;
  }
  std::uint8_t u8(const char* what) { return uint<std::uint8_t>(what); }
  std::uint16_t u16(const char* what) { return uint<std::uint16_t>(what); }
  std::uint32_t u32(const char* what) { return uint<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return uint<std::uint64_t>(what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n) bytes(s.data(), n, what);
    return s;
  }
  void expect_magic(const char (&magic)[5]) {
    const auto start = offset_;
    if (str(4, "magic") != std::string(magic, 4)) throw FormatError(std::string("bad magic, expected ") + magic, start);
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::uint64_t offset_ = 0;
};

}  // namespace cva::io
