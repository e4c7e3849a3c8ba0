#pragma once

// Little-endian binary readers and writers shared by the dataset container
// and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "pimpnet/error.hpp"

namespace pimpnet::binio {

class Writer {
 public:
  explicit Writer(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError(IoCode::io_failure, "cannot open " + path + " for writing");
  }

  void u8(std::uint8_t v) { put(&v, 1); }
  void u16(std::uint16_t v) {
    std::uint8_t b[2] = {std::uint8_t(v & 0xff), std::uint8_t(v >> 8)};
    put(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = std::uint8_t(v >> (8 * i));
    put(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (8 * i));
    put(b, 8);
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) { put(p, n); }
  void text(const std::string& s) { put(s.data(), s.size()); }

  void close() {
    out_.close();
    if (!out_) throw IoError(IoCode::io_failure, "write to " + path_ + " failed");
  }

 private:
  void put(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), std::streamsize(n));
    if (!out_) throw IoError(IoCode::io_failure, "write to " + path_ + " failed");
  }

  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError(IoCode::io_failure, "cannot open " + path);
  }

  std::uint8_t u8() {
    std::uint8_t v;
    get(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    get(b, 2);
    return std::uint16_t(b[0] | (std::uint16_t(b[1]) << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    get(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    get(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void bytes(void* p, std::size_t n) { get(p, n); }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    get(s.data(), n);
    return s;
  }

  // The formats declare their exact length; anything left over is corrupt.
  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) throw IoError(IoCode::bad_payload, path_ + ": trailing bytes after payload");
  }

 private:
  void get(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n)
      throw IoError(IoCode::truncated, path_ + ": truncated payload");
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace pimpnet::binio
