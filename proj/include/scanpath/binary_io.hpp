#pragma once

// Little-endian primitive I/O for the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace scanpath::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
void write_pod(std::ostream& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) throw FormatError("truncated file while reading " + what);
  return v;
}

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& in, void* data, std::size_t n, const std::string& what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw FormatError("truncated file while reading " + what);
}

inline void write_short_string(std::ostream& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw FormatError("string too long for u16 length prefix");
  write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_short_string(std::istream& in, const std::string& what) {
  const auto n = read_pod<std::uint16_t>(in, what);
  std::string s(n, '\0');
  read_bytes(in, s.data(), n, what);
  return s;
}

}  // namespace scanpath::io
