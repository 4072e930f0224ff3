#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bsdiff/errors.hpp"

namespace bsdiff::io {

// Little-endian primitives; independent of host byte order.

inline void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), b.size());
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(b.data(), b.size());
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f64s(std::ostream& os, std::span<const double> values) {
  for (double v : values) write_f64(os, v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) throw InvalidArgument("truncated binary file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) throw InvalidArgument("truncated binary file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void read_f64s(std::istream& is, std::span<double> out) {
  for (double& v : out) v = read_f64(is);
}

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw InvalidArgument("bad file magic, expected " + std::string(magic));
  }
}

/// Shortest round-trip decimal form, so text outputs are byte-stable.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
  std::ofstream os(path, binary ? std::ios::binary | std::ios::out : std::ios::out);
  if (!os) throw InvalidArgument("cannot open output file: " + path);
  return os;
}

inline std::ifstream open_input(const std::string& path, bool binary = false) {
  std::ifstream is(path, binary ? std::ios::binary | std::ios::in : std::ios::in);
  if (!is) throw InvalidArgument("cannot open input file: " + path);
  return is;
}

/// FNV-1a, used for config hashes and stream fingerprints.
class Fnv1a {
 public:
  void add_bytes(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  void add_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xFFu;
      state_ *= 0x100000001b3ULL;
    }
  }
  void add_double(double v) { add_u64(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xFu];
    v >>= 4;
  }
  return s;
}

}  // namespace bsdiff::io
