#pragma once

// AAPT v1 tensor files:
//   "AAPT" | u8 version (1) | u8 rank r | r x u32 LE dims | row-major f32 LE payload

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aapool/errors.hpp"
#include "aapool/tensor.hpp"

namespace aapool::io {

inline constexpr std::array<char, 4> kMagic = {'A', 'A', 'P', 'T'};
inline constexpr std::uint8_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "AAPT I/O assumes a little-endian host");

inline void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("AAPT: rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  const std::uint8_t header[2] = {kVersion, static_cast<std::uint8_t>(t.rank())};
  os.write(reinterpret_cast<const char*>(header), 2);
  for (std::size_t d : t.shape()) {
    if (d > UINT32_MAX) throw FormatError("AAPT: dimension exceeds u32");
    const auto d32 = static_cast<std::uint32_t>(d);
    os.write(reinterpret_cast<const char*>(&d32), sizeof d32);
  }
  os.write(reinterpret_cast<const char*>(t.data().data()),
           static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!os) throw FormatError("AAPT: write failed");
}

inline Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw FormatError("AAPT: bad magic");
  std::uint8_t header[2] = {0, 0};
  is.read(reinterpret_cast<char*>(header), 2);
  if (!is) throw FormatError("AAPT: truncated header");
  if (header[0] != kVersion) {
    throw FormatError("AAPT: unsupported version " + std::to_string(header[0]));
  }
  Shape shape(header[1]);
  for (auto& d : shape) {
    std::uint32_t d32 = 0;
    is.read(reinterpret_cast<char*>(&d32), sizeof d32);
    if (!is) throw FormatError("AAPT: truncated dims");
    d = d32;
  }
  std::vector<float> data(numel_of(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!is) throw FormatError("AAPT: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << text;
}

// FNV-1a 64; stable content hash for manifests.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

}  // namespace aapool::io
