#pragma once

// Minimal RIFF/WAVE reader and writer for 16-bit PCM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "aapool/errors.hpp"

namespace aapool::wav {

struct Audio {
  int sample_rate = 0;
  int channels = 0;
  std::vector<std::int16_t> samples;  // interleaved

  std::size_t frames() const { return channels ? samples.size() / static_cast<std::size_t>(channels) : 0; }
};

namespace detail {

inline std::uint32_t u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

inline Audio parse(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("wav: not a RIFF/WAVE stream");
  }
  Audio audio;
  bool have_fmt = false, have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::size_t size = detail::u32le(chunk + 4);
    if (pos + 8 + size > bytes.size()) throw FormatError("wav: truncated chunk");
    const unsigned char* body = chunk + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("wav: short fmt chunk");
      const auto format = detail::u16le(body);
      audio.channels = detail::u16le(body + 2);
      audio.sample_rate = static_cast<int>(detail::u32le(body + 4));
      const auto bits = detail::u16le(body + 14);
      if (format != 1 || bits != 16) throw FormatError("wav: only 16-bit PCM is supported");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("wav: data chunk before fmt chunk");
      audio.samples.resize(size / 2);
      for (std::size_t i = 0; i < audio.samples.size(); ++i) {
        audio.samples[i] = static_cast<std::int16_t>(detail::u16le(body + 2 * i));
      }
      have_data = true;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt || !have_data) throw FormatError("wav: missing fmt or data chunk");
  if (audio.channels < 1) throw FormatError("wav: zero channels");
  return audio;
}

inline Audio read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

inline std::string encode(const Audio& audio) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  out += "RIFF";
  detail::put32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  detail::put32(out, 16);
  detail::put16(out, 1);
  detail::put16(out, static_cast<std::uint16_t>(audio.channels));
  detail::put32(out, static_cast<std::uint32_t>(audio.sample_rate));
  detail::put32(out, static_cast<std::uint32_t>(audio.sample_rate * audio.channels * 2));
  detail::put16(out, static_cast<std::uint16_t>(audio.channels * 2));
  detail::put16(out, 16);
  out += "data";
  detail::put32(out, data_bytes);
  for (auto s : audio.samples) detail::put16(out, static_cast<std::uint16_t>(s));
  return out;
}

inline void write(const std::filesystem::path& path, const Audio& audio) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const auto bytes = encode(audio);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Float samples in [-1, 1] to mono PCM16 (clipped, rounded).
inline Audio from_float(std::span<const float> samples, int sample_rate) {
  Audio audio{sample_rate, 1, {}};
  audio.samples.reserve(samples.size());
  for (float v : samples) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    audio.samples.push_back(static_cast<std::int16_t>(std::lrint(c * 32767.0f)));
  }
  return audio;
}

inline std::vector<float> to_float(const Audio& audio) {
  std::vector<float> out(audio.samples.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(audio.samples[i]) / 32768.0f;
  return out;
}

}  // namespace aapool::wav
