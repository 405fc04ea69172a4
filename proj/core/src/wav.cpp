// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "modasr/tensor.hpp"

namespace modasr {
namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

void write_wav(const std::filesystem::path& path, std::span<const float> samples, int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(sample_rate));
  put_u32(os, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (float s : samples) {
    const long v = std::clamp(std::lround(static_cast<double>(s) * 32768.0), -32768L, 32767L);
    put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error("'" + path.string() + "' is not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw Error("'" + path.string() + "' is truncated");
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = get_u16(bytes.data() + body);
      channels = get_u16(bytes.data() + body + 2);
      rate = get_u32(bytes.data() + body + 4);
      bits = get_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw Error("'" + path.string() + "': data chunk before fmt chunk");
      if (channels != 1) {
        throw Error("'" + path.string() + "' has " + std::to_string(channels) + " channels; only mono is supported");
      }
      WavData out;
      out.sample_rate = static_cast<int>(rate);
      const unsigned char* p = bytes.data() + body;
      if (format == 1 && bits == 16) {
        out.samples.resize(size / 2);
        for (std::size_t i = 0; i < out.samples.size(); ++i) {
          out.samples[i] = static_cast<float>(static_cast<std::int16_t>(get_u16(p + 2 * i))) / 32768.0f;
        }
      } else if (format == 3 && bits == 32) {
        out.samples.resize(size / 4);
        for (std::size_t i = 0; i < out.samples.size(); ++i) {
          const std::uint32_t u = get_u32(p + 4 * i);
          float f;
          std::memcpy(&f, &u, 4);
          out.samples[i] = f;
        }
      } else {
        throw Error("'" + path.string() + "': unsupported WAV encoding (format " + std::to_string(format) +
                    ", " + std::to_string(bits) + " bits)");
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw Error("'" + path.string() + "' has no data chunk");
}

}  // namespace modasr
