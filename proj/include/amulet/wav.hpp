// Copyright 2026 The AMULET-Desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// RIFF/WAVE reader and writer restricted to PCM 16-bit mono, little-endian.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "amulet/audio.hpp"
#include "amulet/errors.hpp"

namespace amulet::wav {

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  int format_tag = 0;
  std::size_t frames = 0;
};

namespace detail {

inline std::uint32_t rd32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t rd16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline void wr32(std::vector<unsigned char>& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void wr16(std::vector<unsigned char>& o, std::uint16_t v) {
  o.push_back(static_cast<unsigned char>(v));
  o.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

inline std::int16_t to_pcm16(double x) {
  const double v = std::nearbyint(x * 32768.0);
  if (v > 32767.0) return 32767;
  if (v < -32768.0) return -32768;
  return static_cast<std::int16_t>(v);
}

inline double from_pcm16(std::int16_t s) { return static_cast<double>(s) / 32768.0; }

/// Parses a WAV byte buffer. Only PCM 16-bit mono is accepted.
inline AudioClip decode(const std::vector<unsigned char>& buf, const std::string& name, WavInfo* info_out = nullptr) {
  using detail::rd16;
  using detail::rd32;
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw IoError(name + ": malformed WAV header (missing RIFF/WAVE)");
  }
  WavInfo info;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* ck = buf.data() + pos;
    const std::uint32_t len = rd32(ck + 4);
    if (pos + 8 + len > buf.size()) throw IoError(name + ": malformed WAV header (truncated chunk)");
    if (std::memcmp(ck, "fmt ", 4) == 0) {
      if (len < 16) throw IoError(name + ": malformed WAV header (short fmt chunk)");
      info.format_tag = rd16(ck + 8);
      info.channels = rd16(ck + 10);
      info.sample_rate = static_cast<int>(rd32(ck + 12));
      info.bits_per_sample = rd16(ck + 22);
      have_fmt = true;
    } else if (std::memcmp(ck, "data", 4) == 0) {
      data = ck + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1u);
  }
  if (!have_fmt || data == nullptr) throw IoError(name + ": malformed WAV header (missing fmt or data chunk)");
  if (info.format_tag != 1 || info.bits_per_sample != 16 || info.channels != 1) {
    throw UnsupportedEncodingError(name + ": unsupported encoding (format " + std::to_string(info.format_tag) + ", " +
                                   std::to_string(info.bits_per_sample) + "-bit, " + std::to_string(info.channels) +
                                   " channel(s)); only PCM 16-bit mono is supported");
  }
  if (info.sample_rate <= 0) throw IoError(name + ": malformed WAV header (sample rate)");
  info.frames = data_len / 2;
  AudioClip clip;
  clip.sample_rate = info.sample_rate;
  clip.samples.resize(info.frames);
  for (std::size_t i = 0; i < info.frames; ++i) {
    clip.samples[i] = from_pcm16(static_cast<std::int16_t>(rd16(data + 2 * i)));
  }
  if (info_out) *info_out = info;
  return clip;
}

inline std::vector<unsigned char> encode(const AudioClip& clip) {
  std::vector<unsigned char> o;
  const std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  o.reserve(44 + data_len);
  o.insert(o.end(), {'R', 'I', 'F', 'F'});
  detail::wr32(o, 36 + data_len);
  o.insert(o.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::wr32(o, 16);
  detail::wr16(o, 1);
  detail::wr16(o, 1);
  detail::wr32(o, static_cast<std::uint32_t>(clip.sample_rate));
  detail::wr32(o, static_cast<std::uint32_t>(clip.sample_rate * 2));
  detail::wr16(o, 2);
  detail::wr16(o, 16);
  o.insert(o.end(), {'d', 'a', 't', 'a'});
  detail::wr32(o, data_len);
  for (double x : clip.samples) {
    const auto u = static_cast<std::uint16_t>(to_pcm16(x));
    detail::wr16(o, u);
  }
  return o;
}

inline AudioClip read(const std::string& path, WavInfo* info = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open WAV file " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode(buf, path, info);
}

inline void write(const std::string& path, const AudioClip& clip) {
  const auto bytes = encode(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write WAV file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write on " + path);
}

/// Rounds samples to the 16-bit grid, as a write/read round trip would.
inline void quantize_pcm16(AudioClip& clip) {
  for (auto& x : clip.samples) x = from_pcm16(to_pcm16(x));
}

}  // namespace amulet::wav
