// Copyright (c) 2026 The gramsynth authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal RIFF/WAVE I/O for the one format the pipeline speaks: PCM 16-bit,
// mono, 16 kHz. Anything else is rejected with the offending field named;
// resampling or format conversion is deliberately out of scope because the
// DSP configuration is tied to the sample rate.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gramsynth/frontend.hpp"
#include "gramsynth/tensor.hpp"

namespace gramsynth {

inline constexpr long kWavSampleRate = 16000;
// Samples map to [-1, 1) by this scale; writing is the exact inverse with
// saturating rounding, so a write/read round trip moves each sample by at
// most half a quantization step.
inline constexpr double kWavScale = 1.0 / 32768.0;

namespace detail {

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint32_t>(p[0]) |
                                    (static_cast<std::uint32_t>(p[1]) << 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

/// Reads a PCM 16-bit mono 16 kHz RIFF/WAVE file. Unknown chunks are
/// skipped; a missing or malformed mandatory chunk, or any format field
/// other than the supported one, raises ParseError naming the field.
inline Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open wav file '" + path + "'");
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>()};
  auto fail = [&](const std::string& what) {
    throw ParseError("'" + path + "': " + what);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0) fail("missing RIFF header");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) fail("RIFF form type is not WAVE");

  bool have_fmt = false;
  std::size_t data_begin = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::uint32_t len = detail::read_u32(bytes.data() + pos + 4);
    pos += 8;
    if (pos + len > bytes.size()) fail("chunk '" + id + "' overruns the file");
    if (id == "fmt ") {
      if (len < 16) fail("fmt chunk too short");
      const unsigned char* f = bytes.data() + pos;
      const std::uint16_t format = detail::read_u16(f);
      const std::uint16_t channels = detail::read_u16(f + 2);
      const std::uint32_t rate = detail::read_u32(f + 4);
      const std::uint16_t bits = detail::read_u16(f + 14);
      if (format != 1) fail("audio format " + std::to_string(format) + " unsupported (need PCM = 1)");
      if (channels != 1) {
        fail("channel count " + std::to_string(channels) + " unsupported (need mono = 1)");
      }
      if (rate != static_cast<std::uint32_t>(kWavSampleRate)) {
        fail("sample rate " + std::to_string(rate) + " unsupported (need " +
             std::to_string(kWavSampleRate) + ")");
      }
      if (bits != 16) fail("bit depth " + std::to_string(bits) + " unsupported (need 16)");
      have_fmt = true;
    } else if (id == "data") {
      data_begin = pos;
      data_len = len;
    }
    pos += len + (len % 2);  // chunks are word-aligned
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (data_begin == 0) fail("missing data chunk");
  if (data_len % 2 != 0) fail("data chunk length is odd");

  Waveform w;
  w.sample_rate_hz = kWavSampleRate;
  w.samples.resize(data_len / 2);
  const unsigned char* d = bytes.data() + data_begin;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const std::int16_t v =
        static_cast<std::int16_t>(detail::read_u16(d + 2 * i));
    w.samples[i] = static_cast<double>(v) * kWavScale;
  }
  return w;
}

/// Writes a PCM 16-bit mono 16 kHz RIFF/WAVE file. Samples divide out
/// kWavScale and round to nearest; values beyond full scale saturate.
inline void write_wav(const std::string& path, const Waveform& w) {
  if (w.sample_rate_hz != kWavSampleRate) {
    throw ParseError("write_wav: sample rate " + std::to_string(w.sample_rate_hz) +
                     " unsupported (need " + std::to_string(kWavSampleRate) + ")");
  }
  const std::size_t n = w.samples.size();
  const std::uint32_t data_len = static_cast<std::uint32_t>(2 * n);
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 1);  // PCM
  detail::put_u16(out, 1);  // mono
  detail::put_u32(out, static_cast<std::uint32_t>(kWavSampleRate));
  detail::put_u32(out, static_cast<std::uint32_t>(kWavSampleRate * 2));  // byte rate
  detail::put_u16(out, 2);   // block align
  detail::put_u16(out, 16);  // bits per sample
  out += "data";
  detail::put_u32(out, data_len);
  for (std::size_t i = 0; i < n; ++i) {
    const double scaled = std::round(w.samples[i] / kWavScale);
    if (!std::isfinite(scaled)) {
      throw NumericalError("write_wav: sample " + std::to_string(i) + " is not finite");
    }
    const long long clamped =
        std::clamp(static_cast<long long>(scaled), -32768LL, 32767LL);
    detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(clamped)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ParseError("failed writing wav file '" + path + "'");
}

}  // namespace gramsynth
