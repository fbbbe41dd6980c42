// Copyright 2026 The urbansound Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// RIFF/WAVE reader and writer for 16-bit little-endian PCM.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "urbansound/common.hpp"

namespace urbansound {

/// Interleaved 16-bit PCM audio.
struct PcmAudio {
  int sample_rate = kSampleRate;
  int channels = 1;
  std::vector<std::int16_t> interleaved;

  std::size_t frames() const { return channels > 0 ? interleaved.size() / channels : 0; }
  double duration_s() const { return static_cast<double>(frames()) / sample_rate; }

  std::vector<std::int16_t> channel(int c) const {
    std::vector<std::int16_t> out(frames());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = interleaved[i * channels + c];
    return out;
  }
};

namespace wav_detail {

inline std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace wav_detail

inline PcmAudio parse_wav(const std::string& bytes) {
  using namespace wav_detail;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file");
  PcmAudio out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      // Truncated data chunk: keep whole sample frames that are present.
      if (std::memcmp(p + pos, "data", 4) != 0) throw DataError("truncated WAV chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (avail < 16) throw DataError("short fmt chunk");
      std::uint16_t tag = le16(p + body);
      out.channels = le16(p + body + 2);
      out.sample_rate = static_cast<int>(le32(p + body + 4));
      const std::uint16_t bits = le16(p + body + 14);
      if (tag == 0xFFFE && avail >= 26) tag = le16(p + body + 24);
      if (tag != 1) throw DataError("WAV is not integer PCM");
      if (bits != 16) throw DataError("WAV is not 16-bit");
      if (out.channels < 1) throw DataError("WAV has no channels");
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw DataError("data chunk before fmt chunk");
      const std::size_t frame_bytes = 2u * static_cast<std::size_t>(out.channels);
      const std::size_t n = (avail / frame_bytes) * out.channels;
      out.interleaved.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        out.interleaved[i] = static_cast<std::int16_t>(le16(p + body + 2 * i));
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw DataError("WAV has no data chunk");
}

inline PcmAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_wav(bytes);
}

inline std::string serialize_wav(const PcmAudio& audio) {
  using namespace wav_detail;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(audio.interleaved.size() * 2);
  std::string s;
  s.reserve(44 + data_bytes);
  s += "RIFF";
  put32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, 1);
  put16(s, static_cast<std::uint16_t>(audio.channels));
  put32(s, static_cast<std::uint32_t>(audio.sample_rate));
  put32(s, static_cast<std::uint32_t>(audio.sample_rate * audio.channels * 2));
  put16(s, static_cast<std::uint16_t>(audio.channels * 2));
  put16(s, 16);
  s += "data";
  put32(s, data_bytes);
  for (std::int16_t v : audio.interleaved) put16(s, static_cast<std::uint16_t>(v));
  return s;
}

inline void write_wav(const std::filesystem::path& path, const PcmAudio& audio) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const std::string bytes = serialize_wav(audio);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace urbansound
