/* Copyright 2026 The coughpoc Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coughpoc/error.hpp"

namespace coughpoc {

inline constexpr int kCanonicalRateHz = 22050;

/// Mono PCM audio with amplitudes in [-1, 1].
///
/// `clipped` is set by the WAV reader when any sample sits at 16-bit full
/// scale; such input is accepted and only flagged.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = kCanonicalRateHz;
  bool clipped = false;

  std::size_t size() const noexcept { return samples.size(); }
  double duration_s() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

inline void validate_clip(const AudioClip& clip) {
  if (clip.sample_rate_hz <= 0) {
    throw std::invalid_argument("sample rate must be positive");
  }
  if (clip.samples.empty()) {
    throw std::invalid_argument("audio clip is empty");
  }
  for (double s : clip.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("audio clip has non-finite samples");
  }
}

namespace detail {

inline std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_tag(std::vector<std::uint8_t>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace detail

/// Decodes a RIFF/WAVE byte buffer. Only 16-bit PCM with one or two channels
/// is accepted; stereo is averaged to mono and samples are scaled by 1/32768.
inline AudioClip parse_wav(std::span<const std::uint8_t> bytes) {
  using detail::read_u16;
  using detail::read_u32;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw FormatError("not a RIFF/WAVE file");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    std::size_t len = read_u32(chunk + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size()) throw FormatError("truncated fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == detail::kFormatExtensible && len >= 40) {
        // SubFormat GUID starts at offset 24 of the chunk body; first two bytes
        // carry the actual format tag.
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      // Some writers leave the size at 0 or 0xFFFFFFFF when streaming.
      data_len = std::min(len, bytes.size() - body);
      data = bytes.data() + body;
      break;
    }
    pos = body + len + (len & 1);
  }

  if (!have_fmt) throw FormatError("missing fmt chunk");
  if (data == nullptr) throw FormatError("missing data chunk");
  if (format != detail::kFormatPcm) {
    throw FormatError("unsupported WAV codec " + std::to_string(format) + " (PCM required)");
  }
  if (bits != 16) {
    throw FormatError("unsupported bit depth " + std::to_string(bits) + " (16 required)");
  }
  if (channels != 1 && channels != 2) {
    throw FormatError("unsupported channel count " + std::to_string(channels));
  }
  if (rate == 0) throw FormatError("sample rate is zero");

  const std::size_t frame_bytes = 2u * channels;
  const std::size_t n = data_len / frame_bytes;
  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      auto raw = static_cast<std::int16_t>(read_u16(data + i * frame_bytes + 2 * c));
      if (raw == 32767 || raw == -32768) clip.clipped = true;
      acc += raw / 32768.0;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

/// Encodes a clip as canonical 16-bit mono PCM. Samples are rounded to the
/// nearest code and saturated to the int16 range.
inline std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  using namespace detail;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_len = 2 * n;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_len);
  for (double s : clip.samples) {
    double q = std::nearbyint(s * 32768.0);
    q = std::clamp(q, -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline AudioClip load_wav(const std::string& path) {
  auto bytes = read_file_bytes(path);
  try {
    return parse_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save_wav(const AudioClip& clip, const std::string& path) {
  write_file_bytes(path, encode_wav(clip));
}

/// Linear-interpolation resampler. Output length is round(n * target / source).
inline AudioClip resample(const AudioClip& clip, int target_hz) {
  if (target_hz <= 0) throw std::invalid_argument("resample target rate must be positive");
  if (clip.sample_rate_hz <= 0) throw std::invalid_argument("source rate must be positive");
  if (target_hz == clip.sample_rate_hz) return clip;

  const std::size_t n = clip.samples.size();
  const double step = static_cast<double>(clip.sample_rate_hz) / target_hz;
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_hz / clip.sample_rate_hz));

  AudioClip out;
  out.sample_rate_hz = target_hz;
  out.clipped = clip.clipped;
  out.samples.resize(m);
  if (n == 0) return out;
  for (std::size_t i = 0; i < m; ++i) {
    double t = static_cast<double>(i) * step;
    auto i0 = static_cast<std::size_t>(t);
    if (i0 >= n - 1) {
      out.samples[i] = clip.samples[n - 1];
      continue;
    }
    double frac = t - static_cast<double>(i0);
    out.samples[i] = clip.samples[i0] + frac * (clip.samples[i0 + 1] - clip.samples[i0]);
  }
  return out;
}

}  // namespace coughpoc
