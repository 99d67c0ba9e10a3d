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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "coughpoc/audio.hpp"
#include "test_util.hpp"

using namespace coughpoc;

namespace {

// Hand-built RIFF file, independent of encode_wav.
std::vector<std::uint8_t> make_wav(const std::vector<std::int16_t>& interleaved, int channels, int rate,
                                   std::uint16_t format = 1, int bits = 16, bool extra_chunk = false) {
  std::vector<std::uint8_t> b;
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  tag("RIFF");
  u32(36 + data_bytes + (extra_chunk ? 12 : 0));
  tag("WAVE");
  if (extra_chunk) {
    tag("LIST");
    u32(4);
    tag("INFO");
  }
  tag("fmt ");
  u32(16);
  u16(format);
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * bits / 8));
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(static_cast<std::uint16_t>(bits));
  tag("data");
  u32(data_bytes);
  for (auto s : interleaved) u16(static_cast<std::uint16_t>(s));
  return b;
}

}  // namespace

TEST(Wav, SilenceSecondHasExpectedLength) {
  const auto clip = parse_wav(make_wav(std::vector<std::int16_t>(22050, 0), 1, 22050));
  EXPECT_EQ(clip.samples.size(), 22050u);
  EXPECT_EQ(clip.sample_rate_hz, 22050);
  for (double s : clip.samples) EXPECT_EQ(s, 0.0);
  EXPECT_FALSE(clip.clipped);
}

TEST(Wav, FullScaleSampleScalesByInverse32768) {
  const auto clip = parse_wav(make_wav({32767, -32768, 16384}, 1, 22050));
  EXPECT_DOUBLE_EQ(clip.samples[0], 32767.0 / 32768.0);
  EXPECT_DOUBLE_EQ(clip.samples[1], -1.0);
  EXPECT_DOUBLE_EQ(clip.samples[2], 0.5);
  EXPECT_TRUE(clip.clipped);
}

TEST(Wav, StereoIsAveragedToMono) {
  const auto clip = parse_wav(make_wav({1000, 3000, -200, 200}, 2, 44100));
  ASSERT_EQ(clip.samples.size(), 2u);
  EXPECT_DOUBLE_EQ(clip.samples[0], 2000.0 / 32768.0);
  EXPECT_DOUBLE_EQ(clip.samples[1], 0.0);
  EXPECT_EQ(clip.sample_rate_hz, 44100);
}

TEST(Wav, SkipsUnknownChunks) {
  const auto clip = parse_wav(make_wav({1, 2, 3}, 1, 8000, 1, 16, true));
  EXPECT_EQ(clip.samples.size(), 3u);
}

TEST(Wav, RejectsMalformedAndUnsupported) {
  std::vector<std::uint8_t> junk{'R', 'I', 'F', 'F', 0, 0};
  EXPECT_THROW(parse_wav(junk), FormatError);
  auto bad_magic = make_wav({1, 2}, 1, 8000);
  bad_magic[8] = 'X';
  EXPECT_THROW(parse_wav(bad_magic), FormatError);
  EXPECT_THROW(parse_wav(make_wav({1, 2}, 1, 8000, 3)), FormatError);       // IEEE float
  EXPECT_THROW(parse_wav(make_wav({1, 2}, 1, 8000, 1, 24)), FormatError);   // 24-bit
  auto truncated = make_wav(std::vector<std::int16_t>(100, 5), 1, 8000);
  truncated.resize(30);  // cut inside the fmt chunk
  EXPECT_THROW(parse_wav(truncated), FormatError);
}

TEST(Wav, ShortDataChunkIsReadUpToEndOfFile) {
  // Streaming writers may leave the data length unset; the reader keeps
  // whatever whole frames are present.
  auto bytes = make_wav(std::vector<std::int16_t>(100, 5), 1, 8000);
  bytes.resize(bytes.size() - 50);
  EXPECT_EQ(parse_wav(bytes).samples.size(), 75u);
}

TEST(Wav, RoundTripWithinOneLsbOnRandomClips) {
  const auto dir = testutil::temp_dir("wav");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int c = 0; c < 100; ++c) {
    AudioClip clip;
    clip.samples.resize(200 + static_cast<std::size_t>(c) * 13);
    for (auto& s : clip.samples) s = u(rng);
    const auto path = (dir / "x.wav").string();
    save_wav(clip, path);
    const auto back = load_wav(path);
    ASSERT_EQ(back.samples.size(), clip.samples.size());
    ASSERT_EQ(back.sample_rate_hz, clip.sample_rate_hz);
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      ASSERT_LE(std::abs(back.samples[i] - clip.samples[i]), 1.0 / 32768.0);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST(Wav, EncodedBytesMatchIndependentWriter) {
  AudioClip clip;
  clip.samples = {0.0, 0.5, -0.25};
  EXPECT_EQ(encode_wav(clip), make_wav({0, 16384, -8192}, 1, 22050));
}

TEST(Resample, SameRateIsIdentity) {
  AudioClip clip;
  clip.samples = testutil::white_noise(1000, 1);
  const auto out = resample(clip, kCanonicalRateHz);
  EXPECT_EQ(out.samples, clip.samples);
}

TEST(Resample, HalvingRateKeepsSineShape) {
  AudioClip clip;
  clip.sample_rate_hz = 44100;
  clip.samples = testutil::sine(44100, 100.0, 44100);
  const auto out = resample(clip, 22050);
  ASSERT_EQ(out.samples.size(), 22050u);
  EXPECT_EQ(out.sample_rate_hz, 22050);
  const auto ref = testutil::sine(22050, 100.0, 22050);
  for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_LT(std::abs(out.samples[i] - ref[i]), 0.01);
}

TEST(Resample, LengthIsRoundedRatio) {
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.assign(1001, 0.1);
  EXPECT_EQ(resample(clip, 22050).samples.size(), static_cast<std::size_t>(std::llround(1001.0 * 22050 / 16000)));
}

TEST(Resample, ConstantStaysConstant) {
  for (int rate : {8000, 16000, 44100, 48000}) {
    AudioClip clip;
    clip.sample_rate_hz = rate;
    clip.samples.assign(777, -0.3);
    for (double s : resample(clip, 22050).samples) ASSERT_DOUBLE_EQ(s, -0.3);
  }
}

TEST(Resample, RejectsNonPositiveTarget) {
  AudioClip clip;
  clip.samples = {0.0};
  EXPECT_THROW(resample(clip, 0), std::invalid_argument);
}

TEST(Clip, ValidateRejectsEmptyAndNonFinite) {
  AudioClip empty;
  EXPECT_THROW(validate_clip(empty), std::invalid_argument);
  AudioClip nan_clip;
  nan_clip.samples = {0.0, std::nan("")};
  EXPECT_THROW(validate_clip(nan_clip), std::invalid_argument);
}
