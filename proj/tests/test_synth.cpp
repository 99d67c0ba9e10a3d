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

#include <fstream>
#include <map>

#include "coughpoc/detect.hpp"
#include "coughpoc/synth.hpp"
#include "test_util.hpp"

using namespace coughpoc;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(SynthCough, WetPhaseTwoEnergyIsLowBand) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CoughSynthesisParams p;
    p.wet = true;
    const auto c = synth_cough(p, 22050, seed);
    const auto* ph = c.truth.phase(PhaseId::intermediate);
    ASSERT_NE(ph, nullptr);
    const std::vector<double> body(c.samples.begin() + ph->start, c.samples.begin() + ph->start + 2048);
    const auto ps = testutil::dft_power(body, 2048);
    double lo = 0, hi = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const double f = k * 22050.0 / 2048.0;
      if (f < 750.0) lo += ps[k];
      if (f >= 1500.0 && f < 2250.0) hi += ps[k];
    }
    EXPECT_GT(lo / hi, 3.0);
  }
}

TEST(SynthCough, DryPhaseTwoEnergyIsHighBand) {
  CoughSynthesisParams p;
  p.wet = false;
  const auto c = synth_cough(p, 22050, 9);
  const auto* ph = c.truth.phase(PhaseId::intermediate);
  const std::vector<double> body(c.samples.begin() + ph->start, c.samples.begin() + ph->start + 2048);
  const auto ps = testutil::dft_power(body, 2048);
  double lo = 0, hi = 0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const double f = k * 22050.0 / 2048.0;
    if (f < 750.0) lo += ps[k];
    if (f >= 1500.0 && f < 2250.0) hi += ps[k];
  }
  EXPECT_LT(lo / hi, 1.0 / 3.0);
}

TEST(SynthCough, TruthBoundariesAndPattern) {
  CoughSynthesisParams p;
  p.phase1_ms = 40;
  p.phase2_ms = 200;
  p.phase3 = false;
  const auto two = synth_cough(p, 22050, 1);
  EXPECT_EQ(two.truth.pattern, CoughPattern::two_phase);
  ASSERT_EQ(two.truth.phases.size(), 2u);
  EXPECT_EQ(two.truth.phases[0].end, 882u);
  EXPECT_EQ(two.truth.end_sample, 882u + 4410u);
  EXPECT_EQ(two.samples.size(), two.truth.end_sample);

  p.phase3 = true;
  p.phase3_ms = 100;
  const auto three = synth_cough(p, 22050, 1);
  EXPECT_EQ(three.truth.pattern, CoughPattern::three_phase);
  ASSERT_EQ(three.truth.phases.size(), 3u);
  EXPECT_EQ(three.truth.phases[2].end, three.samples.size());

  double peak = 0;
  for (double v : three.samples) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, p.peak_amplitude, 1e-12);
}

TEST(SynthCough, SameSeedSameWaveform) {
  CoughSynthesisParams p;
  EXPECT_EQ(synth_cough(p, 22050, 4).samples, synth_cough(p, 22050, 4).samples);
  EXPECT_NE(synth_cough(p, 22050, 4).samples, synth_cough(p, 22050, 5).samples);
}

TEST(SynthCough, RejectsInvalidParameters) {
  CoughSynthesisParams p;
  p.phase1_ms = 10;
  EXPECT_THROW(synth_cough(p, 22050, 1), std::invalid_argument);
  p = {};
  p.phase2_ms = 400;
  EXPECT_THROW(synth_cough(p, 22050, 1), std::invalid_argument);
  p = {};
  p.phase3 = true;
  p.f0_hz = 80;
  EXPECT_THROW(synth_cough(p, 22050, 1), std::invalid_argument);
  p = {};
  p.peak_amplitude = 0.0;
  EXPECT_THROW(synth_cough(p, 22050, 1), std::invalid_argument);
}

TEST(SynthClip, IndependentOfGenerationOrder) {
  const auto profiles = default_profiles();
  const auto late = synth_clip(profiles, 17, 10.0, 3);
  for (std::size_t i = 0; i < 3; ++i) (void)synth_clip(profiles, i, 10.0, 3);
  const auto again = synth_clip(profiles, 17, 10.0, 3);
  EXPECT_EQ(late.clip.samples, again.clip.samples);
  EXPECT_EQ(late.sensor, again.sensor);
  EXPECT_EQ(late.label, profiles[17 % 3].name);
}

TEST(SynthClip, CoughCountAndSensorRanges) {
  const auto profiles = default_profiles();
  for (std::size_t i = 0; i < 60; ++i) {
    const auto c = synth_clip(profiles, i, 10.0, 5);
    const auto& prof = profiles[i % 3];
    EXPECT_GE(static_cast<int>(c.coughs.size()), prof.min_coughs);
    EXPECT_LE(static_cast<int>(c.coughs.size()), prof.max_coughs);
    ASSERT_TRUE(c.sensor.body_temp_c.has_value());
    EXPECT_GE(*c.sensor.body_temp_c, prof.temp_range.lo);
    EXPECT_LE(*c.sensor.body_temp_c, prof.temp_range.hi);
    for (double s : c.clip.samples) ASSERT_LE(std::abs(s), 1.0);
    for (std::size_t k = 1; k < c.coughs.size(); ++k) {
      EXPECT_LT(c.coughs[k - 1].segment.end_sample, c.coughs[k].segment.start_sample);
    }
  }
}

TEST(SynthClip, FeverClassesAreWarmerByMoreThanOneDegree) {
  const auto profiles = default_profiles();
  std::map<std::string, std::pair<double, int>> sums;
  for (std::size_t i = 0; i < 300; ++i) {
    const auto c = synth_clip(profiles, i, kNoNoise, 8);
    auto& s = sums[c.label];
    s.first += *c.sensor.body_temp_c;
    ++s.second;
  }
  auto mean = [&](const std::string& k) { return sums[k].first / sums[k].second; };
  EXPECT_GT(mean("covid_like") - mean("healthy"), 1.0);
  EXPECT_GT(mean("flu_like") - mean("healthy"), 1.0);
}

TEST(SynthClip, NoiselessCorpusIsFullyDetected) {
  const auto profiles = default_profiles();
  std::size_t matched = 0, refs = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto c = synth_clip(profiles, i, kNoNoise, 12);
    std::vector<std::pair<std::size_t, std::size_t>> d, r;
    for (const auto& s : detect_coughs(c.clip)) d.emplace_back(s.start_sample, s.end_sample);
    for (const auto& t : c.coughs) r.emplace_back(t.segment.start_sample, t.segment.end_sample);
    const auto m = testutil::match_events(d, r, 22050);
    matched += m.matched;
    refs += m.reference;
  }
  EXPECT_EQ(matched, refs);
}

TEST(SynthCorpus, LayoutBalanceAndDeterminism) {
  const auto a = testutil::temp_dir("corpus-a");
  const auto b = testutil::temp_dir("corpus-b");
  CorpusOptions opts;
  opts.n_clips = 20;
  opts.seed = 7;
  const auto m = synth_corpus(opts, a);
  synth_corpus(opts, b);
  EXPECT_EQ(m.entries.size(), 20u);
  std::map<std::string, int> counts;
  for (const auto& e : m.entries) ++counts[e.label];
  EXPECT_EQ(counts["covid_like"], 7);
  EXPECT_EQ(counts["flu_like"], 7);
  EXPECT_EQ(counts["healthy"], 6);
  for (const char* f : {"manifest.jsonl", "truth.jsonl", "README"}) {
    ASSERT_TRUE(std::filesystem::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  for (const auto& e : m.entries) EXPECT_EQ(slurp(a / e.wav), slurp(b / e.wav));
  const auto reloaded = load_manifest(a / "manifest.jsonl");
  EXPECT_EQ(reloaded.entries, m.entries);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(SynthCorpus, RejectsEmptyCorpus) {
  CorpusOptions opts;
  opts.n_clips = 0;
  EXPECT_THROW(synth_corpus(opts, testutil::temp_dir("empty")), std::invalid_argument);
}
