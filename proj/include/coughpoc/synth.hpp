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
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/detect.hpp"
#include "coughpoc/features.hpp"
#include "coughpoc/fft.hpp"

// Synthetic cough corpus. All constants here are corpus conventions chosen to
// exercise the detector, phase segmenter and classifiers; none of them is a
// clinical claim.

namespace coughpoc {

struct CoughSynthesisParams {
  double phase1_ms = 50.0;
  double phase2_ms = 200.0;
  bool phase3 = false;
  double phase3_ms = 80.0;
  double f0_hz = 200.0;
  bool wet = false;
  double peak_amplitude = 0.5;
  // Amplitude of the intermediate phase at its end relative to its start.
  double decay = 0.4;

  void validate() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(phase1_ms, 30, 80)) throw std::invalid_argument("phase1_ms must be within 30..80");
    if (!in(phase2_ms, 100, 300)) throw std::invalid_argument("phase2_ms must be within 100..300");
    if (phase3 && !in(phase3_ms, 40, 120)) throw std::invalid_argument("phase3_ms must be within 40..120");
    if (phase3 && !in(f0_hz, 150, 300)) throw std::invalid_argument("f0 must be within 150..300 Hz");
    if (!(peak_amplitude > 0.0 && peak_amplitude <= 1.0)) throw std::invalid_argument("peak amplitude must be in (0, 1]");
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must be in (0, 1]");
    if (total_ms() > 1000.0) throw std::invalid_argument("cough longer than 1000 ms");
  }
  double total_ms() const { return phase1_ms + phase2_ms + (phase3 ? phase3_ms : 0.0); }
};

struct SynthCough {
  std::vector<double> samples;
  CoughSegment truth;  // relative to the fragment start
};

namespace detail {

inline std::vector<double> gaussian_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) x = dist(rng);
  return out;
}

// White noise shaped in the frequency domain: bins outside [lo_hz, hi_hz)
// are zeroed (band-limited), or every bin is scaled by 1/sqrt(f) (pink).
inline std::vector<double> shaped_noise(std::size_t n, int fs, std::mt19937_64& rng, double lo_hz, double hi_hz,
                                        bool pink) {
  const std::size_t nfft = next_power_of_two(std::max<std::size_t>(n, 2));
  auto white = gaussian_noise(nfft, rng);
  std::vector<std::complex<double>> buf(white.begin(), white.end());
  fft_inplace(buf);
  const double df = static_cast<double>(fs) / static_cast<double>(nfft);
  for (std::size_t k = 0; k < nfft; ++k) {
    const std::size_t kk = k <= nfft / 2 ? k : nfft - k;
    const double f = static_cast<double>(kk) * df;
    double gain = 0.0;
    if (pink) {
      gain = kk == 0 ? 0.0 : 1.0 / std::sqrt(f);
    } else {
      gain = (f >= lo_hz && f < hi_hz) ? 1.0 : 0.0;
    }
    buf[k] *= gain;
  }
  fft_inplace(buf, true);
  std::vector<double> out(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = buf[i].real();
    ss += out[i] * out[i];
  }
  const double rms = std::sqrt(ss / static_cast<double>(std::max<std::size_t>(n, 1)));
  if (rms > 0.0) {
    for (auto& x : out) x /= rms;
  }
  return out;
}

inline void ramp(std::vector<double>& x, std::size_t begin, std::size_t len, bool rising) {
  for (std::size_t i = 0; i < len && begin + i < x.size(); ++i) {
    double g = static_cast<double>(i) / static_cast<double>(len);
    x[begin + i] *= rising ? g : 1.0 - g;
  }
}

}  // namespace detail

/// Renders one cough: a broadband burst, exponentially decaying band-limited
/// noise (0-750 Hz when wet, 1500-2250 Hz when dry) and an optional damped
/// voiced tail at f0. Ground-truth phase bounds are exact.
inline SynthCough synth_cough(const CoughSynthesisParams& params, int fs, std::uint64_t seed) {
  params.validate();
  if (fs < 8000) throw std::invalid_argument("synthesis rate must be at least 8 kHz");
  std::mt19937_64 rng(seed);
  const auto n1 = FrameSpec::ms_to_samples(params.phase1_ms, fs);
  const auto n2 = FrameSpec::ms_to_samples(params.phase2_ms, fs);
  const auto n3 = params.phase3 ? FrameSpec::ms_to_samples(params.phase3_ms, fs) : std::size_t{0};
  const std::size_t n = n1 + n2 + n3;

  std::vector<double> x(n, 0.0);
  auto burst = detail::gaussian_noise(n1, rng);
  for (std::size_t i = 0; i < n1; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(n1);
    x[i] = burst[i] * (1.0 - 0.2 * t);
  }
  detail::ramp(x, 0, FrameSpec::ms_to_samples(3.0, fs), true);

  auto body = params.wet ? detail::shaped_noise(n2, fs, rng, kWetBandLoHz, kWetBandHiHz, false)
                         : detail::shaped_noise(n2, fs, rng, kDryBandLoHz, kDryBandHiHz, false);
  const double rate2 = std::log(params.decay);
  for (std::size_t i = 0; i < n2; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(n2);
    x[n1 + i] = 0.5 * body[i] * std::exp(rate2 * t);
  }

  if (n3 > 0) {
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    const double phi = phase_dist(rng);
    for (std::size_t i = 0; i < n3; ++i) {
      double t = static_cast<double>(i) / fs;
      double env = std::exp(std::log(0.5) * static_cast<double>(i) / static_cast<double>(n3));
      double w = 2.0 * std::numbers::pi * params.f0_hz * t + phi;
      x[n1 + n2 + i] = 0.85 * env * (std::sin(w) + 0.3 * std::sin(2.0 * w));
    }
    detail::ramp(x, n1 + n2, FrameSpec::ms_to_samples(3.0, fs), true);
  }
  const std::size_t fade = FrameSpec::ms_to_samples(5.0, fs);
  detail::ramp(x, n - fade, fade, false);

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (auto& v : x) v *= params.peak_amplitude / peak;
  }

  SynthCough out;
  out.samples = std::move(x);
  out.truth.start_sample = 0;
  out.truth.end_sample = n;
  out.truth.sample_rate_hz = fs;
  out.truth.peak_amplitude = params.peak_amplitude;
  out.truth.phases.push_back({PhaseId::explosive, 0, n1});
  out.truth.phases.push_back({PhaseId::intermediate, n1, n1 + n2});
  if (n3 > 0) out.truth.phases.push_back({PhaseId::voiced, n1 + n2, n});
  out.truth.pattern = n3 > 0 ? CoughPattern::three_phase : CoughPattern::two_phase;
  return out;
}

struct Range {
  double lo;
  double hi;
};

/// Class-conditional generator settings. Sensor values are drawn from a
/// normal distribution and clipped to the given range.
struct ClassProfile {
  std::string name;
  double wet_probability = 0.5;
  double voiced_probability = 0.5;
  double temp_mean = 36.8, temp_std = 0.3;
  Range temp_range{36.0, 37.4};
  double airflow_peak_mean = 8.0, airflow_peak_std = 0.6;
  double airflow_volume_mean = 4.3, airflow_volume_std = 0.35;
  int min_coughs = 1;
  int max_coughs = 3;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (name.empty()) throw std::invalid_argument("profile needs a name");
    if (!prob(wet_probability) || !prob(voiced_probability)) throw std::invalid_argument("probabilities must be in [0, 1]");
    if (min_coughs < 1 || max_coughs < min_coughs) throw std::invalid_argument("bad cough count range");
  }
};

inline std::vector<ClassProfile> default_profiles() {
  ClassProfile covid{"covid_like", 0.15, 0.3, 38.8, 0.5, {37.8, 40.5}, 4.6, 0.6, 2.9, 0.35, 1, 3};
  ClassProfile flu{"flu_like", 0.6, 0.6, 38.3, 0.4, {37.5, 40.0}, 6.6, 0.6, 3.6, 0.35, 1, 3};
  ClassProfile healthy{"healthy", 0.5, 0.5, 36.8, 0.3, {36.0, 37.4}, 8.6, 0.6, 4.3, 0.35, 1, 2};
  return {covid, flu, healthy};
}

struct TruthCough {
  CoughSegment segment;  // absolute sample positions within the clip
  bool wet = false;
};

struct SynthClip {
  std::string id;
  std::string label;
  AudioClip clip;
  SensorRecord sensor;
  std::vector<TruthCough> coughs;
};

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

inline std::mt19937_64 clip_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

/// Clip `index` of a corpus. Its RNG stream depends only on (seed, index), so
/// clips can be generated in any order or in parallel.
inline SynthClip synth_clip(const std::vector<ClassProfile>& profiles, std::size_t index, double snr_db,
                            std::uint64_t seed, int fs = kCanonicalRateHz) {
  if (profiles.empty()) throw std::invalid_argument("need at least one profile");
  const ClassProfile& prof = profiles[index % profiles.size()];
  prof.validate();
  auto rng = clip_rng(seed, index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto normal = [&](double mean, double sd) { return std::normal_distribution<double>(mean, sd)(rng); };

  SynthClip out;
  char id[32];
  std::snprintf(id, sizeof id, "clip-%05zu", index);
  out.id = id;
  out.label = prof.name;

  const int n_coughs = prof.min_coughs + static_cast<int>(unit(rng) * (prof.max_coughs - prof.min_coughs + 1));
  const int count = std::min(n_coughs, prof.max_coughs);
  const double slot_s = 1.2;
  const double clip_s = 0.5 + slot_s * count + 0.6;
  out.clip.sample_rate_hz = fs;
  out.clip.samples.assign(static_cast<std::size_t>(clip_s * fs), 0.0);

  double cough_energy = 0.0;
  std::size_t cough_samples = 0;
  for (int c = 0; c < count; ++c) {
    CoughSynthesisParams p;
    p.phase1_ms = uniform(30, 80);
    p.phase2_ms = uniform(100, 300);
    p.phase3 = unit(rng) < prof.voiced_probability;
    p.phase3_ms = uniform(40, 120);
    p.f0_hz = uniform(150, 300);
    p.wet = unit(rng) < prof.wet_probability;
    p.peak_amplitude = uniform(0.3, 0.8);
    p.decay = uniform(0.3, 0.5);
    const auto start = static_cast<std::size_t>((0.5 + slot_s * c + uniform(0.0, 0.3)) * fs);
    auto cough = synth_cough(p, fs, rng());

    TruthCough t{cough.truth, p.wet};
    t.segment.start_sample += start;
    t.segment.end_sample += start;
    for (auto& ph : t.segment.phases) {
      ph.start += start;
      ph.end += start;
    }
    for (std::size_t i = 0; i < cough.samples.size(); ++i) {
      out.clip.samples[start + i] += cough.samples[i];
      cough_energy += cough.samples[i] * cough.samples[i];
    }
    cough_samples += cough.samples.size();
    out.coughs.push_back(std::move(t));
  }

  if (std::isfinite(snr_db) && cough_samples > 0) {
    const double noise_power = cough_energy / static_cast<double>(cough_samples) / std::pow(10.0, snr_db / 10.0);
    auto noise = detail::shaped_noise(out.clip.samples.size(), fs, rng, 0.0, 0.0, true);
    const double gain = std::sqrt(noise_power);
    for (std::size_t i = 0; i < noise.size(); ++i) out.clip.samples[i] += gain * noise[i];
  }
  for (auto& s : out.clip.samples) s = std::clamp(s, -1.0, 1.0);

  auto clipped = [](double v, Range r) { return std::clamp(v, r.lo, r.hi); };
  out.sensor.body_temp_c = clipped(normal(prof.temp_mean, prof.temp_std), prof.temp_range);
  out.sensor.airflow_peak_lps = std::max(0.5, normal(prof.airflow_peak_mean, prof.airflow_peak_std));
  out.sensor.airflow_volume_l = std::max(0.5, normal(prof.airflow_volume_mean, prof.airflow_volume_std));
  return out;
}

inline nlohmann::json truth_to_json(const SynthClip& c, const std::string& wav) {
  nlohmann::json coughs = nlohmann::json::array();
  for (const auto& t : c.coughs) {
    auto j = segment_to_json(t.segment);
    j.erase("wet_dry");
    j["wet"] = t.wet;
    coughs.push_back(std::move(j));
  }
  return {{"id", c.id}, {"wav", wav}, {"label", c.label}, {"coughs", coughs}};
}

struct CorpusOptions {
  std::size_t n_clips = 200;
  double snr_db = 10.0;
  std::uint64_t seed = 7;
  std::vector<ClassProfile> profiles = default_profiles();
};

/// Writes corpus_dir/{clips/*.wav, manifest.jsonl, truth.jsonl, README} and
/// returns the manifest.
inline DatasetManifest synth_corpus(const CorpusOptions& opts, const std::filesystem::path& dir) {
  if (opts.n_clips < 1) throw std::invalid_argument("corpus needs at least one clip");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) throw std::runtime_error("cannot create corpus directory " + dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (const auto& p : opts.profiles) manifest.classes.push_back(p.name);

  std::ofstream man(dir / "manifest.jsonl", std::ios::trunc);
  std::ofstream truth(dir / "truth.jsonl", std::ios::trunc);
  if (!man || !truth) throw std::runtime_error("cannot write corpus files in " + dir.string());
  for (std::size_t i = 0; i < opts.n_clips; ++i) {
    auto c = synth_clip(opts.profiles, i, opts.snr_db, opts.seed);
    const std::string wav = "clips/" + c.id + ".wav";
    save_wav(c.clip, (dir / wav).string());
    ManifestEntry e{c.id, wav, c.label, c.sensor};
    man << manifest_entry_to_json(e).dump() << '\n';
    truth << truth_to_json(c, wav).dump() << '\n';
    manifest.entries.push_back(std::move(e));
  }

  std::ofstream readme(dir / "README", std::ios::trunc);
  readme << "Synthetic cough corpus\n"
         << "clips: " << opts.n_clips << "\nseed: " << opts.seed << "\nsnr_db: " << opts.snr_db << "\n\n"
         << "Each clip holds 1-3 synthetic coughs (broadband burst, band-limited decaying\n"
         << "noise at 0-750 Hz when wet or 1500-2250 Hz when dry, optional voiced tail)\n"
         << "over pink background noise scaled against mean cough power. Sensor values\n"
         << "are drawn from per-class profiles. Every constant is a corpus convention for\n"
         << "testing, not a physiological or clinical model.\n\n"
         << "manifest.jsonl: id, wav, label, temp_c, airflow_peak_lps, airflow_volume_l\n"
         << "truth.jsonl:    id, wav, label, coughs[start_ms, end_ms, pattern, phases, wet]\n";
  return manifest;
}

}  // namespace coughpoc
