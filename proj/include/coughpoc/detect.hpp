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
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/dsp.hpp"
#include "coughpoc/error.hpp"

namespace coughpoc {

enum class PhaseId { explosive, intermediate, voiced };
enum class CoughPattern { three_phase, two_phase, peal };

inline std::string_view to_string(PhaseId p) {
  switch (p) {
    case PhaseId::explosive: return "explosive";
    case PhaseId::intermediate: return "intermediate";
    case PhaseId::voiced: return "voiced";
  }
  return "?";
}

inline std::string_view to_string(CoughPattern p) {
  switch (p) {
    case CoughPattern::three_phase: return "three_phase";
    case CoughPattern::two_phase: return "two_phase";
    case CoughPattern::peal: return "peal";
  }
  return "?";
}

inline CoughPattern pattern_from_string(std::string_view s) {
  if (s == "three_phase") return CoughPattern::three_phase;
  if (s == "two_phase") return CoughPattern::two_phase;
  if (s == "peal") return CoughPattern::peal;
  throw FormatError("unknown cough pattern '" + std::string(s) + "'");
}

struct PhaseBoundary {
  PhaseId id;
  std::size_t start;  // sample index, inclusive
  std::size_t end;    // exclusive
  friend bool operator==(const PhaseBoundary&, const PhaseBoundary&) = default;
};

/// A detected cough event. Sample bounds are half-open: [start, end).
struct CoughSegment {
  std::size_t start_sample = 0;
  std::size_t end_sample = 0;
  int sample_rate_hz = kCanonicalRateHz;
  std::vector<PhaseBoundary> phases;
  CoughPattern pattern = CoughPattern::two_phase;
  double peak_amplitude = 0.0;
  // Set when the detector split an over-long event at an energy valley.
  bool split_from_longer = false;

  double start_ms() const { return 1000.0 * static_cast<double>(start_sample) / sample_rate_hz; }
  double end_ms() const { return 1000.0 * static_cast<double>(end_sample) / sample_rate_hz; }
  double duration_ms() const { return end_ms() - start_ms(); }

  const PhaseBoundary* phase(PhaseId id) const {
    for (const auto& p : phases) {
      if (p.id == id) return &p;
    }
    return nullptr;
  }

  friend bool operator==(const CoughSegment&, const CoughSegment&) = default;
};

struct DetectorConfig {
  double analysis_window_ms = 50.0;
  double energy_threshold_k = 4.0;  // in MADs above the median
  double min_duration_ms = 120.0;
  double max_duration_ms = 1000.0;
  double hysteresis_ratio = 0.5;
  // Rumble below this is removed before energy gating; 0 disables.
  double highpass_hz = 100.0;

  void validate() const {
    if (!(analysis_window_ms > 0.0)) throw std::invalid_argument("analysis window must be positive");
    if (!(energy_threshold_k > 0.0)) throw std::invalid_argument("threshold k must be positive");
    if (!(min_duration_ms < max_duration_ms)) throw std::invalid_argument("min duration must be below max duration");
    if (!(hysteresis_ratio > 0.0 && hysteresis_ratio <= 1.0)) {
      throw std::invalid_argument("hysteresis ratio must be in (0, 1]");
    }
  }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// Prefix sums of x^2, so any window's mean square is O(1).
class SquarePrefix {
 public:
  explicit SquarePrefix(std::span<const double> x) : sums_(x.size() + 1, 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) sums_[i + 1] = sums_[i] + x[i] * x[i];
  }
  double mean_square(std::size_t begin, std::size_t end) const {
    if (end <= begin) return 0.0;
    return (sums_[end] - sums_[begin]) / static_cast<double>(end - begin);
  }
  std::size_t size() const { return sums_.size() - 1; }

 private:
  std::vector<double> sums_;
};

// Centered moving mean square over `radius` samples on each side.
inline std::vector<double> smoothed_energy(const SquarePrefix& sq, std::size_t begin, std::size_t end, std::size_t radius) {
  std::vector<double> e(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    std::size_t lo = i >= begin + radius ? i - radius : begin;
    std::size_t hi = std::min(end, i + radius + 1);
    e[i - begin] = sq.mean_square(lo, hi);
  }
  return e;
}

struct WindowRun {
  std::size_t first;  // first window index
  std::size_t last;   // last window index, inclusive
};

}  // namespace detail

/// Short-time energy (mean square) over `window` samples with hop window/2.
inline std::vector<double> energy_track(std::span<const double> samples, std::size_t window) {
  const std::size_t hop = std::max<std::size_t>(1, window / 2);
  const std::size_t count = frame_count(samples.size(), window, hop);
  detail::SquarePrefix sq(samples);
  std::vector<double> track(count);
  for (std::size_t j = 0; j < count; ++j) track[j] = sq.mean_square(j * hop, j * hop + window);
  return track;
}

/// Energy-gated cough detector.
///
/// Onset fires when the 50 ms short-time energy exceeds median + k*MAD of the
/// clip's energy track; the event continues until the excess over the median
/// falls to hysteresis_ratio of the onset margin. Over-long events are split
/// at their deepest interior valley and tagged as peal candidates; events
/// shorter than min_duration_ms are dropped.
inline std::vector<CoughSegment> detect_coughs(const AudioClip& clip, const DetectorConfig& config = {}) {
  config.validate();
  const int fs = clip.sample_rate_hz;
  const std::size_t window = FrameSpec::ms_to_samples(config.analysis_window_ms, fs);
  const std::size_t hop = std::max<std::size_t>(1, window / 2);
  std::vector<CoughSegment> out;
  if (window == 0 || clip.samples.size() < window) return out;

  const std::vector<double> gated =
      config.highpass_hz > 0.0 ? highpass(clip.samples, fs, config.highpass_hz) : clip.samples;
  const auto track = energy_track(gated, window);
  const double med = detail::median_of(track);
  std::vector<double> dev(track.size());
  for (std::size_t j = 0; j < track.size(); ++j) dev[j] = std::abs(track[j] - med);
  const double mad = detail::median_of(dev);
  // The -40 dB floor only matters for near-silent backgrounds where MAD is 0.
  const double loudest = track.empty() ? 0.0 : *std::max_element(track.begin(), track.end());
  const double margin = std::max(config.energy_threshold_k * mad, 1e-4 * loudest);
  const double on_threshold = med + margin;
  const double off_threshold = med + config.hysteresis_ratio * margin;

  std::vector<detail::WindowRun> runs;
  for (std::size_t j = 0; j < track.size(); ++j) {
    if (!(track[j] > on_threshold)) continue;
    std::size_t last = j;
    while (last + 1 < track.size() && track[last + 1] > off_threshold) ++last;
    runs.push_back({j, last});
    j = last;
  }

  // Split over-long runs at the deepest interior valley of the energy track.
  const auto run_ms = [&](const detail::WindowRun& r) {
    return 1000.0 * static_cast<double>((r.last - r.first) * hop + window) / fs;
  };
  std::vector<std::pair<detail::WindowRun, bool>> pieces;
  std::vector<std::pair<detail::WindowRun, bool>> stack;
  for (auto it = runs.rbegin(); it != runs.rend(); ++it) stack.emplace_back(*it, false);
  while (!stack.empty()) {
    auto [r, split] = stack.back();
    stack.pop_back();
    if (run_ms(r) <= config.max_duration_ms || r.last - r.first < 2) {
      pieces.emplace_back(r, split);
      continue;
    }
    std::size_t valley = r.first + 1;
    for (std::size_t j = r.first + 1; j < r.last; ++j) {
      if (track[j] < track[valley]) valley = j;
    }
    // Right half first so the left half is processed next (keeps time order).
    stack.push_back({{valley + 1, r.last}, true});
    stack.push_back({{r.first, valley - 1}, true});
  }

  const detail::SquarePrefix sq(gated);
  const std::size_t fine = std::max<std::size_t>(1, FrameSpec::ms_to_samples(5.0, fs));
  for (const auto& [r, split] : pieces) {
    std::size_t coarse_start = r.first * hop;
    std::size_t end = std::min(clip.samples.size(), r.last * hop + window / 2);
    if (r.last + 1 >= track.size()) end = std::min(clip.samples.size(), r.last * hop + window);
    if (end <= coarse_start) continue;

    // Refine the onset inside the first active window with a 5 ms power
    // track; the gate is relative to the event's own peak.
    double peak_fine = 0.0;
    for (std::size_t i = coarse_start; i + fine <= end; i += fine / 2 + 1) {
      peak_fine = std::max(peak_fine, sq.mean_square(i, i + fine));
    }
    const double gate = std::max(on_threshold, 0.1 * peak_fine);
    std::size_t start = coarse_start;
    const std::size_t search_end = std::min(end, coarse_start + window);
    for (std::size_t i = coarse_start; i + fine <= search_end; ++i) {
      if (sq.mean_square(i, i + fine) > gate) {
        start = i + fine / 2;
        break;
      }
    }
    if (end <= start) continue;

    CoughSegment seg;
    seg.start_sample = start;
    seg.end_sample = end;
    seg.sample_rate_hz = fs;
    seg.split_from_longer = split;
    seg.pattern = split ? CoughPattern::peal : CoughPattern::two_phase;
    for (std::size_t i = start; i < end; ++i) seg.peak_amplitude = std::max(seg.peak_amplitude, std::abs(clip.samples[i]));
    if (seg.duration_ms() < config.min_duration_ms) continue;
    out.push_back(std::move(seg));
  }

  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start_sample < b.start_sample; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].start_sample < out[i - 1].end_sample) out[i - 1].end_sample = out[i].start_sample;
  }
  return out;
}

struct PhaseConfig {
  double smoothing_ms = 10.0;
  double explosive_drop = 0.5;     // phase 1 ends below this fraction of peak
  double min_voiced_ms = 40.0;
  double voiced_max_zcr = 0.1;
  double voiced_rebound = 0.2;     // rebound energy as a fraction of peak
};

/// Fills in the explosive / intermediate / voiced phases of a detected event.
inline CoughSegment segment_phases(const AudioClip& clip, CoughSegment segment, const PhaseConfig& cfg = {}) {
  if (segment.start_sample >= segment.end_sample || segment.end_sample > clip.samples.size()) {
    throw std::invalid_argument("segment lies outside the clip");
  }
  const int fs = clip.sample_rate_hz;
  const std::size_t begin = segment.start_sample;
  const std::size_t end = segment.end_sample;
  const detail::SquarePrefix sq(clip.samples);
  const std::size_t radius = std::max<std::size_t>(1, FrameSpec::ms_to_samples(cfg.smoothing_ms, fs) / 2);
  const auto energy = detail::smoothed_energy(sq, begin, end, radius);
  const std::size_t n = energy.size();

  const std::size_t peak_at = static_cast<std::size_t>(std::max_element(energy.begin(), energy.end()) - energy.begin());
  const double peak = energy[peak_at];

  std::size_t p1 = n;
  for (std::size_t i = peak_at; i < n; ++i) {
    if (energy[i] < cfg.explosive_drop * peak) {
      p1 = i;
      break;
    }
  }

  segment.phases.clear();
  segment.phases.push_back({PhaseId::explosive, begin, begin + p1});
  segment.pattern = segment.split_from_longer ? CoughPattern::peal : CoughPattern::two_phase;
  if (p1 >= n) return segment;

  const std::size_t min_voiced = FrameSpec::ms_to_samples(cfg.min_voiced_ms, fs);
  std::size_t voiced_at = n;
  if (n > p1 + min_voiced) {
    std::size_t valley = p1;
    for (std::size_t i = p1; i + min_voiced < n; ++i) {
      if (energy[i] < energy[valley]) valley = i;
    }
    double rebound = 0.0;
    for (std::size_t i = valley; i < n; ++i) rebound = std::max(rebound, energy[i]);
    if (rebound >= cfg.voiced_rebound * peak && rebound >= 2.0 * energy[valley]) {
      std::size_t q = valley;
      while (q < n && energy[q] < 0.5 * rebound) ++q;
      if (q > p1 && q < n && n - q >= min_voiced) {
        // Judge voicing on the loud part of the rebound only: low-level
        // background after the cough would otherwise dominate the ZCR.
        std::size_t loud_end = n;
        while (loud_end > q + 1 && energy[loud_end - 1] < 0.1 * rebound) --loud_end;
        std::span<const double> tail(clip.samples.data() + begin + q, loud_end - q);
        if (zcr(tail) < cfg.voiced_max_zcr) voiced_at = q;
      }
    }
  }

  segment.phases.push_back({PhaseId::intermediate, begin + p1, begin + voiced_at});
  if (voiced_at < n) {
    segment.phases.push_back({PhaseId::voiced, begin + voiced_at, end});
    segment.pattern = CoughPattern::three_phase;
  }
  return segment;
}

enum class WetDryLabel { wet, dry };

inline std::string_view to_string(WetDryLabel l) { return l == WetDryLabel::wet ? "wet" : "dry"; }

struct WetDryResult {
  WetDryLabel label = WetDryLabel::dry;
  double ratio = 0.0;       // E[0,750) / (E[1500,2250) + eps)
  double confidence = 0.0;  // in [0, 1]
  double low_energy = 0.0;
  double high_energy = 0.0;
};

inline constexpr double kWetBandLoHz = 0.0;
inline constexpr double kWetBandHiHz = 750.0;
inline constexpr double kDryBandLoHz = 1500.0;
inline constexpr double kDryBandHiHz = 2250.0;
inline constexpr double kWetDryEpsilon = 1e-12;

/// Mean periodogram (25 ms Hann frames, 10 ms hop) over the intermediate
/// phase. A phase shorter than one frame is analysed as a single frame.
inline PowerSpectrum phase2_spectrum(const AudioClip& clip, const CoughSegment& segment) {
  const PhaseBoundary* p2 = segment.phase(PhaseId::intermediate);
  if (p2 == nullptr || p2->end <= p2->start) throw NotApplicableError("segment has no intermediate phase");
  if (p2->end > clip.samples.size()) throw std::invalid_argument("segment lies outside the clip");
  const FrameSpec spec;
  const int fs = clip.sample_rate_hz;
  const std::size_t nfft = spec.resolved_nfft(fs);
  std::span<const double> region(clip.samples.data() + p2->start, p2->end - p2->start);
  auto frames = frame_signal(region, spec.frame_length(fs), spec.hop_length(fs), Window::hann);
  if (frames.empty()) {
    const std::size_t len = std::min(region.size(), nfft);
    auto win = make_window(Window::hann, len);
    std::vector<double> f(len);
    for (std::size_t i = 0; i < len; ++i) f[i] = region[i] * win[i];
    frames.push_back(std::move(f));
  }
  PowerSpectrum mean;
  for (const auto& f : frames) {
    auto ps = periodogram(f, nfft, fs);
    if (mean.bins.empty()) {
      mean = std::move(ps);
    } else {
      for (std::size_t k = 0; k < ps.bins.size(); ++k) mean.bins[k] += ps.bins[k];
    }
  }
  for (double& b : mean.bins) b /= static_cast<double>(frames.size());
  return mean;
}

inline WetDryResult classify_wet_dry(const AudioClip& clip, const CoughSegment& segment, double threshold = 1.0) {
  if (!(threshold > 0.0)) throw std::invalid_argument("wet/dry threshold must be positive");
  const auto ps = phase2_spectrum(clip, segment);
  WetDryResult r;
  r.low_energy = band_energy(ps, kWetBandLoHz, kWetBandHiHz);
  r.high_energy = band_energy(ps, kDryBandLoHz, kDryBandHiHz);
  r.ratio = r.low_energy / (r.high_energy + kWetDryEpsilon);
  r.label = r.ratio > threshold ? WetDryLabel::wet : WetDryLabel::dry;
  if (r.ratio <= 0.0) {
    r.confidence = 1.0;
  } else {
    const double d = std::abs(std::log(r.ratio / threshold));
    r.confidence = d / (1.0 + d);
  }
  return r;
}

inline nlohmann::json segment_to_json(const CoughSegment& seg, const std::optional<WetDryResult>& wet_dry = std::nullopt) {
  const double fs = seg.sample_rate_hz;
  nlohmann::json phases = nlohmann::json::array();
  for (const auto& p : seg.phases) {
    phases.push_back({{"name", to_string(p.id)},
                      {"start_ms", 1000.0 * static_cast<double>(p.start) / fs},
                      {"end_ms", 1000.0 * static_cast<double>(p.end) / fs}});
  }
  nlohmann::json j = {{"start_ms", seg.start_ms()},
                      {"end_ms", seg.end_ms()},
                      {"pattern", to_string(seg.pattern)},
                      {"phases", phases}};
  if (wet_dry) {
    j["wet_dry"] = {{"label", to_string(wet_dry->label)}, {"ratio", wet_dry->ratio}};
  } else {
    j["wet_dry"] = nullptr;
  }
  return j;
}

}  // namespace coughpoc
