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
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/detect.hpp"
#include "coughpoc/dsp.hpp"
#include "coughpoc/features.hpp"
#include "coughpoc/model_io.hpp"
#include "coughpoc/nn.hpp"

// Glue shared by the CLI and the service: clip -> coughs -> features ->
// memberships.

namespace coughpoc {

struct CoughAnalysis {
  CoughSegment segment;
  std::optional<WetDryResult> wet_dry;
  FeatureVector features;
};

struct ClipAnalysis {
  AudioClip clip;  // resampled to the canonical rate
  std::vector<CoughAnalysis> coughs;
};

struct AnalysisOptions {
  DetectorConfig detector;
  double wet_dry_threshold = 1.0;
};

inline ClipAnalysis analyze_clip(const AudioClip& input, const AnalysisOptions& opts = {}) {
  validate_clip(input);
  ClipAnalysis out;
  out.clip = resample(input, kCanonicalRateHz);
  for (auto seg : detect_coughs(out.clip, opts.detector)) {
    seg = segment_phases(out.clip, std::move(seg));
    CoughAnalysis a;
    if (seg.phase(PhaseId::intermediate) != nullptr) a.wet_dry = classify_wet_dry(out.clip, seg, opts.wet_dry_threshold);
    a.features = extract_features(out.clip, seg);
    a.segment = std::move(seg);
    out.coughs.push_back(std::move(a));
  }
  return out;
}

/// Fixed-size CNN input: non-overlapping 25 ms log-mel frames of the segment,
/// standardized to zero mean and unit variance over the segment (so the
/// network sees spectral shape, not recording level), then truncated or
/// zero-padded to `frames` rows.
inline Matrix cnn_input(const AudioClip& clip, const CoughSegment& seg, std::size_t frames = 64, int bands = 26) {
  AudioClip region;
  region.sample_rate_hz = clip.sample_rate_hz;
  region.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(seg.start_sample),
                        clip.samples.begin() + static_cast<std::ptrdiff_t>(seg.end_sample));
  const FrameSpec spec{25.0, 25.0, Window::hann, 0};
  const Matrix lm = log_mel_spectrogram(region, spec, bands);
  Matrix out(frames, static_cast<std::size_t>(bands), 0.0);
  const std::size_t used = std::min(frames, lm.rows());
  if (used == 0) return out;
  double sum = 0.0, sq = 0.0;
  for (std::size_t r = 0; r < used; ++r) {
    for (double v : lm.row(r)) sum += v;
  }
  const double n = static_cast<double>(used * lm.cols());
  const double mean = sum / n;
  for (std::size_t r = 0; r < used; ++r) {
    for (double v : lm.row(r)) sq += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(sq / n);
  const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
  for (std::size_t r = 0; r < used; ++r) {
    for (std::size_t c = 0; c < lm.cols(); ++c) out(r, c) = (lm(r, c) - mean) * scale;
  }
  return out;
}

/// Per-cough training rows for a manifest. Clips without a detected cough
/// contribute nothing and are counted in `skipped_clips`.
struct FeatureDataset {
  Matrix rows;  // fused vectors
  std::vector<Matrix> spectrograms;
  std::vector<int> labels;
  std::vector<std::string> clip_ids;
  std::size_t skipped_clips = 0;
};

inline FeatureDataset build_dataset(const DatasetManifest& manifest, bool with_spectrograms = false,
                                    std::size_t cnn_frames = 64) {
  struct Partial {
    std::vector<FusedVector> rows;
    std::vector<Matrix> specs;
    bool skipped = false;
  };
  const std::size_t n = manifest.entries.size();
  std::vector<Partial> parts(n);
  auto work = [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    const auto a = analyze_clip(load_wav(manifest.wav_path(e).string()));
    parts[i].skipped = a.coughs.empty();
    for (const auto& c : a.coughs) {
      parts[i].rows.push_back(fuse(c.features, e.sensor));
      if (with_spectrograms) parts[i].specs.push_back(cnn_input(a.clip, c.segment, cnn_frames));
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
  std::vector<std::future<void>> futures;
  for (std::size_t w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) work(i);
    }));
  }
  for (auto& f : futures) f.get();

  FeatureDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    if (parts[i].skipped) ++ds.skipped_clips;
    const int label = manifest.class_index(manifest.entries[i].label);
    for (std::size_t k = 0; k < parts[i].rows.size(); ++k) {
      ds.rows.append_row(parts[i].rows[k]);
      ds.labels.push_back(label);
      ds.clip_ids.push_back(manifest.entries[i].id);
      if (with_spectrograms) ds.spectrograms.push_back(std::move(parts[i].specs[k]));
    }
  }
  if (ds.rows.cols() == 0) ds.rows = Matrix(0, kFusedDim);
  return ds;
}

/// Clip-level memberships: the mean of per-cough memberships.
inline std::optional<MembershipVector> predict_clip(const Classifier& model, const ClipAnalysis& analysis,
                                                    const SensorRecord& sensor) {
  if (analysis.coughs.empty()) return std::nullopt;
  MembershipVector mean(model.classes.size(), 0.0);
  for (const auto& c : analysis.coughs) {
    const auto m = model.is_cnn() ? model.predict_logmel(cnn_input(analysis.clip, c.segment, model.cnn().arch.input_frames,
                                                                   static_cast<int>(model.cnn().arch.input_bands)))
                                  : model.predict_fused(fuse(c.features, sensor));
    if (m.size() != mean.size()) throw ShapeError("model output does not match its class list");
    for (std::size_t k = 0; k < m.size(); ++k) mean[k] += m[k];
  }
  double total = 0.0;
  for (auto& v : mean) total += (v /= static_cast<double>(analysis.coughs.size()));
  for (auto& v : mean) v /= total;
  return mean;
}

inline nlohmann::json features_to_json(const FeatureVector& fv) {
  nlohmann::json j = nlohmann::json::object();
  const auto values = fv.to_array();
  const auto& names = feature_names();
  for (std::size_t i = 0; i < values.size(); ++i) j[names[i]] = values[i];
  return j;
}

inline nlohmann::json analysis_to_json(const ClipAnalysis& a, bool with_features = true) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& c : a.coughs) {
    auto j = segment_to_json(c.segment, c.wet_dry);
    j["peak_amplitude"] = c.segment.peak_amplitude;
    j["duration_ms"] = c.segment.duration_ms();
    if (c.wet_dry) j["wet_dry"]["confidence"] = c.wet_dry->confidence;
    if (with_features) j["features"] = features_to_json(c.features);
    segs.push_back(std::move(j));
  }
  return {{"sample_rate_hz", a.clip.sample_rate_hz},
          {"duration_s", a.clip.duration_s()},
          {"clipped", a.clip.clipped},
          {"segments", segs}};
}

}  // namespace coughpoc
