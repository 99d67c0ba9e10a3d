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
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coughpoc/audio.hpp"
#include "coughpoc/detect.hpp"
#include "coughpoc/dsp.hpp"
#include "coughpoc/error.hpp"
#include "coughpoc/matrix.hpp"

namespace coughpoc {

inline constexpr std::size_t kMfccKept = 12;
inline constexpr std::size_t kFeatureDim = 36;
inline constexpr std::size_t kSensorDim = 3;
inline constexpr std::size_t kFusedDim = kFeatureDim + 2 * kSensorDim;

/// Per-cough acoustic statistics. `to_array()` fixes the column order used by
/// every matrix, CSV and model in the project.
struct FeatureVector {
  std::array<double, kMfccKept> mfcc_mean{};
  std::array<double, kMfccKept> mfcc_std{};
  double zcr_mean = 0.0;
  double zcr_std = 0.0;
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  double phase2_low_energy = 0.0;
  double phase2_high_energy = 0.0;
  double wet_dry_ratio = 0.0;
  double duration_ms = 0.0;
  double peak_amplitude = 0.0;
  std::array<double, 3> pattern_onehot{};  // three_phase, two_phase, peal

  std::array<double, kFeatureDim> to_array() const {
    std::array<double, kFeatureDim> out{};
    auto it = std::copy(mfcc_mean.begin(), mfcc_mean.end(), out.begin());
    it = std::copy(mfcc_std.begin(), mfcc_std.end(), it);
    for (double v : {zcr_mean, zcr_std, entropy_mean, entropy_std, phase2_low_energy, phase2_high_energy,
                     wet_dry_ratio, duration_ms, peak_amplitude}) {
      *it++ = v;
    }
    std::copy(pattern_onehot.begin(), pattern_onehot.end(), it);
    return out;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (std::size_t i = 0; i < kMfccKept; ++i) n.push_back("mfcc_mean_" + std::to_string(i + 2));
    for (std::size_t i = 0; i < kMfccKept; ++i) n.push_back("mfcc_std_" + std::to_string(i + 2));
    for (const char* s : {"zcr_mean", "zcr_std", "entropy_mean", "entropy_std", "phase2_low_energy",
                          "phase2_high_energy", "wet_dry_ratio", "duration_ms", "peak_amplitude",
                          "pattern_three_phase", "pattern_two_phase", "pattern_peal"}) {
      n.emplace_back(s);
    }
    return n;
  }();
  return names;
}

inline const std::vector<std::string>& fused_names() {
  static const std::vector<std::string> names = [] {
    auto n = feature_names();
    for (const char* s : {"temp_c", "airflow_peak_lps", "airflow_volume_l", "has_temp", "has_airflow_peak",
                          "has_airflow_volume"}) {
      n.emplace_back(s);
    }
    return n;
  }();
  return names;
}

namespace detail {

inline std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

}  // namespace detail

/// Aggregates MFCC, ZCR and spectral-entropy frame statistics over the
/// segment and band energies over its intermediate phase.
inline FeatureVector extract_features(const AudioClip& clip, const CoughSegment& segment) {
  if (segment.phases.empty()) throw std::invalid_argument("segment has no phases; run segment_phases first");
  if (segment.start_sample >= segment.end_sample || segment.end_sample > clip.samples.size()) {
    throw std::invalid_argument("segment lies outside the clip");
  }
  AudioClip region;
  region.sample_rate_hz = clip.sample_rate_hz;
  region.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(segment.start_sample),
                        clip.samples.begin() + static_cast<std::ptrdiff_t>(segment.end_sample));

  const MfccConfig cfg;
  const int fs = clip.sample_rate_hz;
  const std::size_t frame_len = cfg.frame.frame_length(fs);
  const std::size_t hop = cfg.frame.hop_length(fs);
  if (region.samples.size() < frame_len) throw NotApplicableError("segment is too short for one analysis frame");

  FeatureVector fv;
  const Matrix coeffs = mfcc(region, cfg);
  std::vector<double> column(coeffs.rows());
  for (std::size_t c = 0; c < kMfccKept; ++c) {
    for (std::size_t r = 0; r < coeffs.rows(); ++r) column[r] = coeffs(r, c);
    std::tie(fv.mfcc_mean[c], fv.mfcc_std[c]) = detail::mean_std(column);
  }

  const auto raw = frame_signal(region.samples, frame_len, hop, Window::rectangular);
  const auto windowed = frame_signal(region.samples, frame_len, hop, Window::hann);
  const std::size_t nfft = cfg.frame.resolved_nfft(fs);
  std::vector<double> zcrs, entropies;
  for (std::size_t f = 0; f < raw.size(); ++f) {
    zcrs.push_back(zcr(raw[f]));
    auto ps = periodogram(windowed[f], nfft, fs);
    if (ps.total() > 0.0) entropies.push_back(shannon_entropy(ps));
  }
  std::tie(fv.zcr_mean, fv.zcr_std) = detail::mean_std(zcrs);
  std::tie(fv.entropy_mean, fv.entropy_std) = detail::mean_std(entropies);

  if (segment.phase(PhaseId::intermediate) != nullptr) {
    const auto wd = classify_wet_dry(clip, segment);
    fv.phase2_low_energy = wd.low_energy;
    fv.phase2_high_energy = wd.high_energy;
    fv.wet_dry_ratio = wd.ratio;
  }
  fv.duration_ms = segment.duration_ms();
  fv.peak_amplitude = segment.peak_amplitude;
  fv.pattern_onehot[static_cast<std::size_t>(segment.pattern)] = 1.0;
  return fv;
}

/// Optional point-of-care sensor readings attached to a recording.
struct SensorRecord {
  std::optional<double> body_temp_c;
  std::optional<double> airflow_peak_lps;
  std::optional<double> airflow_volume_l;

  void validate() const {
    if (body_temp_c && !(*body_temp_c >= 30.0 && *body_temp_c <= 45.0)) {
      throw ValidationError("body temperature must be within 30..45 C");
    }
    if (airflow_peak_lps && !(*airflow_peak_lps >= 0.0)) throw ValidationError("airflow peak must be non-negative");
    if (airflow_volume_l && !(*airflow_volume_l >= 0.0)) throw ValidationError("airflow volume must be non-negative");
  }

  friend bool operator==(const SensorRecord&, const SensorRecord&) = default;
};

inline nlohmann::json sensor_to_json(const SensorRecord& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"temp_c", opt(s.body_temp_c)},
          {"airflow_peak_lps", opt(s.airflow_peak_lps)},
          {"airflow_volume_l", opt(s.airflow_volume_l)}};
}

/// Reads the optional sensor keys from a JSON object; absent keys and nulls
/// both mean "not measured".
inline SensorRecord sensor_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("sensor payload must be a JSON object");
  auto opt = [&](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_number()) throw ValidationError(std::string(key) + " must be a number or null");
    return it->get<double>();
  };
  SensorRecord s{opt("temp_c"), opt("airflow_peak_lps"), opt("airflow_volume_l")};
  s.validate();
  return s;
}

using FusedVector = std::array<double, kFusedDim>;

/// Appends sensor values (missing ones imputed as 0) and a presence mask.
inline FusedVector fuse(const FeatureVector& fv, const SensorRecord& sensor) {
  sensor.validate();
  FusedVector out{};
  const auto base = fv.to_array();
  std::copy(base.begin(), base.end(), out.begin());
  const std::array<const std::optional<double>*, kSensorDim> slots{&sensor.body_temp_c, &sensor.airflow_peak_lps,
                                                                   &sensor.airflow_volume_l};
  for (std::size_t i = 0; i < kSensorDim; ++i) {
    out[kFeatureDim + i] = slots[i]->value_or(0.0);
    out[kFeatureDim + kSensorDim + i] = slots[i]->has_value() ? 1.0 : 0.0;
  }
  return out;
}

/// Per-feature z-score using population standard deviation. Zero-variance
/// columns are stored as mean 0, std 1 and pass through unchanged.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const { return mean.size(); }

  std::vector<double> apply(std::span<const double> row) const {
    if (row.size() != mean.size()) throw ShapeError("row width does not match normalizer");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / std[j];
    return out;
  }

  Matrix apply(const Matrix& rows) const {
    Matrix out(rows.rows(), rows.cols());
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      auto v = apply(rows.row(r));
      std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
  }

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

inline Normalizer fit_normalizer(const Matrix& rows) {
  if (rows.rows() < 2) throw InsufficientDataError("normalizer needs at least two rows");
  Normalizer n;
  n.mean.assign(rows.cols(), 0.0);
  n.std.assign(rows.cols(), 1.0);
  std::vector<double> col(rows.rows());
  for (std::size_t c = 0; c < rows.cols(); ++c) {
    for (std::size_t r = 0; r < rows.rows(); ++r) col[r] = rows(r, c);
    auto [mu, sd] = detail::mean_std(col);
    // Guard against columns that are constant up to rounding noise.
    if (sd > 1e-12 * std::max(1.0, std::abs(mu))) {
      n.mean[c] = mu;
      n.std[c] = sd;
    }
  }
  return n;
}

/// Between-class over within-class scatter per feature:
/// sum_c n_c (mu_cj - mu_j)^2 / sum_c n_c var_cj, with the denominator floored
/// at 1e-12.
inline std::vector<double> fisher_score(const Matrix& rows, std::span<const int> labels) {
  if (rows.rows() != labels.size()) throw std::invalid_argument("label count does not match row count");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r = 0; r < labels.size(); ++r) by_class[labels[r]].push_back(r);
  if (by_class.size() < 2) throw std::invalid_argument("Fisher score needs at least two classes");
  for (const auto& [c, idx] : by_class) {
    if (idx.size() < 2) throw std::invalid_argument("each class needs at least two rows");
  }

  std::vector<double> scores(rows.cols(), 0.0);
  for (std::size_t j = 0; j < rows.cols(); ++j) {
    double total = 0.0;
    for (std::size_t r = 0; r < rows.rows(); ++r) total += rows(r, j);
    const double mu = total / static_cast<double>(rows.rows());
    double between = 0.0, within = 0.0;
    for (const auto& [c, idx] : by_class) {
      const double n = static_cast<double>(idx.size());
      double s = 0.0;
      for (auto r : idx) s += rows(r, j);
      const double mu_c = s / n;
      double var = 0.0;
      for (auto r : idx) var += (rows(r, j) - mu_c) * (rows(r, j) - mu_c);
      var /= n;
      between += n * (mu_c - mu) * (mu_c - mu);
      within += n * var;
    }
    scores[j] = between / std::max(within, 1e-12);
  }
  return scores;
}

/// Indices (0-based, ascending) of the k highest scores; ties go to the lower index.
inline std::vector<std::size_t> select_top_k(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) throw std::invalid_argument("k must be within 1..number of features");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

struct ManifestEntry {
  std::string id;
  std::string wav;  // relative to the manifest's directory unless absolute
  std::string label;
  SensorRecord sensor;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Labeled recordings. `classes` is the declared class list; every entry's
/// label must belong to it.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> classes;
  std::filesystem::path base_dir;

  int class_index(const std::string& label) const {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw ValidationError("label '" + label + "' is not a declared class");
    return static_cast<int>(it - classes.begin());
  }

  std::filesystem::path wav_path(const ManifestEntry& e) const {
    std::filesystem::path p(e.wav);
    return p.is_absolute() ? p : base_dir / p;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
      if (!ids.insert(e.id).second) throw ValidationError("duplicate manifest id '" + e.id + "'");
      class_index(e.label);
    }
  }
};

inline const std::vector<std::string>& default_classes() {
  static const std::vector<std::string> c{"covid_like", "flu_like", "healthy"};
  return c;
}

inline nlohmann::json manifest_entry_to_json(const ManifestEntry& e) {
  auto j = sensor_to_json(e.sensor);
  j["id"] = e.id;
  j["wav"] = e.wav;
  j["label"] = e.label;
  return j;
}

/// Parses a JSON Lines manifest. Errors name the offending line number.
/// Classes are the default list when every label belongs to it, otherwise
/// the sorted set of labels present.
inline DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir = {}) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "manifest line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(where + "invalid JSON (" + e.what() + ")");
    }
    try {
      if (!j.is_object()) throw ValidationError("expected an object");
      for (const char* key : {"id", "label"}) {
        if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
          throw ValidationError(std::string("missing string field '") + key + "'");
        }
      }
      if (!j.contains("wav") || !j["wav"].is_string()) throw ValidationError("missing string field 'wav'");
      ManifestEntry e{j["id"].get<std::string>(), j["wav"].get<std::string>(), j["label"].get<std::string>(),
                      sensor_from_json(j)};
      m.entries.push_back(std::move(e));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  std::set<std::string> labels;
  for (const auto& e : m.entries) labels.insert(e.label);
  const auto& defaults = default_classes();
  const bool all_default = std::all_of(labels.begin(), labels.end(), [&](const std::string& l) {
    return std::find(defaults.begin(), defaults.end(), l) != defaults.end();
  });
  m.classes = all_default && !labels.empty() ? defaults : std::vector<std::string>(labels.begin(), labels.end());
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path());
}

inline void write_manifest(std::ostream& out, const DatasetManifest& m) {
  for (const auto& e : m.entries) out << manifest_entry_to_json(e).dump() << '\n';
}

/// Stratified, seeded split. Each class contributes round(n_c * fraction)
/// entries to train, clamped so both sides keep at least one.
inline std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest, double train_fraction,
                                                                 std::uint64_t seed) {
  if (!(train_fraction >= 0.5 && train_fraction < 1.0)) {
    throw std::invalid_argument("train fraction must be within [0.5, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_class[manifest.entries[i].label].push_back(i);
  for (const auto& [label, idx] : by_class) {
    if (idx.size() < 2) throw InsufficientDataError("class '" + label + "' has fewer than two examples");
  }

  std::mt19937_64 rng(seed);
  std::vector<bool> in_train(manifest.entries.size(), false);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * train_fraction));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t i = 0; i < n_train; ++i) in_train[idx[i]] = true;
  }

  DatasetManifest train{{}, manifest.classes, manifest.base_dir};
  DatasetManifest test{{}, manifest.classes, manifest.base_dir};
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    (in_train[i] ? train : test).entries.push_back(manifest.entries[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace coughpoc
