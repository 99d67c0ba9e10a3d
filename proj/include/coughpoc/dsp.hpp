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
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "coughpoc/audio.hpp"
#include "coughpoc/error.hpp"
#include "coughpoc/fft.hpp"
#include "coughpoc/matrix.hpp"

namespace coughpoc {

// Filterbank energies are floored here before the log.
inline constexpr double kLogFloor = 1e-10;

enum class Window { rectangular, hann };

/// Framing parameters. Lengths are in milliseconds and floored to whole
/// samples at a given rate; `nfft == 0` selects the next power of two at or
/// above the frame length.
struct FrameSpec {
  double frame_len_ms = 25.0;
  double hop_len_ms = 10.0;
  Window window = Window::hann;
  std::size_t nfft = 0;

  void validate() const {
    if (!(frame_len_ms >= 20.0 && frame_len_ms <= 40.0)) {
      throw std::invalid_argument("frame length must be within 20..40 ms");
    }
    if (!(hop_len_ms > 0.0)) throw std::invalid_argument("hop length must be positive");
    if (nfft != 0 && !is_power_of_two(nfft)) {
      throw std::invalid_argument("nfft must be a power of two");
    }
  }

  static std::size_t ms_to_samples(double ms, int fs) {
    // The epsilon absorbs representation error such as 0.02 * 22050 = 440.99999...
    return static_cast<std::size_t>(std::floor(ms / 1000.0 * fs + 1e-9));
  }
  std::size_t frame_length(int fs) const { return ms_to_samples(frame_len_ms, fs); }
  std::size_t hop_length(int fs) const { return std::max<std::size_t>(1, ms_to_samples(hop_len_ms, fs)); }
  std::size_t resolved_nfft(int fs) const {
    const std::size_t len = frame_length(fs);
    std::size_t n = nfft == 0 ? next_power_of_two(len) : nfft;
    if (n < len) throw std::invalid_argument("nfft is shorter than the frame");
    return n;
  }
};

/// Periodic Hann or rectangular window of length n.
inline std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::hann) {
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return out;
}

inline std::size_t frame_count(std::size_t n_samples, std::size_t frame_len, std::size_t hop) {
  if (frame_len == 0 || hop == 0 || n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

/// Cuts `samples` into windowed frames; the trailing partial frame is dropped.
inline std::vector<std::vector<double>> frame_signal(std::span<const double> samples, std::size_t frame_len,
                                                     std::size_t hop, Window window) {
  const std::size_t count = frame_count(samples.size(), frame_len, hop);
  const auto win = make_window(window, frame_len);
  std::vector<std::vector<double>> frames(count, std::vector<double>(frame_len));
  for (std::size_t f = 0; f < count; ++f) {
    const double* src = samples.data() + f * hop;
    for (std::size_t i = 0; i < frame_len; ++i) frames[f][i] = src[i] * win[i];
  }
  return frames;
}

inline std::vector<std::vector<double>> frame_signal(const AudioClip& clip, const FrameSpec& spec) {
  spec.validate();
  return frame_signal(clip.samples, spec.frame_length(clip.sample_rate_hz), spec.hop_length(clip.sample_rate_hz),
                      spec.window);
}

/// One-sided power spectrum, nfft/2 + 1 bins.
struct PowerSpectrum {
  std::vector<double> bins;
  double bin_width_hz = 0.0;

  double frequency(std::size_t k) const { return static_cast<double>(k) * bin_width_hz; }
  double nyquist_hz() const { return bins.empty() ? 0.0 : frequency(bins.size() - 1); }
  double total() const { return std::accumulate(bins.begin(), bins.end(), 0.0); }
};

/// Zero-pads `frame` to nfft and returns |X_k|^2 / nfft for k = 0..nfft/2.
inline PowerSpectrum periodogram(std::span<const double> frame, std::size_t nfft, int sample_rate_hz = kCanonicalRateHz) {
  if (!is_power_of_two(nfft)) throw std::invalid_argument("nfft must be a power of two");
  if (frame.size() > nfft) throw std::invalid_argument("nfft is shorter than the frame");
  std::vector<std::complex<double>> buf(nfft);
  std::copy(frame.begin(), frame.end(), buf.begin());
  fft_inplace(buf);
  PowerSpectrum ps;
  ps.bin_width_hz = static_cast<double>(sample_rate_hz) / static_cast<double>(nfft);
  ps.bins.resize(nfft / 2 + 1);
  for (std::size_t k = 0; k < ps.bins.size(); ++k) ps.bins[k] = std::norm(buf[k]) / static_cast<double>(nfft);
  return ps;
}

inline double hz_to_mel(double hz) {
  if (!(hz >= 0.0)) throw std::invalid_argument("frequency must be non-negative");
  return 1125.0 * std::log1p(hz / 700.0);
}

inline double mel_to_hz(double mel) {
  if (!(mel >= 0.0)) throw std::invalid_argument("mel value must be non-negative");
  return 700.0 * std::expm1(mel / 1125.0);
}

/// Triangular filters with centres equally spaced on the mel axis.
///
/// `breakpoint_bins` holds the n_filters + 2 edges snapped to FFT bins;
/// filter i rises from edge i to edge i+1 and falls to edge i+2.
struct MelFilterBank {
  int n_filters = 0;
  std::size_t nfft = 0;
  int sample_rate_hz = 0;
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;
  std::vector<double> breakpoint_mels;
  std::vector<double> breakpoint_hz;
  std::vector<std::size_t> breakpoint_bins;
  Matrix weights;  // n_filters x (nfft/2 + 1)

  double center_hz(int i) const { return breakpoint_hz.at(static_cast<std::size_t>(i) + 1); }

  std::vector<double> apply(const PowerSpectrum& ps) const {
    if (ps.bins.size() != weights.cols()) throw std::invalid_argument("spectrum size does not match filterbank");
    std::vector<double> energies(weights.rows(), 0.0);
    for (std::size_t f = 0; f < weights.rows(); ++f) {
      auto w = weights.row(f);
      double acc = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * ps.bins[k];
      energies[f] = acc;
    }
    return energies;
  }
};

inline MelFilterBank build_mel_filterbank(int n_filters, std::size_t nfft, int fs, double f_min, double f_max) {
  if (n_filters < 2) throw std::invalid_argument("need at least two mel filters");
  if (!is_power_of_two(nfft)) throw std::invalid_argument("nfft must be a power of two");
  if (fs <= 0) throw std::invalid_argument("sample rate must be positive");
  if (f_min < 0.0 || !(f_min < f_max)) throw std::invalid_argument("mel band requires 0 <= f_min < f_max");
  if (f_max > fs / 2.0) throw std::invalid_argument("f_max exceeds the Nyquist frequency");

  MelFilterBank fb;
  fb.n_filters = n_filters;
  fb.nfft = nfft;
  fb.sample_rate_hz = fs;
  fb.f_min_hz = f_min;
  fb.f_max_hz = f_max;

  const std::size_t n_points = static_cast<std::size_t>(n_filters) + 2;
  const double mel_lo = hz_to_mel(f_min);
  const double mel_hi = hz_to_mel(f_max);
  const double spacing = (mel_hi - mel_lo) / (n_filters + 1);
  const std::size_t n_bins = nfft / 2 + 1;
  for (std::size_t i = 0; i < n_points; ++i) {
    double m = i + 1 == n_points ? mel_hi : mel_lo + spacing * static_cast<double>(i);
    double hz = i == 0 ? f_min : (i + 1 == n_points ? f_max : mel_to_hz(m));
    auto bin = static_cast<std::size_t>(std::floor((static_cast<double>(nfft) + 1.0) * hz / fs));
    fb.breakpoint_mels.push_back(m);
    fb.breakpoint_hz.push_back(hz);
    fb.breakpoint_bins.push_back(std::min(bin, n_bins - 1));
  }

  fb.weights = Matrix(static_cast<std::size_t>(n_filters), n_bins);
  for (int f = 0; f < n_filters; ++f) {
    const std::size_t lo = fb.breakpoint_bins[f];
    const std::size_t mid = fb.breakpoint_bins[f + 1];
    const std::size_t hi = fb.breakpoint_bins[f + 2];
    for (std::size_t k = lo; k < mid; ++k) {
      fb.weights(f, k) = static_cast<double>(k - lo) / static_cast<double>(mid - lo);
    }
    for (std::size_t k = mid + 1; k <= hi; ++k) {
      fb.weights(f, k) = static_cast<double>(hi - k) / static_cast<double>(hi - mid);
    }
    fb.weights(f, mid) = 1.0;
  }
  return fb;
}

/// Orthonormal DCT-II, computed by direct summation.
inline std::vector<double> dct2_orthonormal(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) / (2.0 * nn));
    }
    out[k] = acc * (k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn));
  }
  return out;
}

struct MfccConfig {
  FrameSpec frame;
  int n_filters = 26;
  int keep_lo = 2;  // 1-based, inclusive
  int keep_hi = 13;
  double f_min_hz = 0.0;
  double f_max_hz = 0.0;  // 0 selects fs / 2

  void validate() const {
    frame.validate();
    if (n_filters < 2) throw std::invalid_argument("need at least two mel filters");
    if (keep_lo < 1 || keep_lo > keep_hi || keep_hi > n_filters) {
      throw std::invalid_argument("MFCC keep range must satisfy 1 <= lo <= hi <= n_filters");
    }
  }
  std::size_t n_coefficients() const { return static_cast<std::size_t>(keep_hi - keep_lo + 1); }
};

inline MelFilterBank filterbank_for(const FrameSpec& spec, int n_filters, int fs, double f_min = 0.0, double f_max = 0.0) {
  return build_mel_filterbank(n_filters, spec.resolved_nfft(fs), fs, f_min, f_max > 0.0 ? f_max : fs / 2.0);
}

/// Log filterbank energies per frame (frames x filters). This is the shared
/// stage of MFCC and the log-mel spectrogram.
inline Matrix log_mel_frames(const AudioClip& clip, const FrameSpec& spec, const MelFilterBank& bank) {
  const auto frames = frame_signal(clip, spec);
  Matrix out(frames.size(), static_cast<std::size_t>(bank.n_filters));
  for (std::size_t f = 0; f < frames.size(); ++f) {
    auto energies = bank.apply(periodogram(frames[f], bank.nfft, clip.sample_rate_hz));
    for (std::size_t j = 0; j < energies.size(); ++j) out(f, j) = std::log(std::max(energies[j], kLogFloor));
  }
  return out;
}

inline Matrix log_mel_spectrogram(const AudioClip& clip, const FrameSpec& spec, int n_filters = 26) {
  spec.validate();
  return log_mel_frames(clip, spec, filterbank_for(spec, n_filters, clip.sample_rate_hz));
}

inline Matrix mfcc(const AudioClip& clip, const MfccConfig& config = {}) {
  config.validate();
  const auto bank = filterbank_for(config.frame, config.n_filters, clip.sample_rate_hz, config.f_min_hz, config.f_max_hz);
  const Matrix logmel = log_mel_frames(clip, config.frame, bank);
  Matrix out(logmel.rows(), config.n_coefficients());
  for (std::size_t f = 0; f < logmel.rows(); ++f) {
    auto c = dct2_orthonormal(logmel.row(f));
    for (std::size_t j = 0; j < out.cols(); ++j) out(f, j) = c[static_cast<std::size_t>(config.keep_lo - 1) + j];
  }
  return out;
}

/// Fraction of consecutive-sample sign changes; zero counts as positive.
inline double zcr(std::span<const double> frame) {
  if (frame.size() < 2) throw std::invalid_argument("zero-crossing rate needs at least two samples");
  std::size_t changes = 0;
  for (std::size_t i = 1; i < frame.size(); ++i) {
    if ((frame[i - 1] >= 0.0) != (frame[i] >= 0.0)) ++changes;
  }
  return static_cast<double>(changes) / static_cast<double>(frame.size() - 1);
}

/// Second-order Butterworth high-pass (bilinear transform, zero initial
/// state). Used to strip low-frequency rumble before energy gating.
inline std::vector<double> highpass(std::span<const double> x, int fs, double cutoff_hz) {
  if (!(cutoff_hz > 0.0 && cutoff_hz < fs / 2.0)) throw std::invalid_argument("cutoff must be within (0, fs/2)");
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double q = 1.0 / std::numbers::sqrt2;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double cw = std::cos(w0);
  const double a0 = 1.0 + alpha;
  const double b0 = (1.0 + cw) / 2.0 / a0, b1 = -(1.0 + cw) / a0, b2 = b0;
  const double a1 = -2.0 * cw / a0, a2 = (1.0 - alpha) / a0;
  std::vector<double> y(x.size());
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = b0 * x[i] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x[i];
    y2 = y1;
    y1 = v;
    y[i] = v;
  }
  return y;
}

/// Entropy in bits of the spectrum normalized to a probability mass.
inline double shannon_entropy(const PowerSpectrum& ps) {
  const double total = ps.total();
  if (!(total > 0.0)) throw NotApplicableError("entropy is undefined for a zero-energy spectrum");
  double h = 0.0;
  for (double b : ps.bins) {
    if (b <= 0.0) continue;
    const double p = b / total;
    h -= p * std::log2(p);
  }
  return std::max(h, 0.0);
}

/// Sum of bins whose centre frequency lies in [f_lo, f_hi). A band whose
/// upper edge reaches the Nyquist frequency also includes the Nyquist bin.
inline double band_energy(const PowerSpectrum& ps, double f_lo, double f_hi) {
  if (f_lo < 0.0 || !(f_lo < f_hi)) throw std::invalid_argument("band requires 0 <= f_lo < f_hi");
  const double nyq = ps.nyquist_hz();
  if (f_hi > nyq + 1e-9) throw std::invalid_argument("band upper edge exceeds Nyquist");
  const bool closed_top = f_hi >= nyq;
  double acc = 0.0;
  for (std::size_t k = 0; k < ps.bins.size(); ++k) {
    const double f = ps.frequency(k);
    if (f >= f_lo && (f < f_hi || (closed_top && f <= f_hi))) acc += ps.bins[k];
  }
  return acc;
}

}  // namespace coughpoc
