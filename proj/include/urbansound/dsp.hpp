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

// Framing, A-weighted sound level, LAeq and log-mel features.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urbansound/common.hpp"
#include "urbansound/fft.hpp"
#include "urbansound/wav.hpp"

namespace urbansound::dsp {

inline constexpr int kSegmentSamples = 66150;  // 1.5 s
inline constexpr int kMelWindow = 1024;
inline constexpr int kMelHop = 512;
inline constexpr int kMelBands = 64;
inline constexpr int kMelFrames = (kSegmentSamples - kMelWindow) / kMelHop + 1;
inline constexpr double kMelMaxHz = 11025.0;
static_assert(kMelFrames == 128);

struct CalibrationConfig {
  double full_scale_spl_db = 94.0;  ///< level reported for a full-scale sine at 1 kHz
  double energy_floor = 1e-10;

  void validate() const {
    if (!(full_scale_spl_db > 0.0)) throw ConfigError("full_scale_spl_db must be positive");
    if (!(energy_floor > 0.0)) throw ConfigError("energy_floor must be positive");
  }
};

/// One capture unit: `channels` x 8192 samples, channel-major.
struct AudioFrame {
  std::string node_id;
  Timestamp timestamp{};
  std::int64_t index = 0;
  int sample_rate = kSampleRate;
  int channels = 1;
  std::vector<std::int16_t> samples;

  std::span<const std::int16_t> channel(int c) const {
    if (c < 0 || c >= channels) throw ConfigError("channel index out of range");
    return {samples.data() + static_cast<std::size_t>(c) * kFrameSamples, kFrameSamples};
  }
};

struct SplSample {
  Timestamp timestamp{};
  double level = 0.0;  ///< dB(A)
};

inline double normalize_sample(std::int16_t v) { return static_cast<double>(v) / 32768.0; }

inline std::vector<double> normalize(std::span<const std::int16_t> pcm) {
  std::vector<double> out(pcm.size());
  std::transform(pcm.begin(), pcm.end(), out.begin(), normalize_sample);
  return out;
}

/// Periodic Hann window of length n.
inline std::vector<double> hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Incremental framer: accepts interleaved chunks, yields complete 8192-sample frames.
class Framer {
 public:
  Framer(std::string node_id, int channels, Timestamp start, int sample_rate = kSampleRate)
      : node_id_(std::move(node_id)), channels_(channels), start_(start) {
    if (sample_rate != kSampleRate) throw ConfigError("sample rate must be 44100 Hz");
    if (channels != 1 && channels != kArrayChannels) throw ConfigError("channel count must be 1 or 7");
    pending_.reserve(static_cast<std::size_t>(kFrameSamples) * channels);
  }

  /// Appends interleaved samples; returns any frames completed by this chunk.
  std::vector<AudioFrame> push(std::span<const std::int16_t> interleaved) {
    if (interleaved.size() % channels_ != 0) throw SizeError("chunk is not a whole number of sample frames");
    std::vector<AudioFrame> out;
    const std::size_t frame_len = static_cast<std::size_t>(kFrameSamples) * channels_;
    for (std::int16_t v : interleaved) {
      pending_.push_back(v);
      if (pending_.size() == frame_len) out.push_back(emit());
    }
    return out;
  }

  /// Samples per channel held back as an incomplete frame.
  std::size_t pending_per_channel() const { return pending_.size() / channels_; }
  std::int64_t frames_emitted() const { return next_index_; }

  static Timestamp frame_time(Timestamp start, std::int64_t index) {
    const double offset = static_cast<double>(index) * kFrameSamples / kSampleRate;
    return start + std::chrono::microseconds{std::llround(offset * 1e6)};
  }

 private:
  AudioFrame emit() {
    AudioFrame f;
    f.node_id = node_id_;
    f.index = next_index_;
    f.timestamp = frame_time(start_, next_index_);
    f.channels = channels_;
    f.samples.resize(pending_.size());
    for (int c = 0; c < channels_; ++c)
      for (int i = 0; i < kFrameSamples; ++i)
        f.samples[static_cast<std::size_t>(c) * kFrameSamples + i] = pending_[static_cast<std::size_t>(i) * channels_ + c];
    pending_.clear();
    ++next_index_;
    return f;
  }

  std::string node_id_;
  int channels_;
  Timestamp start_;
  std::int64_t next_index_ = 0;
  std::vector<std::int16_t> pending_;
};

/// Splits a whole stream into non-overlapping frames; a trailing partial frame is dropped.
inline std::vector<AudioFrame> frame_stream(const PcmAudio& pcm, const std::string& node_id, Timestamp start) {
  Framer framer(node_id, pcm.channels, start, pcm.sample_rate);
  return framer.push(pcm.interleaved);
}

/// IEC 61672 A-weighting gain in dB at frequency f (Hz).
inline double a_weighting_db(double f) {
  if (f <= 0.0) return -std::numeric_limits<double>::infinity();
  const double f2 = f * f;
  const double c1 = 20.598997 * 20.598997, c2 = 107.65265 * 107.65265, c3 = 737.86223 * 737.86223,
               c4 = 12194.217 * 12194.217;
  const double ra = c4 * f2 * f2 / ((f2 + c1) * std::sqrt((f2 + c2) * (f2 + c3)) * (f2 + c4));
  return 20.0 * std::log10(ra) + 2.0;
}

/// Frequency-domain A-weighted power estimator for blocks of fixed length.
class AWeighting {
 public:
  explicit AWeighting(int n = kFrameSamples, int sample_rate = kSampleRate)
      : fft_(n), window_(hann(n)), gains_(n / 2 + 1) {
    for (int k = 0; k <= n / 2; ++k) {
      const double db = a_weighting_db(static_cast<double>(k) * sample_rate / n);
      gains_[k] = std::isfinite(db) ? std::pow(10.0, db / 10.0) : 0.0;
    }
    for (double w : window_) window_energy_ += w * w;
  }

  /// A-weighted mean square of a block of normalized samples (full-scale sine -> 0.5).
  double mean_square(std::span<const double> block) const {
    const int n = fft_.size();
    if (static_cast<int>(block.size()) != n) throw SizeError("A-weighting block length mismatch");
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = block[i] * window_[i];
    const auto spec = fft_.forward(x);
    double acc = 0.0;
    for (int k = 0; k <= n / 2; ++k) {
      const double scale = (k == 0 || k == n / 2) ? 1.0 : 2.0;
      acc += scale * gains_[k] * std::norm(spec[k]);
    }
    return acc / (static_cast<double>(n) * window_energy_);
  }

  double level_db(std::span<const double> block, const CalibrationConfig& cal) const {
    const double ms = std::max(mean_square(block), cal.energy_floor);
    return 10.0 * std::log10(ms / 0.5) + cal.full_scale_spl_db;
  }

  static const AWeighting& frame_default() {
    static const AWeighting instance;
    return instance;
  }

 private:
  RealFft fft_;
  std::vector<double> window_;
  std::vector<double> gains_;
  double window_energy_ = 0.0;
};

/// Lowest level a_weight_spl can report under `cal`.
inline double floor_level_db(const CalibrationConfig& cal) {
  return 10.0 * std::log10(cal.energy_floor / 0.5) + cal.full_scale_spl_db;
}

inline SplSample a_weight_spl(const AudioFrame& frame, int channel, const CalibrationConfig& cal = {}) {
  const auto x = normalize(frame.channel(channel));
  return {frame.timestamp, AWeighting::frame_default().level_db(x, cal)};
}

/// Energy-mean level; nullopt when there are no samples.
inline std::optional<double> laeq(std::span<const SplSample> samples) {
  if (samples.empty()) return std::nullopt;
  double acc = 0.0;
  for (const auto& s : samples) acc += std::pow(10.0, s.level / 10.0);
  return 10.0 * std::log10(acc / static_cast<double>(samples.size()));
}

/// Trailing-window LAeq over samples whose timestamp lies in (t - window, t].
class LaeqWindow {
 public:
  explicit LaeqWindow(std::chrono::microseconds window = std::chrono::seconds{60}) : window_(window) {}

  void add(const SplSample& s) {
    samples_.push_back(s);
    while (!samples_.empty() && samples_.front().timestamp <= s.timestamp - window_) samples_.erase(samples_.begin());
  }
  std::optional<double> value() const { return laeq(samples_); }
  void clear() { samples_.clear(); }

 private:
  std::chrono::microseconds window_;
  std::vector<SplSample> samples_;
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular HTK-style filter bank over the power spectrum of a 1024-point transform.
class MelFilterbank {
 public:
  MelFilterbank(int bands = kMelBands, int nfft = kMelWindow, int sample_rate = kSampleRate,
                double min_hz = 0.0, double max_hz = kMelMaxHz)
      : bands_(bands), bins_(nfft / 2 + 1), weights_(static_cast<std::size_t>(bands) * bins_, 0.0) {
    const double lo = hz_to_mel(min_hz), hi = hz_to_mel(max_hz);
    edges_.resize(bands + 2);
    for (int i = 0; i < bands + 2; ++i) edges_[i] = mel_to_hz(lo + (hi - lo) * i / (bands + 1));
    for (int m = 0; m < bands; ++m) {
      const double f0 = edges_[m], f1 = edges_[m + 1], f2 = edges_[m + 2];
      for (int k = 0; k < bins_; ++k) {
        const double f = static_cast<double>(k) * sample_rate / nfft;
        double w = 0.0;
        if (f > f0 && f <= f1) w = (f - f0) / (f1 - f0);
        else if (f > f1 && f < f2) w = (f2 - f) / (f2 - f1);
        weights_[static_cast<std::size_t>(m) * bins_ + k] = w;
      }
    }
  }

  int bands() const { return bands_; }
  double center_hz(int band) const { return edges_.at(band + 1); }
  double lower_hz(int band) const { return edges_.at(band); }
  double upper_hz(int band) const { return edges_.at(band + 2); }

  void apply(std::span<const double> power, std::span<double> out) const {
    for (int m = 0; m < bands_; ++m) {
      const double* w = weights_.data() + static_cast<std::size_t>(m) * bins_;
      double acc = 0.0;
      for (int k = 0; k < bins_; ++k) acc += w[k] * power[k];
      out[m] = acc;
    }
  }

  static const MelFilterbank& standard() {
    static const MelFilterbank instance;
    return instance;
  }

 private:
  int bands_;
  int bins_;
  std::vector<double> weights_;
  std::vector<double> edges_;
};

/// 128 x 64 natural-log mel energies, time-major.
struct LogMelSpectrogram {
  static constexpr int kTime = kMelFrames;
  static constexpr int kMel = kMelBands;
  std::vector<double> values = std::vector<double>(static_cast<std::size_t>(kTime) * kMel, 0.0);
  double source_duration_s = 1.5;

  double at(int t, int m) const { return values[static_cast<std::size_t>(t) * kMel + m]; }
  double& at(int t, int m) { return values[static_cast<std::size_t>(t) * kMel + m]; }
};

inline LogMelSpectrogram log_mel(std::span<const double> segment, const CalibrationConfig& cal = {}) {
  if (segment.size() != static_cast<std::size_t>(kSegmentSamples))
    throw SizeError("log_mel expects exactly 66150 samples, got " + std::to_string(segment.size()));
  static const RealFft fft(kMelWindow);
  static const std::vector<double> window = hann(kMelWindow);
  const auto& bank = MelFilterbank::standard();

  LogMelSpectrogram out;
  std::vector<double> frame(kMelWindow), power(kMelWindow / 2 + 1), mel(kMelBands);
  for (int t = 0; t < kMelFrames; ++t) {
    const double* src = segment.data() + static_cast<std::size_t>(t) * kMelHop;
    for (int i = 0; i < kMelWindow; ++i) frame[i] = src[i] * window[i];
    const auto spec = fft.forward(frame);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
    bank.apply(power, mel);
    for (int m = 0; m < kMelBands; ++m) out.at(t, m) = std::log(mel[m] + cal.energy_floor);
  }
  return out;
}

inline LogMelSpectrogram log_mel(std::span<const std::int16_t> segment, const CalibrationConfig& cal = {}) {
  const auto x = normalize(segment);
  return log_mel(std::span<const double>(x), cal);
}

}  // namespace urbansound::dsp
