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

// Classifier contract, nearest-centroid baseline, and the five-frame
// average-confidence trigger.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "urbansound/common.hpp"
#include "urbansound/dsp.hpp"
#include "urbansound/taxonomy.hpp"

namespace urbansound::classify {

using Scores = std::array<double, kNumClasses>;

struct ScoreVector {
  std::int64_t frame_index = 0;
  Timestamp timestamp{};
  Scores scores{};
};

inline Scores uniform_scores() {
  Scores s;
  s.fill(1.0 / kNumClasses);
  return s;
}

/// softmax(-distance / temperature), shifted by the minimum distance for stability.
inline Scores softmax_scores(std::span<const double> distances, double temperature) {
  if (distances.size() != kNumClasses) throw SizeError("expected one distance per class");
  if (!(temperature > 0.0)) throw ModelError("temperature must be positive");
  const double dmin = *std::min_element(distances.begin(), distances.end());
  Scores s;
  double total = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    s[k] = std::exp(-(distances[k] - dmin) / temperature);
    total += s[k];
  }
  for (double& v : s) v /= total;
  return s;
}

inline int argmax(const Scores& s) {
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

/// Standardized nearest-centroid model over log-mel spectrograms.
struct BaselineModel {
  static constexpr std::size_t kDims = static_cast<std::size_t>(dsp::LogMelSpectrogram::kTime) * dsp::LogMelSpectrogram::kMel;

  double temperature = 1.0;
  std::vector<double> mean;       // kDims
  std::vector<double> stddev;     // kDims
  std::vector<double> centroids;  // kNumClasses * kDims, standardized

  bool trained() const {
    return mean.size() == kDims && stddev.size() == kDims && centroids.size() == kDims * kNumClasses;
  }

  std::span<const double> centroid(int k) const { return {centroids.data() + k * kDims, kDims}; }

  std::vector<double> standardize(const dsp::LogMelSpectrogram& spec) const {
    std::vector<double> z(kDims);
    for (std::size_t i = 0; i < kDims; ++i) z[i] = (spec.values[i] - mean[i]) / stddev[i];
    return z;
  }

  std::array<double, kNumClasses> distances(std::span<const double> z) const {
    std::array<double, kNumClasses> d{};
    for (int k = 0; k < kNumClasses; ++k) {
      const auto c = centroid(k);
      double acc = 0.0;
      for (std::size_t i = 0; i < kDims; ++i) {
        const double diff = z[i] - c[i];
        acc += diff * diff;
      }
      d[k] = std::sqrt(acc);
    }
    return d;
  }
};

inline ScoreVector classify(const dsp::LogMelSpectrogram& spec, const BaselineModel& model,
                            std::int64_t frame_index = 0, Timestamp timestamp = {}) {
  if (!model.trained()) throw ModelError("model is not trained");
  const auto z = model.standardize(spec);
  const auto d = model.distances(z);
  return {frame_index, timestamp, softmax_scores(d, model.temperature)};
}

struct LabeledSpectrogram {
  dsp::LogMelSpectrogram spec;
  int label = 0;
};

inline BaselineModel train_baseline(std::span<const LabeledSpectrogram> samples, double min_stddev = 1e-3) {
  constexpr std::size_t dims = BaselineModel::kDims;
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= kNumClasses) throw ModelError("training label out of range");
    ++counts[s.label];
  }
  std::string missing;
  for (int k = 0; k < kNumClasses; ++k)
    if (counts[k] == 0) missing += (missing.empty() ? "" : ", ") + std::string(class_label(k));
  if (!missing.empty()) throw ModelError("training split has no samples for: " + missing);

  BaselineModel m;
  m.mean.assign(dims, 0.0);
  m.stddev.assign(dims, 0.0);
  const double n = static_cast<double>(samples.size());
  for (const auto& s : samples)
    for (std::size_t i = 0; i < dims; ++i) m.mean[i] += s.spec.values[i];
  for (double& v : m.mean) v /= n;
  for (const auto& s : samples)
    for (std::size_t i = 0; i < dims; ++i) {
      const double d = s.spec.values[i] - m.mean[i];
      m.stddev[i] += d * d;
    }
  for (double& v : m.stddev) v = std::max(std::sqrt(v / n), min_stddev);

  m.centroids.assign(dims * kNumClasses, 0.0);
  for (const auto& s : samples) {
    double* c = m.centroids.data() + s.label * dims;
    for (std::size_t i = 0; i < dims; ++i) c[i] += (s.spec.values[i] - m.mean[i]) / m.stddev[i];
  }
  for (int k = 0; k < kNumClasses; ++k) {
    double* c = m.centroids.data() + k * dims;
    for (std::size_t i = 0; i < dims; ++i) c[i] /= static_cast<double>(counts[k]);
  }

  // Temperature: a tenth of the median gap between nearest and second-nearest centroid.
  std::vector<double> margins;
  margins.reserve(samples.size());
  for (const auto& s : samples) {
    auto d = m.distances(m.standardize(s.spec));
    std::sort(d.begin(), d.end());
    margins.push_back(d[1] - d[0]);
  }
  std::sort(margins.begin(), margins.end());
  const std::size_t mid = margins.size() / 2;
  const double median = margins.size() % 2 ? margins[mid] : 0.5 * (margins[mid - 1] + margins[mid]);
  m.temperature = std::max(median / 10.0, 1e-6);
  return m;
}

// Model file layout (all little-endian):
//   char[4]  magic "USBM"
//   u32      version (1)
//   u32      classes, u32 time bins, u32 mel bands
//   f64      temperature
//   f64[D]   mean, f64[D] stddev, f64[classes*D] centroids   (D = time*mel)
inline constexpr char kModelMagic[4] = {'U', 'S', 'B', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {
inline void put_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_f64(std::ostream& o, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  o.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ModelError("truncated model file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}
inline double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ModelError("truncated model file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}
}  // namespace detail

inline void save_model(std::ostream& out, const BaselineModel& m) {
  if (!m.trained()) throw ModelError("cannot save an untrained model");
  out.write(kModelMagic, 4);
  detail::put_u32(out, kModelVersion);
  detail::put_u32(out, kNumClasses);
  detail::put_u32(out, dsp::LogMelSpectrogram::kTime);
  detail::put_u32(out, dsp::LogMelSpectrogram::kMel);
  detail::put_f64(out, m.temperature);
  for (double v : m.mean) detail::put_f64(out, v);
  for (double v : m.stddev) detail::put_f64(out, v);
  for (double v : m.centroids) detail::put_f64(out, v);
}

inline BaselineModel load_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) throw ModelError("bad model magic");
  if (detail::get_u32(in) != kModelVersion) throw ModelError("unsupported model version");
  const auto classes = detail::get_u32(in), time = detail::get_u32(in), mel = detail::get_u32(in);
  if (classes != kNumClasses || time != dsp::LogMelSpectrogram::kTime || mel != dsp::LogMelSpectrogram::kMel)
    throw ModelError("model dimensions do not match");
  BaselineModel m;
  m.temperature = detail::get_f64(in);
  m.mean.resize(BaselineModel::kDims);
  m.stddev.resize(BaselineModel::kDims);
  m.centroids.resize(BaselineModel::kDims * kNumClasses);
  for (double& v : m.mean) v = detail::get_f64(in);
  for (double& v : m.stddev) v = detail::get_f64(in);
  for (double& v : m.centroids) v = detail::get_f64(in);
  return m;
}

inline void save_model(const std::filesystem::path& path, const BaselineModel& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write " + path.string());
  save_model(out, m);
}

inline BaselineModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  return load_model(in);
}

// ---------------------------------------------------------------------------
// Trigger

inline constexpr int kTriggerFrames = 5;
inline constexpr double kTriggerThreshold = 0.8;
// Comparison slack so that an exact boundary mean (e.g. [1,1,1,1,0]) is not lost to rounding.
inline constexpr double kThresholdSlack = 1e-9;

struct TriggeredEvent {
  int class_index = 0;
  double average_confidence = 0.0;
  std::int64_t frame_index = 0;
  Timestamp timestamp{};
  Scores scores{};  ///< scores of the triggering frame
};

/// The last five score vectors with consecutive frame indices.
class ConfidenceWindow {
 public:
  /// Appends a frame. Throws on a non-increasing index; a gap restarts the window.
  void push(const ScoreVector& s) {
    if (!frames_.empty()) {
      const auto last = frames_.back().frame_index;
      if (s.frame_index <= last) throw ProtocolError("score frames out of order");
      if (s.frame_index != last + 1) frames_.clear();
    }
    frames_.push_back(s);
    if (frames_.size() > kTriggerFrames) frames_.pop_front();
  }

  bool full() const { return frames_.size() == kTriggerFrames; }
  void clear() { frames_.clear(); }

  /// AC_x(n) = (1/5) sum_{m=0..4} c_x(n-m); nullopt until the window is full.
  std::optional<double> average(int cls) const {
    if (!full()) return std::nullopt;
    double acc = 0.0;
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it) acc += it->scores[cls];
    return acc / kTriggerFrames;
  }

  const ScoreVector& latest() const { return frames_.back(); }

 private:
  std::deque<ScoreVector> frames_;
};

/// Mean of five confidences for one class, newest first.
inline double average_confidence(std::span<const double, kTriggerFrames> newest_first) {
  double acc = 0.0;
  for (double v : newest_first) acc += v;
  return acc / kTriggerFrames;
}

/// Emits one event per frame whose best average confidence reaches the threshold.
class TriggerDetector {
 public:
  explicit TriggerDetector(double threshold = kTriggerThreshold) : threshold_(threshold) {}

  std::optional<TriggeredEvent> feed(const ScoreVector& s) {
    window_.push(s);
    if (!window_.full()) return std::nullopt;
    int best = 0;
    double best_ac = -1.0;
    for (int k = 0; k < kNumClasses; ++k) {
      const double ac = *window_.average(k);
      if (ac > best_ac) {  // strict: ties keep the lowest index
        best_ac = ac;
        best = k;
      }
    }
    if (best_ac + kThresholdSlack < threshold_) return std::nullopt;
    return TriggeredEvent{best, best_ac, s.frame_index, s.timestamp, s.scores};
  }

  void reset() { window_.clear(); }

 private:
  double threshold_;
  ConfidenceWindow window_;
};

inline std::vector<TriggeredEvent> detect_events(std::span<const ScoreVector> stream) {
  TriggerDetector det;
  std::vector<TriggeredEvent> out;
  for (const auto& s : stream)
    if (auto e = det.feed(s)) out.push_back(*e);
  return out;
}

}  // namespace urbansound::classify
