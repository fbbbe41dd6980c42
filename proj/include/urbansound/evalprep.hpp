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

// Dataset preparation and evaluation.
//
// Annotated spans are cut into 4 s segments with a 2 s hop, anchored at the
// span start; one 1.5 s sample is drawn from each segment. Recordings are
// assigned to train/val/test by location, then scored with precision, recall,
// F1, micro/macro accuracy and average precision.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "urbansound/classify.hpp"
#include "urbansound/common.hpp"
#include "urbansound/dsp.hpp"
#include "urbansound/taxonomy.hpp"
#include "urbansound/wav.hpp"

namespace urbansound::evalprep {

inline constexpr double kSegmentSeconds = 4.0;
inline constexpr double kSegmentHop = 2.0;
inline constexpr double kSampleSeconds = 1.5;
inline constexpr double kMaxExtractOffset = kSegmentSeconds - kSampleSeconds;
inline constexpr double kAmbientTrainCapSeconds = 600.0;
inline constexpr int kNumLocations = 9;

struct Annotation {
  double start_s = 0.0;
  double end_s = 0.0;
  int class_index = 0;
};

struct AnnotatedRecording {
  std::string name;
  std::filesystem::path audio;
  int location = 1;  // L1..L9
  std::vector<Annotation> annotations;

  void validate(std::optional<double> duration_s = std::nullopt) const {
    if (location < 1 || location > kNumLocations) throw DataError(name + ": location must be L1..L9");
    for (const auto& a : annotations) {
      if (!(a.start_s >= 0.0 && a.start_s < a.end_s)) throw DataError(name + ": annotation needs 0 <= start < end");
      if (a.class_index < 0 || a.class_index >= kNumClasses) throw DataError(name + ": unknown class");
      if (duration_s && a.end_s > *duration_s + 1e-6) throw DataError(name + ": annotation past end of audio");
    }
  }
};

// ---- segmentation ----------------------------------------------------------

/// Segment starts (relative to the span start) for a span of `length_s` seconds.
inline std::vector<double> segment_starts(double length_s) {
  std::vector<double> out;
  for (int i = 0; kSegmentHop * i + kSegmentSeconds <= length_s + 1e-9; ++i) out.push_back(kSegmentHop * i);
  return out;
}

inline std::size_t segment_count(double length_s) { return segment_starts(length_s).size(); }

struct Segment {
  std::size_t annotation = 0;
  double start_s = 0.0;  // absolute, within the recording
  int class_index = 0;
};

inline std::vector<Segment> segment(const AnnotatedRecording& rec) {
  std::vector<Segment> out;
  for (std::size_t i = 0; i < rec.annotations.size(); ++i) {
    const auto& a = rec.annotations[i];
    for (double s : segment_starts(a.end_s - a.start_s)) out.push_back({i, a.start_s + s, a.class_index});
  }
  return out;
}

/// Uniform offset in [0, 2.5) s from 53 random bits.
inline double extract_offset(std::mt19937_64& rng) {
  return kMaxExtractOffset * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// ---- manifest --------------------------------------------------------------

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split: " + std::string(s));
}

struct ManifestSample {
  std::string recording;
  std::string audio;
  int location = 1;
  double segment_start_s = 0.0;
  double extract_start_s = 0.0;  // absolute
  double duration_s = kSampleSeconds;
  int label = 0;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::uint64_t rng_seed = 0;
  std::vector<ManifestSample> samples;

  std::vector<const ManifestSample*> of(Split s) const {
    std::vector<const ManifestSample*> out;
    for (const auto& m : samples)
      if (m.split == s) out.push_back(&m);
    return out;
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"recording", s.recording},
                       {"audio", s.audio},
                       {"location", "L" + std::to_string(s.location)},
                       {"segment_start_s", s.segment_start_s},
                       {"extract_start_s", s.extract_start_s},
                       {"duration_s", s.duration_s},
                       {"label", std::string(class_label(s.label))},
                       {"split", std::string(split_name(s.split))}});
  }
  return {{"rng_seed", m.rng_seed}, {"samples", samples}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    for (const auto& s : j.at("samples")) {
      ManifestSample x;
      x.recording = s.at("recording").get<std::string>();
      x.audio = s.at("audio").get<std::string>();
      x.location = std::stoi(s.at("location").get<std::string>().substr(1));
      x.segment_start_s = s.at("segment_start_s").get<double>();
      x.extract_start_s = s.at("extract_start_s").get<double>();
      x.duration_s = s.at("duration_s").get<double>();
      const auto label = class_index(s.at("label").get<std::string>());
      if (!label) throw DataError("unknown label in manifest");
      x.label = *label;
      x.split = parse_split(s.at("split").get<std::string>());
      m.samples.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

/// Location-based split rules. A recording lands in exactly one split; the
/// rotation offset spreads each (location, class) group across the cycle.
struct SplitPolicy {
  std::vector<Split> full_cycle{Split::Train, Split::Train, Split::Train, Split::Val, Split::Test};
  std::vector<int> full_locations{1, 3, 4, 5, 6};
  std::vector<Split> no_val_cycle{Split::Train, Split::Train, Split::Train, Split::Test};
  std::vector<int> no_val_locations{2};
  std::vector<Split> ambient_cycle{Split::Train, Split::Test};
  std::vector<int> ambient_only_locations{7, 8, 9};
  double ambient_train_cap_s = kAmbientTrainCapSeconds;
};

namespace detail {

inline int dominant_class(const AnnotatedRecording& r) {
  std::array<double, kNumClasses> dur{};
  for (const auto& a : r.annotations) dur[a.class_index] += a.end_s - a.start_s;
  return static_cast<int>(std::max_element(dur.begin(), dur.end()) - dur.begin());
}

inline bool only_ambient(const AnnotatedRecording& r) {
  return std::all_of(r.annotations.begin(), r.annotations.end(),
                     [](const Annotation& a) { return a.class_index == static_cast<int>(SoundClass::Ambient); });
}

inline bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace detail

/// Split assigned to each recording (same order as the input).
inline std::vector<Split> assign_splits(const std::vector<AnnotatedRecording>& recs, const SplitPolicy& policy,
                                        std::uint64_t seed) {
  std::vector<Split> out(recs.size(), Split::Test);
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    if (detail::contains(policy.ambient_only_locations, r.location) && !detail::only_ambient(r)) continue;  // test
    groups[{r.location, detail::dominant_class(r)}].push_back(i);
  }
  std::mt19937_64 rng(seed);
  const auto rotation = rng();
  for (auto& [key, members] : groups) {
    const auto [loc, cls] = key;
    std::sort(members.begin(), members.end(), [&](auto a, auto b) { return recs[a].name < recs[b].name; });
    std::shuffle(members.begin(), members.end(), rng);
    const std::vector<Split>* cycle = nullptr;
    std::size_t ordinal = 0;
    for (const auto* list : {&policy.full_locations, &policy.no_val_locations, &policy.ambient_only_locations}) {
      const auto it = std::find(list->begin(), list->end(), loc);
      if (it == list->end()) continue;
      ordinal = static_cast<std::size_t>(it - list->begin());
      cycle = list == &policy.full_locations     ? &policy.full_cycle
              : list == &policy.no_val_locations ? &policy.no_val_cycle
                                                 : &policy.ambient_cycle;
      break;
    }
    if (!cycle) throw DataError("location L" + std::to_string(loc) + " has no split rule");
    const std::size_t offset = (ordinal + static_cast<std::size_t>(cls) + rotation) % cycle->size();
    for (std::size_t j = 0; j < members.size(); ++j) out[members[j]] = (*cycle)[(offset + j) % cycle->size()];
  }
  return out;
}

inline DatasetManifest build_manifest(std::vector<AnnotatedRecording> recs, const SplitPolicy& policy,
                                      std::uint64_t seed) {
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& r : recs) r.validate();
  const auto splits = assign_splits(recs, policy, seed);

  std::map<std::string, Split> by_audio;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto [it, fresh] = by_audio.emplace(recs[i].audio.string(), splits[i]);
    if (!fresh && it->second != splits[i])
      throw DataError("recording " + recs[i].audio.string() + " assigned to two splits");
  }

  DatasetManifest m;
  m.rng_seed = seed;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::map<int, double> ambient_budget;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    const bool capped = splits[i] == Split::Train && detail::contains(policy.ambient_only_locations, r.location);
    for (const auto& a : r.annotations) {
      double length = a.end_s - a.start_s;
      if (capped) {
        auto& used = ambient_budget[r.location];
        length = std::min(length, policy.ambient_train_cap_s - used);
        if (length <= 0.0) continue;
        used += length;
      }
      for (double rel : segment_starts(length)) {
        ManifestSample s;
        s.recording = r.name;
        s.audio = r.audio.string();
        s.location = r.location;
        s.segment_start_s = a.start_s + rel;
        s.extract_start_s = s.segment_start_s + extract_offset(rng);
        s.label = a.class_index;
        s.split = splits[i];
        m.samples.push_back(std::move(s));
      }
    }
  }
  return m;
}

// ---- annotation files ------------------------------------------------------

inline std::vector<Annotation> parse_annotation_csv(std::istream& in, const std::string& what) {
  std::vector<Annotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("start", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string a, b, label;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, label))
      throw DataError(what + ":" + std::to_string(lineno) + ": expected start_s,end_s,label");
    const auto idx = class_index(label);
    if (!idx) throw DataError(what + ":" + std::to_string(lineno) + ": unknown label " + label);
    try {
      out.push_back({std::stod(a), std::stod(b), *idx});
    } catch (const std::exception&) {
      throw DataError(what + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

inline std::string annotation_csv(const std::vector<Annotation>& anns) {
  std::ostringstream out;
  out.precision(10);
  out << "start_s,end_s,label\n";
  for (const auto& a : anns) out << a.start_s << ',' << a.end_s << ',' << class_label(a.class_index) << '\n';
  return out.str();
}

/// Reads every L<k>_<name>.csv under `annotations_dir`; audio is <audio_dir>/<name>.wav.
inline std::vector<AnnotatedRecording> load_annotations(const std::filesystem::path& annotations_dir,
                                                        const std::filesystem::path& audio_dir) {
  static const std::regex pattern(R"(L([1-9])_(.+)\.csv)");
  std::vector<AnnotatedRecording> out;
  if (!std::filesystem::is_directory(annotations_dir))
    throw ConfigError("not a directory: " + annotations_dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(annotations_dir)) {
    std::smatch m;
    const std::string file = entry.path().filename().string();
    if (!std::regex_match(file, m, pattern)) continue;
    AnnotatedRecording r;
    r.location = std::stoi(m[1]);
    r.name = m[2];
    r.audio = audio_dir / (r.name + ".wav");
    std::ifstream in(entry.path());
    r.annotations = parse_annotation_csv(in, file);
    std::optional<double> duration;
    if (std::filesystem::exists(r.audio)) duration = read_wav(r.audio).duration_s();
    r.validate(duration);
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

// ---- metrics ---------------------------------------------------------------

struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};  // [truth][predicted]

  std::int64_t row_sum(int p) const {
    std::int64_t s = 0;
    for (auto v : counts[p]) s += v;
    return s;
  }
  std::int64_t col_sum(int q) const {
    std::int64_t s = 0;
    for (const auto& row : counts) s += row[q];
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (int p = 0; p < kNumClasses; ++p) s += row_sum(p);
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int k = 0; k < kNumClasses; ++k) s += counts[k][k];
    return s;
  }

  /// Row percentages rounded half-up; empty rows are all zero.
  std::array<std::array<int, kNumClasses>, kNumClasses> row_percentages() const {
    std::array<std::array<int, kNumClasses>, kNumClasses> out{};
    for (int p = 0; p < kNumClasses; ++p) {
      const auto n = row_sum(p);
      if (n == 0) continue;
      for (int q = 0; q < kNumClasses; ++q)
        out[p][q] = static_cast<int>((200 * counts[p][q] + n) / (2 * n));  // floor(100 c / n + 1/2)
    }
    return out;
  }
};

inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> truths) {
  if (preds.size() != truths.size()) throw SizeError("predictions and truths differ in length");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= kNumClasses || truths[i] < 0 || truths[i] >= kNumClasses)
      throw DataError("label outside taxonomy");
    ++cm.counts[truths[i]][preds[i]];
  }
  return cm;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auprc;
  std::int64_t support = 0;    // M_k
  std::int64_t true_pos = 0;   // M_TP,k
  std::int64_t predicted = 0;  // column sum
  bool precision_undefined = false;
  bool recall_undefined = false;
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  std::int64_t total = 0;     // M
  std::int64_t true_pos = 0;  // M_TP
  int classes_present = 0;    // C
  double accuracy_micro = 0.0;
  double accuracy_macro = 0.0;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  std::optional<double> auprc_macro;
  std::size_t skipped = 0;
  std::vector<std::string> missing_audio;
};

/// Average precision: sum over decreasing distinct thresholds of (R_t - R_{t-1}) * P_t.
/// nullopt when there are no positives.
inline std::optional<double> average_precision(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw SizeError("scores and labels differ in length");
  const auto n_pos = std::count_if(positive.begin(), positive.end(), [](std::uint8_t v) { return v != 0; });
  if (n_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::int64_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += positive[order[j]] ? 1 : 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    ap += (recall - prev_recall) * static_cast<double>(tp) / static_cast<double>(seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

inline MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.total = cm.total();
  r.true_pos = cm.trace();
  double acc_sum = 0.0, p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    auto& c = r.per_class[k];
    c.support = cm.row_sum(k);
    c.predicted = cm.col_sum(k);
    c.true_pos = cm.counts[k][k];
    c.precision_undefined = c.predicted == 0;
    c.recall_undefined = c.support == 0;
    c.precision = c.precision_undefined ? 0.0 : static_cast<double>(c.true_pos) / static_cast<double>(c.predicted);
    c.recall = c.recall_undefined ? 0.0 : static_cast<double>(c.true_pos) / static_cast<double>(c.support);
    c.f1 = c.precision + c.recall > 0.0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    if (c.support > 0) {
      ++r.classes_present;
      acc_sum += c.recall;
      p_sum += c.precision;
      r_sum += c.recall;
      f_sum += c.f1;
    }
  }
  r.accuracy_micro = r.total > 0 ? static_cast<double>(r.true_pos) / static_cast<double>(r.total) : 0.0;
  if (r.classes_present > 0) {
    const double c = r.classes_present;
    r.accuracy_macro = acc_sum / c;
    r.precision_macro = p_sum / c;
    r.recall_macro = r_sum / c;
    r.f1_macro = f_sum / c;
  }
  return r;
}

struct ScoredPrediction {
  int truth = 0;
  classify::Scores scores{};
};

/// Metrics from scored predictions; the predicted label is the arg-max score.
inline MetricsReport metrics(std::span<const ScoredPrediction> preds) {
  std::vector<int> p, t;
  for (const auto& s : preds) {
    p.push_back(classify::argmax(s.scores));
    t.push_back(s.truth);
  }
  auto r = metrics(confusion(p, t));
  double ap_sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    std::vector<double> sc;
    std::vector<std::uint8_t> pos;
    for (const auto& s : preds) {
      sc.push_back(s.scores[k]);
      pos.push_back(s.truth == k ? 1 : 0);
    }
    r.per_class[k].auprc = average_precision(sc, pos);
    if (r.per_class[k].auprc) ap_sum += *r.per_class[k].auprc;
  }
  if (r.classes_present > 0) r.auprc_macro = ap_sum / r.classes_present;
  return r;
}

// ---- training and evaluation ----------------------------------------------

using AudioLoader = std::function<std::optional<PcmAudio>(const std::string& audio)>;

inline AudioLoader file_loader() {
  return [](const std::string& path) -> std::optional<PcmAudio> {
    if (!std::filesystem::exists(path)) return std::nullopt;
    return read_wav(path);
  };
}

/// Channel-0 log-mel of the 1.5 s window of `s`; nullopt if the window is not inside the audio.
inline std::optional<dsp::LogMelSpectrogram> sample_features(const PcmAudio& audio, const ManifestSample& s,
                                                             const dsp::CalibrationConfig& cal = {}) {
  const auto begin = static_cast<std::size_t>(std::llround(s.extract_start_s * audio.sample_rate));
  if (begin + dsp::kSegmentSamples > audio.frames()) return std::nullopt;
  std::vector<std::int16_t> mono(dsp::kSegmentSamples);
  for (int i = 0; i < dsp::kSegmentSamples; ++i) mono[i] = audio.interleaved[(begin + i) * audio.channels];
  return dsp::log_mel(std::span<const std::int16_t>(mono), cal);
}

namespace detail {

/// Runs fn(i) for i in [0, n) over worker threads; results are written by index.
template <class Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

class AudioCache {
 public:
  explicit AudioCache(AudioLoader loader) : loader_(std::move(loader)) {}
  const PcmAudio* get(const std::string& key) {
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, loader_(key)).first;
    return it->second ? &*it->second : nullptr;
  }

 private:
  AudioLoader loader_;
  std::map<std::string, std::optional<PcmAudio>> cache_;
};

}  // namespace detail

inline classify::BaselineModel train_from_manifest(const DatasetManifest& m, const AudioLoader& loader,
                                                   const dsp::CalibrationConfig& cal = {}) {
  detail::AudioCache cache(loader);
  std::vector<classify::LabeledSpectrogram> data;
  for (const auto* s : m.of(Split::Train)) {
    const auto* audio = cache.get(s->audio);
    if (!audio) throw DataError("missing audio: " + s->audio);
    auto spec = sample_features(*audio, *s, cal);
    if (!spec) throw DataError("sample outside audio: " + s->audio);
    data.push_back({std::move(*spec), s->label});
  }
  return classify::train_baseline(data);
}

struct Evaluation {
  MetricsReport report;
  ConfusionMatrix confusion;
  std::vector<ScoredPrediction> predictions;
};

inline Evaluation evaluate(const classify::BaselineModel& model, const DatasetManifest& m, Split split,
                           const AudioLoader& loader, const dsp::CalibrationConfig& cal = {}) {
  if (!model.trained()) throw ModelError("model is not trained");
  const auto chosen = m.of(split);
  if (chosen.empty()) throw DataError("split " + std::string(split_name(split)) + " is empty");

  detail::AudioCache cache(loader);
  std::vector<const PcmAudio*> audio(chosen.size());
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    audio[i] = cache.get(chosen[i]->audio);
    if (!audio[i] && std::find(missing.begin(), missing.end(), chosen[i]->audio) == missing.end())
      missing.push_back(chosen[i]->audio);
  }

  std::vector<std::optional<classify::Scores>> scored(chosen.size());
  detail::parallel_for(chosen.size(), [&](std::size_t i) {
    if (!audio[i]) return;
    if (auto spec = sample_features(*audio[i], *chosen[i], cal)) scored[i] = classify::classify(*spec, model).scores;
  });

  Evaluation ev;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (!scored[i]) {
      ++skipped;
      continue;
    }
    ev.predictions.push_back({chosen[i]->label, *scored[i]});
  }
  ev.report = metrics(ev.predictions);
  std::vector<int> p, t;
  for (const auto& s : ev.predictions) {
    p.push_back(classify::argmax(s.scores));
    t.push_back(s.truth);
  }
  ev.confusion = confusion(p, t);
  ev.report.skipped = skipped;
  ev.report.missing_audio = std::move(missing);
  return ev;
}

// ---- report files ----------------------------------------------------------

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (int k = 0; k < kNumClasses; ++k) {
    const auto& c = r.per_class[k];
    classes.push_back({{"class_index", k},
                       {"label", std::string(class_label(k))},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"auprc", c.auprc ? nlohmann::json(*c.auprc) : nlohmann::json(nullptr)},
                       {"support", c.support},
                       {"true_positives", c.true_pos},
                       {"predicted", c.predicted},
                       {"precision_undefined", c.precision_undefined},
                       {"recall_undefined", c.recall_undefined}});
  }
  return {{"classes", classes},
          {"M", r.total},
          {"M_TP", r.true_pos},
          {"C", r.classes_present},
          {"accuracy_micro", r.accuracy_micro},
          {"accuracy_macro", r.accuracy_macro},
          {"precision_macro", r.precision_macro},
          {"recall_macro", r.recall_macro},
          {"f1_macro", r.f1_macro},
          {"auprc_macro", r.auprc_macro ? nlohmann::json(*r.auprc_macro) : nlohmann::json(nullptr)},
          {"skipped", r.skipped},
          {"missing_audio", r.missing_audio}};
}

/// Per-class rows followed by macro and micro rows.
inline std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "class,precision,recall,f1,auprc,support\n";
  auto ap = [](const std::optional<double>& v) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(4);
    if (v) o << *v;
    return o.str();
  };
  for (int k = 0; k < kNumClasses; ++k) {
    const auto& c = r.per_class[k];
    out << class_label(k) << ',' << c.precision << ',' << c.recall << ',' << c.f1 << ',' << ap(c.auprc) << ','
        << c.support << '\n';
  }
  out << "macro," << r.precision_macro << ',' << r.recall_macro << ',' << r.f1_macro << ',' << ap(r.auprc_macro)
      << ',' << r.total << '\n';
  out << "micro," << r.accuracy_micro << ',' << r.accuracy_micro << ',' << r.accuracy_micro << ",," << r.total
      << '\n';
  return out.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  const auto pct = cm.row_percentages();
  out << "truth";
  for (int q = 0; q < kNumClasses; ++q) out << ',' << class_label(q);
  out << '\n';
  for (int p = 0; p < kNumClasses; ++p) {
    out << class_label(p);
    for (int q = 0; q < kNumClasses; ++q) out << ',' << cm.counts[p][q] << " (" << pct[p][q] << "%)";
    out << '\n';
  }
  return out.str();
}

inline void write_evaluation(const std::filesystem::path& dir, const Evaluation& ev) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.json") << to_json(ev.report).dump(2) << '\n';
  std::ofstream(dir / "metrics.csv") << metrics_csv(ev.report);
  std::ofstream(dir / "confusion.csv") << confusion_csv(ev.confusion);
}

}  // namespace urbansound::evalprep
