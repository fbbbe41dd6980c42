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

// Synthetic scenes with known classes, azimuths and levels.
//
// Every class template is periodic with a 2048-sample period, so its spectral
// lines fall on every fourth bin of the 8192-point analysis frame and any
// frame inside an event measures the same A-weighted level. Each class keeps
// its energy inside its own band of mel filters.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "urbansound/common.hpp"
#include "urbansound/doa.hpp"
#include "urbansound/dsp.hpp"
#include "urbansound/evalprep.hpp"
#include "urbansound/taxonomy.hpp"
#include "urbansound/wav.hpp"

namespace urbansound::synth {

inline constexpr int kPeriod = 2048;
inline constexpr double kFadeSeconds = 0.01;

enum class TemplateKind { Tone, Chirp, NoiseBurst, AmTone, ImpulseTrain };

/// Spectral line indices k are harmonics of fs / 2048 (about 21.5 Hz).
struct ClassTemplate {
  int class_index = 0;
  TemplateKind kind = TemplateKind::Tone;
  std::vector<int> lines;  // Tone
  int k_lo = 0, k_hi = 0;  // Chirp, NoiseBurst, ImpulseTrain
  int step = 1;            // ImpulseTrain line spacing; clicks repeat every 2048 / step samples
  int carrier = 0, modulation = 0;  // AmTone
  double depth = 0.8;

  /// One period at unit RMS.
  std::vector<double> period() const {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    std::vector<double> p(kPeriod, 0.0);
    auto add_line = [&](int k, double amp, double phase) {
      for (int n = 0; n < kPeriod; ++n) p[n] += amp * std::sin(two_pi * k * n / kPeriod + phase);
    };
    switch (kind) {
      case TemplateKind::Tone:
        for (std::size_t j = 0; j < lines.size(); ++j) add_line(lines[j], 1.0, j * std::numbers::pi / 3.0);
        break;
      case TemplateKind::AmTone:
        for (int n = 0; n < kPeriod; ++n)
          p[n] = (1.0 + depth * std::cos(two_pi * modulation * n / kPeriod)) * std::sin(two_pi * carrier * n / kPeriod);
        break;
      case TemplateKind::Chirp:
        for (int n = 0; n < kPeriod; ++n) {
          const double cycles = k_lo * static_cast<double>(n) / kPeriod +
                                (k_hi - k_lo) * static_cast<double>(n) * n / (2.0 * kPeriod * kPeriod);
          p[n] = std::sin(two_pi * cycles);
        }
        break;
      case TemplateKind::NoiseBurst: {
        std::mt19937_64 rng(0x5eed0000u + class_index);
        std::uniform_real_distribution<double> phase(0.0, two_pi);
        for (int k = k_lo; k <= k_hi; ++k) add_line(k, 1.0, phase(rng));
        break;
      }
      case TemplateKind::ImpulseTrain:
        for (int k = (k_lo + step - 1) / step * step; k <= k_hi; k += step)
          add_line(k, 1.0, std::numbers::pi / 2.0 - two_pi * k * 0.5);
        break;
    }
    double ms = 0.0;
    for (double v : p) ms += v * v;
    const double rms = std::sqrt(ms / kPeriod);
    for (double& v : p) v /= rms;
    return p;
  }
};

/// One template per class, each confined to its own group of mel filters.
inline const std::array<ClassTemplate, kNumClasses>& default_templates() {
  static const std::array<ClassTemplate, kNumClasses> table = [] {
    std::array<ClassTemplate, kNumClasses> t{};
    auto at = [&](SoundClass c) -> ClassTemplate& {
      auto& x = t[static_cast<int>(c)];
      x.class_index = static_cast<int>(c);
      return x;
    };
    auto& vehicle = at(SoundClass::Vehicle);
    vehicle.kind = TemplateKind::AmTone, vehicle.carrier = 48, vehicle.modulation = 4;
    auto& voice = at(SoundClass::HumanVoice);
    voice.kind = TemplateKind::AmTone, voice.carrier = 62, voice.modulation = 4;
    auto& ambient = at(SoundClass::Ambient);
    ambient.kind = TemplateKind::NoiseBurst, ambient.k_lo = 73, ambient.k_hi = 86;
    auto& music = at(SoundClass::Music);
    music.kind = TemplateKind::Tone, music.lines = {94, 101, 108};
    auto& shout = at(SoundClass::Shout);
    shout.kind = TemplateKind::AmTone, shout.carrier = 126, shout.modulation = 6;
    auto& alarm = at(SoundClass::Alarm);
    alarm.kind = TemplateKind::Chirp, alarm.k_lo = 144, alarm.k_hi = 168;
    auto& construction = at(SoundClass::Construction);
    construction.kind = TemplateKind::NoiseBurst, construction.k_lo = 178, construction.k_hi = 206;
    auto& horn = at(SoundClass::CarHorn);
    horn.kind = TemplateKind::Tone, horn.lines = {220, 234, 248};
    auto& birds = at(SoundClass::Birds);
    birds.kind = TemplateKind::Chirp, birds.k_lo = 266, birds.k_hi = 304;
    auto& rain = at(SoundClass::Rain);
    rain.kind = TemplateKind::NoiseBurst, rain.k_lo = 321, rain.k_hi = 387;
    auto& impact = at(SoundClass::ImpactSound);
    impact.kind = TemplateKind::ImpulseTrain, impact.k_lo = 406, impact.k_hi = 488, impact.step = 8;
    return t;
  }();
  return table;
}

/// A-weighted mean square of the periodic extension of `period`, measured on one analysis frame.
inline double template_mean_square(const std::vector<double>& period) {
  std::vector<double> frame(kFrameSamples);
  for (int i = 0; i < kFrameSamples; ++i) frame[i] = period[i % kPeriod];
  return dsp::AWeighting::frame_default().mean_square(frame);
}

/// Linear gain that brings `period` to `spl_db` under `cal`.
inline double gain_for_level(const std::vector<double>& period, double spl_db, const dsp::CalibrationConfig& cal) {
  const double target = 0.5 * std::pow(10.0, (spl_db - cal.full_scale_spl_db) / 10.0);
  return std::sqrt(target / template_mean_square(period));
}

/// Standard deviation of white noise whose A-weighted level is `floor_db`.
inline double floor_sigma(double floor_db, const dsp::CalibrationConfig& cal) {
  double acc = 0.0;
  for (int k = 0; k <= kFrameSamples / 2; ++k) {
    const double db = dsp::a_weighting_db(static_cast<double>(k) * kSampleRate / kFrameSamples);
    if (!std::isfinite(db)) continue;
    acc += ((k == 0 || k == kFrameSamples / 2) ? 1.0 : 2.0) * std::pow(10.0, db / 10.0);
  }
  const double target = 0.5 * std::pow(10.0, (floor_db - cal.full_scale_spl_db) / 10.0);
  return std::sqrt(target * kFrameSamples / acc);
}

/// Integer delay (samples) of each channel relative to the reference for a far-field source.
inline std::vector<int> plane_wave_delays(const doa::ArrayGeometry& g, double azimuth_deg,
                                          const doa::DoaConfig& cfg = {}) {
  const double a = azimuth_deg * std::numbers::pi / 180.0;
  const auto& ref = g.mics[g.reference];
  std::vector<int> out;
  for (const auto& m : g.mics) {
    const double proj = (m.x - ref.x) * std::cos(a) + (m.y - ref.y) * std::sin(a);
    out.push_back(static_cast<int>(std::lround(-proj / cfg.speed_of_sound * cfg.sample_rate)));
  }
  return out;
}

// ---- scenes ----------------------------------------------------------------

struct SceneEvent {
  double start_s = 0.0;
  double duration_s = 0.0;
  int class_index = 0;
  double azimuth_deg = 0.0;
  double spl_db = 0.0;
};

struct SceneSpec {
  double duration_s = 0.0;
  double noise_floor_db = 35.0;
  std::vector<SceneEvent> events;
  std::uint64_t seed = 0;
  std::optional<Timestamp> start;  // wall-clock time of sample 0, if any

  void validate() const {
    if (!(duration_s > 0.0)) throw ConfigError("scene duration must be positive");
    for (const auto& e : events) {
      if (!(e.start_s >= 0.0 && e.duration_s > 0.0 && e.start_s + e.duration_s <= duration_s + 1e-9))
        throw ConfigError("event outside scene duration");
      if (!(e.azimuth_deg >= 0.0 && e.azimuth_deg < 360.0)) throw ConfigError("azimuth must be in [0, 360)");
      if (!(e.spl_db > noise_floor_db)) throw ConfigError("event level must exceed the noise floor");
      if (e.class_index < 0 || e.class_index >= kNumClasses) throw ConfigError("unknown event class");
    }
  }
};

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events)
    events.push_back({{"start_s", e.start_s},
                      {"duration_s", e.duration_s},
                      {"class", std::string(class_label(e.class_index))},
                      {"azimuth_deg", e.azimuth_deg},
                      {"spl_db", e.spl_db}});
  nlohmann::json j{{"duration_s", s.duration_s}, {"noise_floor_db", s.noise_floor_db}, {"seed", s.seed},
                   {"events", events}};
  if (s.start) j["start"] = format_rfc3339(*s.start);
  return j;
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    s.duration_s = j.at("duration_s").get<double>();
    s.noise_floor_db = j.value("noise_floor_db", 35.0);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("start")) {
      s.start = parse_rfc3339(j.at("start").get<std::string>());
      if (!s.start) throw ConfigError("scene start is not RFC 3339");
    }
    for (const auto& e : j.value("events", nlohmann::json::array())) {
      SceneEvent ev;
      ev.start_s = e.at("start_s").get<double>();
      ev.duration_s = e.at("duration_s").get<double>();
      if (e.contains("class_index")) {
        ev.class_index = e.at("class_index").get<int>();
      } else {
        const auto idx = class_index(e.at("class").get<std::string>());
        if (!idx) throw ConfigError("unknown class " + e.at("class").get<std::string>());
        ev.class_index = *idx;
      }
      ev.azimuth_deg = e.value("azimuth_deg", 0.0);
      ev.spl_db = e.at("spl_db").get<double>();
      s.events.push_back(ev);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene spec " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

struct Scene {
  PcmAudio audio;
  nlohmann::json truth;
};

namespace detail {

inline std::int16_t to_pcm(double v, bool& clipped) {
  const double s = std::round(v * 32768.0);
  if (s > 32767.0 || s < -32768.0) clipped = true;
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

inline double fade(std::int64_t n, std::int64_t length, std::int64_t ramp) {
  if (ramp <= 0) return 1.0;
  const std::int64_t edge = std::min(n, length - 1 - n);
  if (edge >= ramp) return 1.0;
  return 0.5 - 0.5 * std::cos(std::numbers::pi * (edge + 0.5) / ramp);
}

}  // namespace detail

/// Renders `spec` for `geom`; a geometry with one microphone yields mono audio.
inline Scene synth_scene(const SceneSpec& spec, const doa::ArrayGeometry& geom, const dsp::CalibrationConfig& cal = {},
                         const doa::DoaConfig& doa_cfg = {}) {
  spec.validate();
  cal.validate();
  const int channels = static_cast<int>(geom.mics.size());
  if (channels < 1) throw GeometryError("geometry has no microphones");
  const auto total = static_cast<std::int64_t>(std::llround(spec.duration_s * kSampleRate));

  std::vector<std::vector<double>> mix(channels, std::vector<double>(total, 0.0));
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, floor_sigma(spec.noise_floor_db, cal));
  for (auto& ch : mix)
    for (auto& v : ch) v = gauss(rng);

  nlohmann::json events = nlohmann::json::array();
  const auto ramp = static_cast<std::int64_t>(std::llround(kFadeSeconds * kSampleRate));
  for (std::size_t e = 0; e < spec.events.size(); ++e) {
    const auto& ev = spec.events[e];
    const auto& tmpl = default_templates()[ev.class_index];
    const auto period = tmpl.period();
    const double gain = gain_for_level(period, ev.spl_db, cal);
    const auto delays = plane_wave_delays(geom, ev.azimuth_deg, doa_cfg);
    const auto n0 = static_cast<std::int64_t>(std::llround(ev.start_s * kSampleRate));
    const auto len = std::min<std::int64_t>(std::llround(ev.duration_s * kSampleRate), total - n0);
    for (int c = 0; c < channels; ++c) {
      for (std::int64_t i = 0; i < len; ++i) {
        const std::int64_t n = n0 + i + delays[c];
        if (n < 0 || n >= total) continue;
        mix[c][n] += gain * period[i % kPeriod] * detail::fade(i, len, ramp);
      }
    }
    bool overlaps = false;
    for (std::size_t o = 0; o < spec.events.size(); ++o) {
      if (o == e) continue;
      const auto& other = spec.events[o];
      if (other.start_s < ev.start_s + ev.duration_s && ev.start_s < other.start_s + other.duration_s) overlaps = true;
    }
    nlohmann::json item{{"index", e},
                        {"start_s", ev.start_s},
                        {"duration_s", ev.duration_s},
                        {"class_index", ev.class_index},
                        {"class", std::string(class_label(ev.class_index))},
                        {"azimuth_deg", ev.azimuth_deg},
                        {"spl_db", ev.spl_db},
                        {"gain", gain},
                        {"delays", delays},
                        {"overlaps", overlaps}};
    if (spec.start) item["timestamp"] = format_rfc3339(*spec.start + std::chrono::microseconds(std::llround(ev.start_s * 1e6)));
    events.push_back(std::move(item));
  }

  Scene out;
  out.audio.sample_rate = kSampleRate;
  out.audio.channels = channels;
  out.audio.interleaved.resize(static_cast<std::size_t>(total) * channels);
  bool clipped = false;
  for (std::int64_t n = 0; n < total; ++n)
    for (int c = 0; c < channels; ++c) out.audio.interleaved[n * channels + c] = detail::to_pcm(mix[c][n], clipped);

  out.truth = {{"sample_rate", kSampleRate},
               {"channels", channels},
               {"duration_s", spec.duration_s},
               {"noise_floor_db", spec.noise_floor_db},
               {"seed", spec.seed},
               {"clipped", clipped},
               {"events", events}};
  if (spec.start) out.truth["start"] = format_rfc3339(*spec.start);
  return out;
}

/// Writes <dir>/<stem>.wav and <dir>/<stem>.truth.json.
inline void write_scene(const Scene& scene, const std::filesystem::path& dir, const std::string& stem = "scene") {
  std::filesystem::create_directories(dir);
  write_wav(dir / (stem + ".wav"), scene.audio);
  std::ofstream(dir / (stem + ".truth.json")) << scene.truth.dump(2) << '\n';
}

// ---- corpus ----------------------------------------------------------------

struct CorpusConfig {
  int per_class = 1;        // recordings per class per location
  double span_s = 10.0;     // annotated length of each recording
  double lead_s = 0.5;      // floor-only audio before and after the span
  double min_spl = 55.0, max_spl = 80.0;
  double min_floor = 30.0, max_floor = 40.0;
  std::uint64_t seed = 0;
};

struct CorpusItem {
  evalprep::AnnotatedRecording recording;
  PcmAudio audio;
};

/// Mono labelled recordings: every class at every location L1..L9.
inline std::vector<CorpusItem> synth_corpus(const CorpusConfig& cfg, const dsp::CalibrationConfig& cal = {}) {
  if (cfg.per_class < 1) throw ConfigError("per-class count must be >= 1");
  if (!(cfg.span_s > 0.0) || cfg.lead_s < 0.0) throw ConfigError("bad corpus span");
  std::vector<CorpusItem> out;
  doa::ArrayGeometry mono;
  mono.mics = {{0.0, 0.0}};
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> spl(cfg.min_spl, cfg.max_spl), floor(cfg.min_floor, cfg.max_floor);
  for (int loc = 1; loc <= evalprep::kNumLocations; ++loc) {
    for (int k = 0; k < kNumClasses; ++k) {
      for (int r = 0; r < cfg.per_class; ++r) {
        SceneSpec s;
        s.duration_s = cfg.span_s + 2.0 * cfg.lead_s;
        s.noise_floor_db = floor(rng);
        s.seed = rng();
        s.events.push_back({cfg.lead_s, cfg.span_s, k, 0.0, spl(rng)});
        CorpusItem item;
        item.audio = synth_scene(s, mono, cal).audio;
        auto& rec = item.recording;
        char name[64];
        std::snprintf(name, sizeof name, "l%d_%s_%03d", loc, std::string(class_label(k)).c_str(), r);
        rec.name = name;
        rec.audio = rec.name + ".wav";
        rec.location = loc;
        rec.annotations.push_back({cfg.lead_s, cfg.lead_s + cfg.span_s, k});
        out.push_back(std::move(item));
      }
    }
  }
  return out;
}

/// Writes <dir>/audio/<name>.wav and <dir>/annotations/L<k>_<name>.csv; recording paths are updated.
inline void write_corpus(std::vector<CorpusItem>& corpus, const std::filesystem::path& dir) {
  const auto audio_dir = dir / "audio", ann_dir = dir / "annotations";
  std::filesystem::create_directories(audio_dir);
  std::filesystem::create_directories(ann_dir);
  for (auto& item : corpus) {
    auto& rec = item.recording;
    rec.audio = audio_dir / (rec.name + ".wav");
    write_wav(rec.audio, item.audio);
    std::ofstream(ann_dir / ("L" + std::to_string(rec.location) + "_" + rec.name + ".csv"))
        << evalprep::annotation_csv(rec.annotations);
  }
}

/// In-memory loader over a corpus, keyed by the recording's audio path.
inline evalprep::AudioLoader corpus_loader(const std::vector<CorpusItem>& corpus) {
  auto index = std::make_shared<std::map<std::string, const PcmAudio*>>();
  for (const auto& item : corpus) (*index)[item.recording.audio.string()] = &item.audio;
  return [index](const std::string& key) -> std::optional<PcmAudio> {
    const auto it = index->find(key);
    if (it == index->end()) return std::nullopt;
    return *it->second;
  };
}

}  // namespace urbansound::synth
