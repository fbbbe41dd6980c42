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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "test_util.hpp"
#include "urbansound/synth.hpp"

using namespace urbansound;
using namespace urbansound::synth;
using urbansound::testing::TempDir;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent geometry oracle for the concentric array: mic i sits at angle 60(i-1) degrees.
int oracle_delay(int mic, double azimuth_deg, double radius = 0.045) {
  if (mic == 0) return 0;
  const double theta = (mic - 1) * 60.0;
  return static_cast<int>(std::lround(-radius * std::cos((theta - azimuth_deg) * kPi / 180.0) / 343.0 * 44100.0));
}

// Time-domain cross-correlation argmax of channel c against channel 0 over [-lim, lim].
int xcorr_lag(const PcmAudio& a, int c, std::size_t from, std::size_t len, int lim = 12) {
  int best = 0;
  double best_v = -1e300;
  for (int lag = -lim; lag <= lim; ++lag) {
    double acc = 0.0;
    for (std::size_t n = from; n < from + len; ++n)
      acc += static_cast<double>(a.interleaved[n * a.channels]) * a.interleaved[(n + lag) * a.channels + c];
    if (acc > best_v) best_v = acc, best = lag;
  }
  return best;
}

double spl_at(const PcmAudio& audio, double t_s, int channel = 0) {
  const auto frames = dsp::frame_stream(audio, "x", Timestamp{});
  const auto idx = static_cast<std::size_t>(t_s * kSampleRate / kFrameSamples);
  return dsp::a_weight_spl(frames.at(idx), channel).level;
}

SceneSpec one_event(int cls, double azimuth, double spl, std::uint64_t seed = 1) {
  SceneSpec s;
  s.duration_s = 4.0;
  s.noise_floor_db = 30.0;
  s.seed = seed;
  s.events.push_back({0.5, 3.0, cls, azimuth, spl});
  return s;
}

}  // namespace

TEST(Synth, AzimuthZeroLeadsBySixSamples) {
  const auto g = doa::ArrayGeometry::concentric();
  const auto d = plane_wave_delays(g, 0.0);
  ASSERT_EQ(d.size(), 7u);
  EXPECT_EQ(d[0], 0);
  EXPECT_EQ(d[1], -6);  // mic at (0.045, 0) hears the wavefront first
  EXPECT_EQ(d[4], 6);
}

TEST(Synth, DelayTableMatchesGeometry) {
  const auto g = doa::ArrayGeometry::concentric();
  for (int az = 0; az < 360; ++az) {
    const auto d = plane_wave_delays(g, az);
    for (int m = 0; m < 7; ++m) ASSERT_EQ(d[m], oracle_delay(m, az)) << "az " << az << " mic " << m;
  }
}

TEST(Synth, GeneratedDelaysRecoveredByCrossCorrelation) {
  const auto g = doa::ArrayGeometry::concentric();
  for (double az : {0.0, 37.0, 90.0, 143.0, 200.0, 271.0, 333.0}) {
    const auto scene = synth_scene(one_event(static_cast<int>(SoundClass::Rain), az, 75.0), g);
    for (int c = 1; c < 7; ++c)
      EXPECT_EQ(xcorr_lag(scene.audio, c, kSampleRate, 8192), oracle_delay(c, az)) << "az " << az << " ch " << c;
  }
}

TEST(Synth, EveryTemplateHitsTargetLevel) {
  const auto g = doa::ArrayGeometry::concentric();
  for (int k = 0; k < kNumClasses; ++k) {
    const auto scene = synth_scene(one_event(k, 45.0, 80.0), g);
    EXPECT_FALSE(scene.truth["clipped"].get<bool>()) << class_label(k);
    EXPECT_NEAR(spl_at(scene.audio, 1.5), 80.0, 0.5) << class_label(k);
    EXPECT_NEAR(spl_at(scene.audio, 2.5), 80.0, 0.5) << class_label(k);
  }
  const auto tone = synth_scene(one_event(static_cast<int>(SoundClass::CarHorn), 0.0, 62.0), g);
  EXPECT_NEAR(spl_at(tone.audio, 2.0), 62.0, 0.5);
}

TEST(Synth, EmptySceneSitsAtFloor) {
  SceneSpec s;
  s.duration_s = 3.0;
  s.noise_floor_db = 35.0;
  s.seed = 4;
  const auto scene = synth_scene(s, doa::ArrayGeometry::concentric());
  EXPECT_EQ(scene.audio.channels, 7);
  EXPECT_TRUE(scene.truth["events"].empty());
  for (int c = 0; c < 7; ++c) EXPECT_NEAR(spl_at(scene.audio, 1.0, c), 35.0, 0.5) << c;
  // Floors are independent per channel.
  double cross = 0, e0 = 0, e1 = 0;
  for (std::size_t n = 0; n < scene.audio.frames(); ++n) {
    const double a = scene.audio.interleaved[n * 7], b = scene.audio.interleaved[n * 7 + 1];
    cross += a * b, e0 += a * a, e1 += b * b;
  }
  EXPECT_LT(std::abs(cross) / std::sqrt(e0 * e1), 0.05);
}

TEST(Synth, TemplatesOccupyDisjointBands) {
  std::vector<std::pair<int, int>> bands;
  for (const auto& t : default_templates()) {
    const auto p = t.period();
    std::vector<double> power(kPeriod / 2 + 1, 0.0);
    double total = 0.0;
    for (int k = 0; k <= kPeriod / 2; ++k) {
      double re = 0, im = 0;
      for (int n = 0; n < kPeriod; ++n) {
        re += p[n] * std::cos(2 * kPi * k * n / kPeriod);
        im -= p[n] * std::sin(2 * kPi * k * n / kPeriod);
      }
      power[k] = re * re + im * im;
      total += power[k];
    }
    // Smallest band holding 99% of the energy around the strongest line.
    int lo = static_cast<int>(std::max_element(power.begin(), power.end()) - power.begin()), hi = lo;
    double held = power[lo];
    while (held < 0.99 * total) {
      const double left = lo > 0 ? power[lo - 1] : -1, right = hi < kPeriod / 2 ? power[hi + 1] : -1;
      if (left >= right) held += power[--lo];
      else held += power[++hi];
    }
    bands.emplace_back(lo, hi);
    EXPECT_NEAR(std::sqrt(std::inner_product(p.begin(), p.end(), p.begin(), 0.0) / kPeriod), 1.0, 1e-12);
  }
  for (int a = 0; a < kNumClasses; ++a)
    for (int b = a + 1; b < kNumClasses; ++b)
      EXPECT_TRUE(bands[a].second < bands[b].first || bands[b].second < bands[a].first)
          << class_label(a) << " [" << bands[a].first << "," << bands[a].second << "] vs " << class_label(b) << " ["
          << bands[b].first << "," << bands[b].second << "]";
}

TEST(Synth, DeterministicForSeed) {
  const auto g = doa::ArrayGeometry::concentric();
  const auto a = synth_scene(one_event(3, 10.0, 70.0, 99), g);
  const auto b = synth_scene(one_event(3, 10.0, 70.0, 99), g);
  const auto c = synth_scene(one_event(3, 10.0, 70.0, 100), g);
  EXPECT_EQ(a.audio.interleaved, b.audio.interleaved);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_NE(a.audio.interleaved, c.audio.interleaved);
}

TEST(Synth, TruthAndWavAgree) {
  TempDir dir("synth");
  SceneSpec s;
  s.duration_s = 12.0;
  s.noise_floor_db = 32.0;
  s.seed = 17;
  s.start = *parse_rfc3339("2020-06-15T11:00:00Z");
  s.events = {{1.0, 3.0, static_cast<int>(SoundClass::Construction), 120.0, 72.0},
              {6.0, 4.0, static_cast<int>(SoundClass::Birds), 250.0, 66.0},
              {8.0, 3.0, static_cast<int>(SoundClass::Rain), 10.0, 60.0}};
  write_scene(synth_scene(s, doa::ArrayGeometry::concentric()), dir.path(), "day");
  const auto audio = read_wav(dir / "day.wav");
  nlohmann::json truth;
  std::ifstream(dir / "day.truth.json") >> truth;
  ASSERT_EQ(audio.channels, 7);
  EXPECT_NEAR(audio.duration_s(), 12.0, 1e-9);
  ASSERT_EQ(truth["events"].size(), 3u);
  EXPECT_EQ(truth["start"], "2020-06-15T11:00:00Z");
  EXPECT_EQ(truth["events"][1]["timestamp"], "2020-06-15T11:00:06Z");
  EXPECT_FALSE(truth["events"][0]["overlaps"].get<bool>());
  EXPECT_TRUE(truth["events"][1]["overlaps"].get<bool>());
  EXPECT_TRUE(truth["events"][2]["overlaps"].get<bool>());

  const auto& first = truth["events"][0];
  EXPECT_EQ(first["class"], "Construction");
  EXPECT_NEAR(spl_at(audio, first["start_s"].get<double>() + 1.0), first["spl_db"].get<double>(), 0.5);
  const auto delays = first["delays"].get<std::vector<int>>();
  for (int c = 1; c < 7; ++c) EXPECT_EQ(xcorr_lag(audio, c, 2 * kSampleRate, 8192), delays[c]);
}

TEST(Synth, SceneSpecJsonRoundTrip) {
  SceneSpec s = one_event(static_cast<int>(SoundClass::Alarm), 90.0, 75.5, 3);
  s.start = *parse_rfc3339("2021-03-01T08:30:00Z");
  const auto back = scene_from_json(to_json(s));
  EXPECT_EQ(back.duration_s, s.duration_s);
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.start, s.start);
  ASSERT_EQ(back.events.size(), 1u);
  EXPECT_EQ(back.events[0].class_index, 8);
  EXPECT_EQ(back.events[0].azimuth_deg, 90.0);
  EXPECT_EQ(to_json(s)["events"][0]["class"], "Alarm");

  auto by_index = nlohmann::json::parse(R"({"duration_s":5,"events":[{"start_s":1,"duration_s":2,"class_index":7,"spl_db":70}]})");
  EXPECT_EQ(scene_from_json(by_index).events[0].class_index, 7);
}

TEST(Synth, InvalidSpecsRejected) {
  const auto g = doa::ArrayGeometry::concentric();
  auto bad = one_event(0, 0.0, 70.0);
  bad.events[0].duration_s = 10.0;
  EXPECT_THROW(synth_scene(bad, g), ConfigError);
  bad = one_event(0, 360.0, 70.0);
  EXPECT_THROW(synth_scene(bad, g), ConfigError);
  bad = one_event(0, 0.0, 25.0);
  EXPECT_THROW(synth_scene(bad, g), ConfigError);
  EXPECT_THROW(scene_from_json(nlohmann::json::parse(
                   R"({"duration_s":5,"events":[{"start_s":1,"duration_s":2,"class":"Dog","spl_db":70}]})")),
               ConfigError);
  EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"events":[]})")), ConfigError);
}

TEST(Synth, MonoGeometryYieldsOneChannel) {
  doa::ArrayGeometry mono;
  mono.mics = {{0.0, 0.0}};
  const auto scene = synth_scene(one_event(2, 0.0, 70.0), mono);
  EXPECT_EQ(scene.audio.channels, 1);
  EXPECT_NEAR(spl_at(scene.audio, 2.0), 70.0, 0.5);
}

TEST(Synth, CorpusCoversEveryClassAndLocation) {
  CorpusConfig cfg;
  cfg.per_class = 2;
  cfg.span_s = 6.0;
  cfg.seed = 3;
  const auto corpus = synth_corpus(cfg);
  ASSERT_EQ(corpus.size(), 9u * 11u * 2u);
  std::map<std::pair<int, int>, int> seen;
  for (const auto& item : corpus) {
    const auto& rec = item.recording;
    ASSERT_EQ(rec.annotations.size(), 1u);
    const auto& a = rec.annotations[0];
    EXPECT_GE(a.end_s - a.start_s, cfg.span_s - 1e-9);
    EXPECT_GE(item.audio.duration_s(), a.end_s);
    EXPECT_EQ(item.audio.channels, 1);
    ++seen[{rec.location, a.class_index}];
  }
  for (int loc = 1; loc <= 9; ++loc)
    for (int k = 0; k < kNumClasses; ++k) EXPECT_EQ((seen[{loc, k}]), 2);

  const auto again = synth_corpus(cfg);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ASSERT_EQ(corpus[i].recording.name, again[i].recording.name);
    ASSERT_EQ(corpus[i].audio.interleaved, again[i].audio.interleaved);
  }
}

TEST(Synth, CorpusWritesAnnotationFiles) {
  TempDir dir("corpus");
  CorpusConfig cfg;
  cfg.span_s = 4.0;
  auto corpus = synth_corpus(cfg);
  write_corpus(corpus, dir.path());
  const auto& rec = corpus.front().recording;
  EXPECT_TRUE(std::filesystem::exists(rec.audio));
  const auto ann = dir.path() / "annotations" / ("L1_" + rec.name + ".csv");
  ASSERT_TRUE(std::filesystem::exists(ann));
  const auto loaded = evalprep::load_annotations(dir / "annotations", dir / "audio");
  ASSERT_EQ(loaded.size(), corpus.size());
  EXPECT_EQ(read_wav(rec.audio).interleaved, corpus.front().audio.interleaved);
}
