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

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "urbansound/evalprep.hpp"
#include "urbansound/synth.hpp"

using namespace urbansound;
using namespace urbansound::evalprep;
using urbansound::testing::TempDir;

using urbansound::testing::brute_ap;

namespace {

constexpr int kAmbient = static_cast<int>(SoundClass::Ambient);

AnnotatedRecording rec(const std::string& name, int loc, std::vector<Annotation> anns) {
  AnnotatedRecording r;
  r.name = name;
  r.audio = name + ".wav";
  r.location = loc;
  r.annotations = std::move(anns);
  return r;
}

// Several recordings for every (location, class), plus mixed recordings at L7..L9.
std::vector<AnnotatedRecording> policy_corpus() {
  std::vector<AnnotatedRecording> out;
  for (int loc = 1; loc <= 9; ++loc)
    for (int k = 0; k < kNumClasses; ++k)
      for (int r = 0; r < 5; ++r)
        out.push_back(rec("l" + std::to_string(loc) + "_" + std::to_string(k) + "_" + std::to_string(r), loc,
                          {{1.0, 11.0, k}}));
  for (int loc = 7; loc <= 9; ++loc) {
    out.push_back(rec("mixed" + std::to_string(loc), loc, {{0.0, 300.0, kAmbient}, {300.0, 310.0, 8}}));
    for (int r = 0; r < 4; ++r)
      out.push_back(rec("long" + std::to_string(loc) + "_" + std::to_string(r), loc, {{0.0, 400.0, kAmbient}}));
  }
  return out;
}

}  // namespace

// ---- segmentation ----------------------------------------------------------

TEST(Segmentation, CountLawOnTenthSecondGrid) {
  for (int tenths = 0; tenths <= 600; ++tenths) {
    const std::size_t expected = tenths < 40 ? 0 : static_cast<std::size_t>((tenths - 40) / 20 + 1);
    ASSERT_EQ(segment_count(tenths / 10.0), expected) << tenths / 10.0 << " s";
  }
}

TEST(Segmentation, Examples) {
  EXPECT_EQ(segment_starts(10.0), (std::vector<double>{0, 2, 4, 6}));
  EXPECT_EQ(segment_count(4.0), 1u);
  EXPECT_EQ(segment_count(3.9), 0u);
  const auto segs = segment(rec("r", 1, {{5.0, 15.0, 3}, {20.0, 23.9, 4}, {30.0, 35.0, 2}}));
  ASSERT_EQ(segs.size(), 5u);
  EXPECT_DOUBLE_EQ(segs[0].start_s, 5.0);
  EXPECT_DOUBLE_EQ(segs[3].start_s, 11.0);
  EXPECT_EQ(segs[4].class_index, 2);
  EXPECT_DOUBLE_EQ(segs[4].start_s, 30.0);
}

TEST(Extraction, OffsetsAreUniform) {
  std::mt19937_64 rng(123);
  std::vector<double> x(20000);
  for (auto& v : x) {
    v = extract_offset(rng);
    ASSERT_GE(v, 0.0);
    ASSERT_LT(v, kMaxExtractOffset);
  }
  std::sort(x.begin(), x.end());
  double d = 0.0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = x[i] / kMaxExtractOffset;
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  // Kolmogorov-Smirnov: p > 0.01 iff D < 1.628 / sqrt(n) (asymptotic).
  EXPECT_LT(d, 1.628 / std::sqrt(n));
}

// ---- manifest --------------------------------------------------------------

TEST(Manifest, EmptyInputGivesEmptyManifest) { EXPECT_TRUE(build_manifest({}, {}, 1).samples.empty()); }

TEST(Manifest, WindowsStayInsideSegments) {
  const auto m = build_manifest(policy_corpus(), {}, 42);
  ASSERT_FALSE(m.samples.empty());
  std::set<std::pair<std::string, double>> seen;
  for (const auto& s : m.samples) {
    EXPECT_GE(s.extract_start_s, s.segment_start_s);
    EXPECT_LE(s.extract_start_s + s.duration_s, s.segment_start_s + kSegmentSeconds + 1e-12);
    EXPECT_DOUBLE_EQ(s.duration_s, 1.5);
    EXPECT_TRUE(seen.insert({s.audio, s.segment_start_s}).second) << "sample in two splits: " << s.recording;
  }
}

TEST(Manifest, PolicyTable) {
  const auto m = build_manifest(policy_corpus(), {}, 42);
  std::map<std::string, std::set<Split>> per_recording;
  std::map<Split, std::set<int>> locations;
  std::map<Split, std::set<std::pair<int, int>>> loc_class;
  for (const auto& s : m.samples) {
    per_recording[s.recording].insert(s.split);
    locations[s.split].insert(s.location);
    loc_class[s.split].insert({s.location, s.label});
  }
  for (const auto& [name, splits] : per_recording) EXPECT_EQ(splits.size(), 1u) << name;

  EXPECT_EQ(locations[Split::Train], (std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(locations[Split::Val], (std::set<int>{1, 3, 4, 5, 6}));
  EXPECT_EQ(locations[Split::Test], (std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}));
  for (int loc = 1; loc <= 6; ++loc)
    for (int k = 0; k < kNumClasses; ++k) EXPECT_TRUE(loc_class[Split::Train].count({loc, k})) << loc << ' ' << k;
  for (const auto& [loc, cls] : loc_class[Split::Train])
    if (loc >= 7) {
      EXPECT_EQ(cls, kAmbient) << "L" << loc;
    }

  // Mixed L7..L9 recordings go to test entirely, ambient part included.
  for (int loc = 7; loc <= 9; ++loc) EXPECT_EQ(per_recording["mixed" + std::to_string(loc)], std::set<Split>{Split::Test});

  // Ambient training time at L7..L9 is capped at ten minutes per location.
  std::map<int, std::set<std::pair<std::string, double>>> train_windows;
  for (const auto& s : m.samples)
    if (s.split == Split::Train && s.location >= 7) train_windows[s.location].insert({s.recording, s.segment_start_s});
  for (int loc = 7; loc <= 9; ++loc) {
    ASSERT_TRUE(train_windows.count(loc));
    // Each capped span of length L contributes floor((L-4)/2)+1 windows; 600 s in total gives at most 299 + pieces.
    EXPECT_LE(train_windows[loc].size(), 300u) << "L" << loc;
  }
}

TEST(Manifest, AmbientTrainingCapTruncatesSpans) {
  SplitPolicy all_train;
  all_train.ambient_cycle = {Split::Train};
  const auto m = build_manifest({rec("a", 8, {{0.0, 400.0, kAmbient}}), rec("b", 8, {{10.0, 410.0, kAmbient}}),
                                 rec("c", 8, {{0.0, 400.0, kAmbient}})},
                                all_train, 5);
  std::map<std::string, int> windows;
  double last_b = 0.0;
  for (const auto& s : m.samples) {
    ++windows[s.recording];
    if (s.recording == "b") last_b = std::max(last_b, s.segment_start_s);
  }
  EXPECT_EQ(windows["a"], 199);  // full 400 s
  EXPECT_EQ(windows["b"], 99);   // truncated to the remaining 200 s
  EXPECT_EQ(windows.count("c"), 0u);
  EXPECT_DOUBLE_EQ(last_b + kSegmentSeconds, 210.0);
}

TEST(Manifest, NonAmbientAtOutdoorLocationsNeverTrains) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = build_manifest(policy_corpus(), {}, seed);
    for (const auto& s : m.samples)
      if (s.location >= 7 && s.label != kAmbient) {
        ASSERT_EQ(s.split, Split::Test) << s.recording;
      }
  }
}

TEST(Manifest, DeterministicForSeed) {
  const auto a = to_json(build_manifest(policy_corpus(), {}, 7));
  const auto b = to_json(build_manifest(policy_corpus(), {}, 7));
  const auto c = to_json(build_manifest(policy_corpus(), {}, 8));
  EXPECT_EQ(a.dump(), b.dump());
  EXPECT_NE(a.dump(), c.dump());
  auto shuffled = policy_corpus();
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(to_json(build_manifest(shuffled, {}, 7)).dump(), a.dump());
}

TEST(Manifest, JsonRoundTrip) {
  const auto m = build_manifest(policy_corpus(), {}, 3);
  const auto back = manifest_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.rng_seed, 3u);
  ASSERT_EQ(back.samples.size(), m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    EXPECT_EQ(back.samples[i].extract_start_s, m.samples[i].extract_start_s);
    EXPECT_EQ(back.samples[i].split, m.samples[i].split);
    EXPECT_EQ(back.samples[i].label, m.samples[i].label);
    EXPECT_EQ(back.samples[i].location, m.samples[i].location);
  }
  EXPECT_THROW(manifest_from_json(nlohmann::json::parse(R"({"samples":[]})")), DataError);
}

TEST(Manifest, SharedAudioInTwoSplitsIsAnError) {
  // The same file annotated twice at L7: once ambient-only, once with an alarm.
  bool raised = false;
  for (std::uint64_t seed = 0; seed < 16 && !raised; ++seed) {
    auto a = rec("a", 7, {{0.0, 20.0, kAmbient}});
    auto b = rec("b", 7, {{0.0, 20.0, 8}});
    a.audio = b.audio = "shared.wav";
    const auto splits = assign_splits({a, b}, {}, seed);
    if (splits[0] == splits[1]) continue;
    EXPECT_THROW(build_manifest({a, b}, {}, seed), DataError);
    raised = true;
  }
  EXPECT_TRUE(raised);
}

TEST(Annotations, CsvParsingAndValidation) {
  std::istringstream good("start_s,end_s,label\r\n0.5,4.5,Alarm\r\n5,12.25,HumanVoice\n");
  const auto anns = parse_annotation_csv(good, "x.csv");
  ASSERT_EQ(anns.size(), 2u);
  EXPECT_EQ(anns[0].class_index, 8);
  EXPECT_DOUBLE_EQ(anns[1].end_s, 12.25);
  std::istringstream bad_label("start_s,end_s,label\n0,4,Dog\n");
  EXPECT_THROW(parse_annotation_csv(bad_label, "x.csv"), DataError);
  std::istringstream bad_num("start_s,end_s,label\nzero,4,Rain\n");
  EXPECT_THROW(parse_annotation_csv(bad_num, "x.csv"), DataError);
  EXPECT_THROW(rec("r", 1, {{5.0, 5.0, 1}}).validate(), DataError);
  EXPECT_THROW(rec("r", 10, {}).validate(), DataError);
  EXPECT_THROW(rec("r", 1, {{0.0, 12.0, 1}}).validate(10.0), DataError);

  std::istringstream round(annotation_csv({{1234.5678, 2000.125, 5}}));
  EXPECT_DOUBLE_EQ(parse_annotation_csv(round, "r")[0].start_s, 1234.5678);
}

TEST(Annotations, DirectoryLoaderFollowsNamingScheme) {
  TempDir dir("ann");
  std::filesystem::create_directories(dir / "ann");
  std::ofstream(dir / "ann/L3_street.csv") << "start_s,end_s,label\n0,8,Vehicle\n";
  std::ofstream(dir / "ann/notes.txt") << "ignored";
  std::ofstream(dir / "ann/L0_bad.csv") << "start_s,end_s,label\n";
  const auto recs = load_annotations(dir / "ann", dir / "audio");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].location, 3);
  EXPECT_EQ(recs[0].name, "street");
  EXPECT_EQ(recs[0].audio, dir / "audio" / "street.wav");
  EXPECT_THROW(load_annotations(dir / "missing", dir / "audio"), ConfigError);
}

// ---- metrics ---------------------------------------------------------------

TEST(Metrics, ToyConfusion) {
  std::vector<int> truth(20), pred(20);
  for (int i = 0; i < 20; ++i) truth[i] = i < 10 ? 0 : 1;
  for (int i = 0; i < 20; ++i) pred[i] = truth[i];
  pred[0] = pred[1] = 1;  // 8/10 correct for class 0
  pred[10] = 0;           // 9/10 correct for class 1
  const auto cm = confusion(pred, truth);
  const auto pct = cm.row_percentages();
  EXPECT_EQ(pct[0][0], 80);
  EXPECT_EQ(pct[0][1], 20);
  EXPECT_EQ(pct[1][0], 10);
  EXPECT_EQ(pct[1][1], 90);

  const auto r = metrics(cm);
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 8.0 / 9.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.8);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 9.0 / 11.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 0.9);
  EXPECT_DOUBLE_EQ(r.accuracy_micro, 0.85);
  EXPECT_DOUBLE_EQ(r.accuracy_macro, 0.85);
  EXPECT_EQ(r.classes_present, 2);
  EXPECT_TRUE(r.per_class[5].precision_undefined);
  EXPECT_TRUE(r.per_class[5].recall_undefined);
  EXPECT_EQ(r.per_class[5].precision, 0.0);
}

TEST(Metrics, DegenerateMatrices) {
  std::vector<int> labels;
  for (int k = 0; k < kNumClasses; ++k)
    for (int i = 0; i < 3; ++i) labels.push_back(k);
  const auto perfect = confusion(labels, labels);
  for (int k = 0; k < kNumClasses; ++k) EXPECT_EQ(perfect.row_percentages()[k][k], 100);
  const auto r = metrics(perfect);
  EXPECT_EQ(r.accuracy_micro, 1.0);
  EXPECT_EQ(r.accuracy_macro, 1.0);
  EXPECT_EQ(r.f1_macro, 1.0);

  const std::vector<int> all_rain(labels.size(), 5);
  const auto col = confusion(all_rain, labels).row_percentages();
  for (int k = 0; k < kNumClasses; ++k) EXPECT_EQ(col[k][5], 100);

  EXPECT_THROW(confusion(std::vector<int>{1, 2}, std::vector<int>{1}), SizeError);
  EXPECT_THROW(confusion(std::vector<int>{11}, std::vector<int>{1}), DataError);
}

TEST(Metrics, PercentagesRoundHalfUp) {
  std::vector<int> truth(8, 0), pred{0, 0, 0, 1, 1, 1, 1, 1};  // 37.5% and 62.5%
  const auto pct = confusion(pred, truth).row_percentages();
  EXPECT_EQ(pct[0][0], 38);
  EXPECT_EQ(pct[0][1], 63);
}

// Per-sample tally oracle, evaluated on random prediction sets.
TEST(Metrics, MatchBruteForceTally) {
  std::mt19937_64 rng(606);
  for (int set = 0; set < 1000; ++set) {
    std::uniform_int_distribution<int> size(1, 150), width(1, kNumClasses);
    const int n = size(rng), used = width(rng);
    std::uniform_int_distribution<int> label(0, used - 1), tick(0, 10);
    std::vector<ScoredPrediction> preds(n);
    for (auto& p : preds) {
      p.truth = label(rng);
      for (auto& v : p.scores) v = tick(rng) / 10.0;  // coarse grid forces tied scores
    }
    const auto r = metrics(preds);

    double acc = 0, psum = 0, rsum = 0, fsum = 0, apsum = 0;
    int present = 0;
    std::int64_t tp_total = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      std::int64_t tp = 0, fp = 0, fn = 0;
      std::vector<double> s;
      std::vector<std::uint8_t> pos;
      for (const auto& p : preds) {
        int best = 0;
        for (int q = 1; q < kNumClasses; ++q)
          if (p.scores[q] > p.scores[best]) best = q;
        if (best == k && p.truth == k) ++tp;
        if (best == k && p.truth != k) ++fp;
        if (best != k && p.truth == k) ++fn;
        s.push_back(p.scores[k]);
        pos.push_back(p.truth == k);
      }
      tp_total += tp;
      const double P = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double R = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
      const double F = P + R > 0 ? 2.0 * P * R / (P + R) : 0.0;
      const auto& c = r.per_class[k];
      ASSERT_EQ(c.precision, P) << "set " << set << " class " << k;
      ASSERT_EQ(c.recall, R);
      ASSERT_EQ(c.f1, F);
      ASSERT_EQ(c.support, tp + fn);
      ASSERT_LE(c.f1, std::max(c.precision, c.recall) + 1e-12);  // harmonic mean, up to rounding
      if (tp + fn > 0) {
        ++present;
        acc += R, psum += P, rsum += R, fsum += F;
        const double ap = brute_ap(s, pos);
        ASSERT_TRUE(c.auprc.has_value());
        ASSERT_NEAR(*c.auprc, ap, 1e-9);
        apsum += ap;
      } else {
        ASSERT_FALSE(c.auprc.has_value());
      }
    }
    ASSERT_EQ(r.total, n);
    ASSERT_EQ(r.true_pos, tp_total);
    ASSERT_EQ(r.classes_present, present);
    ASSERT_EQ(r.accuracy_micro, static_cast<double>(tp_total) / n);
    ASSERT_EQ(r.accuracy_macro, acc / present);
    ASSERT_EQ(r.precision_macro, psum / present);
    ASSERT_EQ(r.recall_macro, rsum / present);
    ASSERT_EQ(r.f1_macro, fsum / present);
    ASSERT_NEAR(*r.auprc_macro, apsum / present, 1e-9);
  }
}

TEST(Metrics, RandomRankingApIsPrevalence) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(10000);
  std::vector<std::uint8_t> pos(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    pos[i] = i % 2;
  }
  EXPECT_NEAR(*average_precision(s, pos), 0.5, 0.05);
  EXPECT_FALSE(average_precision(s, std::vector<std::uint8_t>(s.size(), 0)).has_value());
  EXPECT_DOUBLE_EQ(*average_precision(std::vector<double>{0.9, 0.8, 0.1}, std::vector<std::uint8_t>{1, 1, 0}), 1.0);
  // A tie between a positive and a negative counts as one threshold.
  EXPECT_DOUBLE_EQ(*average_precision(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0}), 0.5);
}

TEST(Metrics, ReportFiles) {
  std::vector<ScoredPrediction> preds;
  for (int k = 0; k < kNumClasses; ++k) {
    ScoredPrediction p;
    p.truth = k;
    p.scores.fill(0.0);
    p.scores[k] = 1.0;
    preds.push_back(p);
  }
  const auto r = metrics(preds);
  const auto csv = metrics_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + kNumClasses + 2);
  EXPECT_NE(csv.find("macro,1.0000,1.0000,1.0000,1.0000,11"), std::string::npos) << csv;
  EXPECT_EQ(to_json(r)["classes"].size(), static_cast<std::size_t>(kNumClasses));
  TempDir dir("eval");
  Evaluation ev{r, confusion(std::vector<int>{0}, std::vector<int>{0}), preds};
  write_evaluation(dir / "out", ev);
  for (const char* f : {"metrics.json", "metrics.csv", "confusion.csv"}) EXPECT_TRUE(std::filesystem::exists(dir / "out" / f));
}

// ---- training and evaluation ----------------------------------------------

TEST(Evaluation, SeparableCorpusScoresHigh) {
  synth::CorpusConfig cfg;
  cfg.per_class = 2;
  cfg.seed = 7;
  const auto corpus = synth::synth_corpus(cfg);
  std::vector<AnnotatedRecording> recs;
  for (const auto& c : corpus) recs.push_back(c.recording);
  const auto m = build_manifest(recs, {}, 7);
  const auto loader = synth::corpus_loader(corpus);
  const auto model = train_from_manifest(m, loader);
  for (auto split : {Split::Val, Split::Test}) {
    const auto ev = evaluate(model, m, split, loader);
    EXPECT_GE(ev.report.accuracy_macro, 0.95) << split_name(split);
    EXPECT_EQ(ev.report.skipped, 0u);
    EXPECT_EQ(ev.confusion.total(), static_cast<std::int64_t>(m.of(split).size()));
  }
}

TEST(Evaluation, SelfMatchOnSingleSamplePerClass) {
  synth::CorpusConfig cfg;
  cfg.span_s = 4.0;
  cfg.seed = 11;
  auto corpus = synth::synth_corpus(cfg);
  corpus.resize(kNumClasses);  // location L1, one recording per class
  DatasetManifest m;
  for (const auto& c : corpus) {
    ManifestSample s;
    s.recording = c.recording.name;
    s.audio = c.recording.audio.string();
    s.segment_start_s = c.recording.annotations[0].start_s;
    s.extract_start_s = s.segment_start_s + 1.0;
    s.label = c.recording.annotations[0].class_index;
    s.split = Split::Train;
    m.samples.push_back(s);
    s.split = Split::Test;
    m.samples.push_back(s);
  }
  const auto loader = synth::corpus_loader(corpus);
  const auto ev = evaluate(train_from_manifest(m, loader), m, Split::Test, loader);
  EXPECT_EQ(ev.report.accuracy_micro, 1.0);
  EXPECT_EQ(ev.report.classes_present, kNumClasses);
}

TEST(Evaluation, MissingAudioIsListedAndSkipped) {
  synth::CorpusConfig cfg;
  cfg.span_s = 4.0;
  auto corpus = synth::synth_corpus(cfg);
  corpus.resize(kNumClasses);
  std::vector<AnnotatedRecording> recs;
  for (const auto& c : corpus) recs.push_back(c.recording);
  DatasetManifest m;
  for (const auto& c : corpus) {
    ManifestSample s;
    s.audio = c.recording.audio.string();
    s.extract_start_s = 1.0;
    s.label = c.recording.annotations[0].class_index;
    m.samples.push_back(s);
  }
  auto ghost = m.samples[0];
  ghost.audio = "ghost.wav";
  ghost.split = Split::Test;
  m.samples.push_back(ghost);
  auto test = m.samples[1];
  test.split = Split::Test;
  m.samples.push_back(test);
  const auto loader = synth::corpus_loader(corpus);
  const auto model = train_from_manifest(m, loader);
  const auto ev = evaluate(model, m, Split::Test, loader);
  EXPECT_EQ(ev.report.skipped, 1u);
  EXPECT_EQ(ev.report.missing_audio, std::vector<std::string>{"ghost.wav"});
  EXPECT_EQ(ev.report.total, 1);
  EXPECT_THROW(evaluate(model, m, Split::Val, loader), DataError);
  EXPECT_THROW(evaluate(classify::BaselineModel{}, m, Split::Test, loader), ModelError);
}
