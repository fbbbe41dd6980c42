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

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "test_util.hpp"
#include "urbansound/report.hpp"

using namespace urbansound;
using namespace urbansound::report;
using urbansound::testing::at;
using urbansound::testing::make_record;
using urbansound::testing::TempDir;
namespace pt = boost::property_tree;

namespace {

constexpr int kAlarm = static_cast<int>(SoundClass::Alarm);
constexpr int kMusic = static_cast<int>(SoundClass::Music);
constexpr int kRain = static_cast<int>(SoundClass::Rain);

pt::ptree parse_svg(const std::string& svg) {
  std::istringstream in(svg);
  pt::ptree tree;
  pt::read_xml(in, tree);  // throws on malformed XML
  return tree;
}

std::vector<const pt::ptree*> children(const pt::ptree& svg, const std::string& tag) {
  std::vector<const pt::ptree*> out;
  for (const auto& [name, node] : svg)
    if (name == tag) out.push_back(&node);
  return out;
}

coordinator::AggregateRecord hour_row(const std::string& node, int cls, int hour, std::int64_t count, double avg,
                                      double lo, double hi) {
  coordinator::AggregateRecord a;
  a.node_id = node;
  a.class_index = cls;
  a.period_kind = coordinator::PeriodKind::Hour;
  a.period_start = at("2020-06-15T00:00:00Z") + std::chrono::hours{hour};
  a.count = count;
  a.avg_spl = avg;
  a.min_spl = lo;
  a.max_spl = hi;
  return a;
}

std::vector<coordinator::StoredRecord> stored(const std::vector<MetadataRecord>& recs) {
  std::vector<coordinator::StoredRecord> out;
  std::int64_t seq = 0;
  for (const auto& r : recs) out.push_back({r, ++seq, r.timestamp});
  return out;
}

// A day of mixed traffic for one node, with a few records lacking azimuth.
std::vector<MetadataRecord> busy_day() {
  std::mt19937 rng(4);
  std::uniform_int_distribution<int> cls(0, kNumClasses - 1), bin(0, 35), sec(0, 86399);
  std::uniform_real_distribution<double> spl(45, 95);
  std::vector<MetadataRecord> out;
  for (int i = 0; i < 400; ++i) {
    const std::optional<int> az = i % 17 == 0 ? std::nullopt : std::optional<int>(bin(rng) * 10);
    out.push_back(make_record("L2", cls(rng), spl(rng), az, at("2020-06-15T00:00:00Z") + std::chrono::seconds{sec(rng)}));
  }
  return out;
}

std::vector<coordinator::AggregateRecord> hourly_rows(const std::vector<MetadataRecord>& recs) {
  std::vector<coordinator::StoredRecord> s = stored(recs);
  std::vector<coordinator::AggregateRecord> out;
  for (const auto& [k, a] : coordinator::aggregate_all(s))
    if (a.period_kind == coordinator::PeriodKind::Hour) out.push_back(a);
  return out;
}

}  // namespace

TEST(Report, SvgsAreWellFormedAndDeterministic) {
  const auto recs = busy_day();
  const auto rows = hourly_rows(recs);
  LocalityPlotSpec spec;
  spec.node_id = "L2";
  spec.from = at("2020-06-15T00:00:00Z");
  spec.to = at("2020-06-16T00:00:00Z");
  const std::array<Report, 3> reports{spl_report(rows, "L2", at("2020-06-15T10:00:00Z")),
                                      class_distribution_report(rows, "L2", at("2020-06-15T00:00:00Z")),
                                      locality_plot(stored(recs), spec)};
  for (const auto& r : reports) {
    const auto tree = parse_svg(r.svg);
    ASSERT_EQ(tree.count("svg"), 1u);
    EXPECT_EQ(tree.get<std::string>("svg.<xmlattr>.xmlns"), "http://www.w3.org/2000/svg");
    EXPECT_FALSE(r.csv.empty());
  }
  EXPECT_EQ(reports[0].svg, spl_report(rows, "L2", at("2020-06-15T00:00:00Z")).svg);
  EXPECT_EQ(reports[1].csv, class_distribution_report(rows, "L2", at("2020-06-15T23:59:59Z")).csv);
  EXPECT_EQ(reports[2].svg, locality_plot(stored(recs), spec).svg);
  EXPECT_GT(reports[2].excluded, 0u);
}

TEST(Report, MergedHourUsesCountWeightedMean) {
  const std::vector rows{hour_row("n", kAlarm, 9, 1, 75.0, 75.0, 75.0), hour_row("n", kMusic, 9, 3, 85.0, 80.0, 90.0),
                         hour_row("other", kRain, 9, 5, 40.0, 40.0, 40.0)};
  const auto merged = merge_hourly_spl(rows, "n", at("2020-06-15T00:00:00Z"));
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].hour, 9);
  EXPECT_EQ(merged[0].count, 4);
  EXPECT_DOUBLE_EQ(merged[0].avg, 82.5);
  EXPECT_DOUBLE_EQ(merged[0].min, 75.0);
  EXPECT_DOUBLE_EQ(merged[0].max, 90.0);
  EXPECT_EQ(spl_report(rows, "n", at("2020-06-15T00:00:00Z")).csv, "hour,min,avg,max\n9,75,82.5,90\n");
}

TEST(Report, SplCsvMatchesHourlyQuery) {
  TempDir dir("report");
  coordinator::Store store({dir.path()});
  const auto recs = busy_day();
  for (const auto& r : recs) ASSERT_TRUE(store.ingest(serialize(r), r.timestamp).accepted);
  store.snapshot_aggregate();
  coordinator::AggregateQuery q{coordinator::PeriodKind::Hour, at("2020-06-15T00:00:00Z"), at("2020-06-16T00:00:00Z"),
                                "L2", std::nullopt};
  const auto rows = store.query(q);
  const auto merged = merge_hourly_spl(rows, "L2", at("2020-06-15T00:00:00Z"));
  // Independent tally straight from the raw records.
  std::map<int, std::vector<double>> by_hour;
  for (const auto& r : recs)
    by_hour[static_cast<int>((r.timestamp - at("2020-06-15T00:00:00Z")) / std::chrono::hours{1})].push_back(r.spl);
  ASSERT_EQ(merged.size(), by_hour.size());
  for (const auto& m : merged) {
    const auto& v = by_hour.at(m.hour);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    EXPECT_EQ(m.count, static_cast<std::int64_t>(v.size()));
    EXPECT_DOUBLE_EQ(m.min, *std::min_element(v.begin(), v.end()));
    EXPECT_DOUBLE_EQ(m.max, *std::max_element(v.begin(), v.end()));
    EXPECT_NEAR(m.avg, mean, 1e-3);  // stored class averages carry 4 decimals
  }
  const auto csv = spl_report(rows, "L2", at("2020-06-15T00:00:00Z")).csv;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(merged.size() + 1));
}

TEST(Report, MissingHourBreaksLines) {
  const std::vector rows{hour_row("n", kAlarm, 1, 1, 60, 60, 60), hour_row("n", kAlarm, 2, 1, 62, 62, 62),
                         hour_row("n", kAlarm, 3, 1, 64, 64, 64), hour_row("n", kAlarm, 6, 1, 70, 70, 70),
                         hour_row("n", kAlarm, 7, 1, 72, 72, 72)};
  const auto svg = parse_svg(spl_report(rows, "n", at("2020-06-15T00:00:00Z")).svg).get_child("svg");
  const auto lines = children(svg, "polyline");
  ASSERT_EQ(lines.size(), 6u);  // three series, two runs each
  for (const auto* l : lines) {
    const auto points = l->get<std::string>("<xmlattr>.points");
    const auto n = std::count(points.begin(), points.end(), ',');
    EXPECT_TRUE(n == 3 || n == 2) << points;
  }
  EXPECT_EQ(children(svg, "circle").size(), 15u);
}

TEST(Report, DistributionOrdersClassesByCount) {
  const std::vector rows{hour_row("n", kRain, 4, 2, 50, 50, 50), hour_row("n", kAlarm, 4, 5, 70, 70, 70),
                         hour_row("n", kMusic, 4, 2, 60, 60, 60), hour_row("n", kAlarm, 1, 1, 70, 70, 70)};
  const auto dist = hourly_distribution(rows, "n", at("2020-06-15T00:00:00Z"));
  ASSERT_EQ(dist.size(), 4u);
  EXPECT_EQ(dist[0].hour, 1);
  EXPECT_EQ(dist[1].class_index, kAlarm);
  EXPECT_EQ(dist[2].class_index, std::min(kMusic, kRain));
  EXPECT_EQ(dist[3].class_index, std::max(kMusic, kRain));
  const auto csv = class_distribution_report(rows, "n", at("2020-06-15T00:00:00Z")).csv;
  EXPECT_EQ(csv, "hour,class,count\n1," + std::string(class_label(kAlarm)) + ",1\n4," +
                     std::string(class_label(kAlarm)) + ",5\n4," + std::string(class_label(dist[2].class_index)) +
                     ",2\n4," + std::string(class_label(dist[3].class_index)) + ",2\n");
}

TEST(Report, SingleAlarmDrawsOneFullBar) {
  const std::vector rows{hour_row("n", kAlarm, 12, 1, 70, 70, 70)};
  const auto r = class_distribution_report(rows, "n", at("2020-06-15T00:00:00Z"));
  EXPECT_EQ(r.csv, "hour,class,count\n12," + std::string(class_label(kAlarm)) + ",1\n");
  const auto svg = parse_svg(r.svg).get_child("svg");
  std::vector<const pt::ptree*> bars;
  for (const auto* rect : children(svg, "rect"))
    if (rect->count("title")) bars.push_back(rect);
  ASSERT_EQ(bars.size(), 1u);
  EXPECT_EQ(bars[0]->get<std::string>("title"), "12:00 " + std::string(class_label(kAlarm)) + " 1");
  EXPECT_DOUBLE_EQ(bars[0]->get<double>("<xmlattr>.height"), 330.0);  // the full plot height
}

TEST(Report, LocalityDeduplicatesDots) {
  std::vector<MetadataRecord> recs;
  for (int i = 0; i < 5; ++i)
    recs.push_back(make_record("n", kAlarm, 70, 90, at("2020-06-15T10:00:00Z") + std::chrono::minutes{i}));
  recs.push_back(make_record("n", kAlarm, 70, std::nullopt, at("2020-06-15T10:10:00Z")));
  recs.push_back(make_record("n", kMusic, 70, std::nullopt, at("2020-06-15T10:11:00Z")));
  recs.push_back(make_record("n", kMusic, 70, 180, at("2020-06-15T10:12:00Z")));
  recs.push_back(make_record("n", kRain, 70, 0, at("2020-06-15T10:13:00Z")));    // not a class of interest
  recs.push_back(make_record("x", kAlarm, 70, 0, at("2020-06-15T10:14:00Z")));   // other node
  recs.push_back(make_record("n", kAlarm, 70, 0, at("2020-06-15T12:00:00Z")));   // outside the window
  LocalityPlotSpec spec;
  spec.node_id = "n";
  spec.from = at("2020-06-15T10:00:00Z");
  spec.to = at("2020-06-15T11:00:00Z");
  const auto r = locality_plot(stored(recs), spec);
  EXPECT_EQ(r.excluded, 2u);
  EXPECT_EQ(r.csv, "class,azimuth_deg,count\n" + std::string(class_label(kAlarm)) + ",90,5\n" +
                       std::string(class_label(kMusic)) + ",180,1\n");
  EXPECT_NE(r.svg.find("2 record(s) without azimuth excluded"), std::string::npos);

  const auto svg = parse_svg(r.svg).get_child("svg");
  // Alarm sits on ring 1 straight up from the center; Music on its own ring to the left.
  const auto dots = locality_dots(stored(recs), spec);
  ASSERT_EQ(dots.size(), 2u);
  EXPECT_EQ(dots[0].ring, *spec.ring(kAlarm));
  EXPECT_EQ(dots[0].count, 5);
  bool alarm_dot = false;
  for (const auto* c : children(svg, "circle"))
    if (std::abs(c->get<double>("<xmlattr>.cx") - 260.0) < 0.01 &&
        std::abs(c->get<double>("<xmlattr>.cy") - (290.0 - 30.0 * dots[0].ring)) < 0.01)
      alarm_dot = true;
  EXPECT_TRUE(alarm_dot);
}

TEST(Report, LocalitySpecValidation) {
  LocalityPlotSpec spec;
  spec.classes = {};
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.classes = {1, 1};
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.classes = {0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.classes = {11};
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_NO_THROW(LocalityPlotSpec{}.validate());
}

TEST(Report, WritesSvgAndCsv) {
  TempDir dir("report");
  const std::vector rows{hour_row("n", kAlarm, 12, 1, 70, 70, 70)};
  const auto r = spl_report(rows, "n", at("2020-06-15T00:00:00Z"));
  write_report(r, (dir / "spl").string());
  std::ifstream svg(dir / "spl.svg"), csv(dir / "spl.csv");
  std::stringstream a, b;
  a << svg.rdbuf();
  b << csv.rdbuf();
  EXPECT_EQ(a.str(), r.svg);
  EXPECT_EQ(b.str(), r.csv);
}
