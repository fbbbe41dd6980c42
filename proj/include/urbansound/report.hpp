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

// SVG + CSV reports from coordinator data: hourly SPL bands, hourly class
// distribution, and class-locality polar plots. Output depends only on the
// input rows; nothing time-dependent is embedded.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "urbansound/common.hpp"
#include "urbansound/coordinator.hpp"
#include "urbansound/doa.hpp"
#include "urbansound/taxonomy.hpp"

namespace urbansound::report {

struct Report {
  std::string svg;
  std::string csv;
  std::size_t excluded = 0;  // records left out (locality: no azimuth)
};

inline void write_report(const Report& r, const std::string& prefix) {
  const std::filesystem::path base(prefix);
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  std::ofstream(prefix + ".svg", std::ios::binary) << r.svg;
  std::ofstream(prefix + ".csv", std::ios::binary) << r.csv;
}

namespace detail {

inline std::string num(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

/// Value as written to CSV: rounded to 4 decimals, shortest form.
inline std::string csv_num(double v) {
  std::ostringstream out;
  out.precision(12);
  out << round4(v);
  return out.str();
}

inline std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

class Svg {
 public:
  Svg(int w, int h) {
    out_ << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 "
         << w << ' ' << h << "\">\n"
         << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, std::string_view stroke, double width = 1.0) {
    out_ << "<line x1=\"" << num(x1) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(x2) << "\" y2=\"" << num(y2)
         << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, std::string_view stroke) {
    out_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) out_ << (i ? " " : "") << num(pts[i].first) << ',' << num(pts[i].second);
    out_ << "\"/>\n";
  }
  void circle(double cx, double cy, double r, std::string_view fill, std::string_view stroke = "none") {
    out_ << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(cy) << "\" r=\"" << num(r) << "\" fill=\"" << fill
         << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void rect(double x, double y, double w, double h, std::string_view fill, std::string_view title = {}) {
    out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
         << "\" fill=\"" << fill << "\"";
    if (title.empty()) {
      out_ << "/>\n";
    } else {
      out_ << "><title>" << escape(title) << "</title></rect>\n";
    }
  }
  void text(double x, double y, std::string_view s, int size = 12, std::string_view anchor = "middle") {
    out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-family=\"sans-serif\" font-size=\"" << size
         << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }
  void comment(std::string_view s) {
    std::string safe(s);
    for (std::size_t p; (p = safe.find("--")) != std::string::npos;) safe.replace(p, 2, "- ");
    out_ << "<!-- " << safe << " -->\n";
  }
  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  std::ostringstream out_;
};

inline constexpr std::array<std::string_view, kNumClasses> kPalette{
    "#9e9e9e", "#8d6e63", "#3949ab", "#8e24aa", "#e53935", "#039be5",
    "#43a047", "#fb8c00", "#d81b60", "#6d4c41", "#fdd835"};

inline int hour_of(Timestamp day, Timestamp t) {
  return static_cast<int>(std::chrono::duration_cast<std::chrono::hours>(t - day).count());
}

/// Hourly rows of `node` whose period starts inside [day, day + 24 h).
inline std::vector<const coordinator::AggregateRecord*> day_rows(const std::vector<coordinator::AggregateRecord>& rows,
                                                                 const std::string& node, Timestamp day) {
  std::vector<const coordinator::AggregateRecord*> out;
  for (const auto& a : rows) {
    if (a.period_kind != coordinator::PeriodKind::Hour || a.node_id != node) continue;
    if (a.period_start < day || a.period_start >= day + std::chrono::hours{24}) continue;
    out.push_back(&a);
  }
  return out;
}

}  // namespace detail

// ---- SPL bands -------------------------------------------------------------

struct HourlySpl {
  int hour = 0;
  double min = 0.0, avg = 0.0, max = 0.0;
  std::int64_t count = 0;
};

/// Merges classes per hour: min of mins, max of maxes, count-weighted mean of averages.
inline std::vector<HourlySpl> merge_hourly_spl(const std::vector<coordinator::AggregateRecord>& rows,
                                               const std::string& node, Timestamp day) {
  std::map<int, HourlySpl> by_hour;
  std::map<int, double> weighted;
  for (const auto* a : detail::day_rows(rows, node, day)) {
    const int h = detail::hour_of(day, a->period_start);
    auto [it, fresh] = by_hour.try_emplace(h, HourlySpl{h, a->min_spl, 0.0, a->max_spl, 0});
    auto& m = it->second;
    m.min = std::min(m.min, a->min_spl);
    m.max = std::max(m.max, a->max_spl);
    m.count += a->count;
    weighted[h] += a->avg_spl * static_cast<double>(a->count);
  }
  std::vector<HourlySpl> out;
  for (auto& [h, m] : by_hour) {
    m.avg = std::clamp(weighted[h] / static_cast<double>(m.count), m.min, m.max);
    out.push_back(m);
  }
  return out;
}

inline Report spl_report(const std::vector<coordinator::AggregateRecord>& rows, const std::string& node,
                         Timestamp day) {
  day = std::chrono::floor<std::chrono::days>(day);
  const auto merged = merge_hourly_spl(rows, node, day);
  Report r;
  std::ostringstream csv;
  csv << "hour,min,avg,max\n";
  for (const auto& m : merged)
    csv << m.hour << ',' << detail::csv_num(m.min) << ',' << detail::csv_num(m.avg) << ',' << detail::csv_num(m.max)
        << '\n';
  r.csv = csv.str();

  constexpr double W = 800, H = 400, L = 60, R = 20, T = 40, B = 50;
  double lo = 30.0, hi = 110.0;
  for (const auto& m : merged) {
    lo = std::min(lo, std::floor(m.min / 10.0) * 10.0);
    hi = std::max(hi, std::ceil(m.max / 10.0) * 10.0);
  }
  auto x = [&](int h) { return L + (W - L - R) * h / 23.0; };
  auto y = [&](double db) { return T + (H - T - B) * (hi - db) / (hi - lo); };

  detail::Svg svg(static_cast<int>(W), static_cast<int>(H));
  svg.text(W / 2, 24, "SPL (min / avg / max) - " + node + " - " + format_rfc3339(day).substr(0, 10), 14);
  svg.line(L, H - B, W - R, H - B, "black");
  svg.line(L, T, L, H - B, "black");
  for (int h = 0; h < 24; h += 3) {
    svg.line(x(h), H - B, x(h), H - B + 5, "black");
    svg.text(x(h), H - B + 20, std::to_string(h) + ":00", 10);
  }
  for (double db = lo; db <= hi + 1e-9; db += 10.0) {
    svg.line(L - 5, y(db), L, y(db), "black");
    svg.text(L - 8, y(db) + 4, detail::num(db, 0), 10, "end");
  }
  svg.text(L - 45, T - 10, "dB(A)", 10, "start");
  auto series = [&](double HourlySpl::*field, std::string_view color) {
    std::vector<std::pair<double, double>> run;
    int prev = -2;
    for (const auto& m : merged) {
      if (m.hour != prev + 1 && !run.empty()) {  // a missing hour breaks the line
        if (run.size() > 1) svg.polyline(run, color);
        run.clear();
      }
      run.emplace_back(x(m.hour), y(m.*field));
      svg.circle(x(m.hour), y(m.*field), 2.5, color);
      prev = m.hour;
    }
    if (run.size() > 1) svg.polyline(run, color);
  };
  series(&HourlySpl::max, "red");
  series(&HourlySpl::min, "blue");
  series(&HourlySpl::avg, "green");
  svg.text(W - R - 150, T + 10, "max", 10, "start");
  svg.line(W - R - 175, T + 6, W - R - 155, T + 6, "red", 2);
  svg.text(W - R - 100, T + 10, "min", 10, "start");
  svg.line(W - R - 125, T + 6, W - R - 105, T + 6, "blue", 2);
  svg.text(W - R - 50, T + 10, "avg", 10, "start");
  svg.line(W - R - 75, T + 6, W - R - 55, T + 6, "green", 2);
  r.svg = svg.finish();
  return r;
}

// ---- class distribution ----------------------------------------------------

struct HourClassCount {
  int hour = 0;
  int class_index = 0;
  std::int64_t count = 0;
};

/// Per hour, classes in descending count order (ties by class index).
inline std::vector<HourClassCount> hourly_distribution(const std::vector<coordinator::AggregateRecord>& rows,
                                                       const std::string& node, Timestamp day) {
  std::vector<HourClassCount> out;
  for (const auto* a : detail::day_rows(rows, node, day))
    out.push_back({detail::hour_of(day, a->period_start), a->class_index, a->count});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.hour != b.hour) return a.hour < b.hour;
    if (a.count != b.count) return a.count > b.count;
    return a.class_index < b.class_index;
  });
  return out;
}

inline Report class_distribution_report(const std::vector<coordinator::AggregateRecord>& rows,
                                        const std::string& node, Timestamp day) {
  day = std::chrono::floor<std::chrono::days>(day);
  const auto dist = hourly_distribution(rows, node, day);
  Report r;
  std::ostringstream csv;
  csv << "hour,class,count\n";
  for (const auto& d : dist) csv << d.hour << ',' << class_label(d.class_index) << ',' << d.count << '\n';
  r.csv = csv.str();

  std::array<std::int64_t, 24> totals{};
  for (const auto& d : dist) totals[d.hour] += d.count;
  const std::int64_t peak = std::max<std::int64_t>(1, *std::max_element(totals.begin(), totals.end()));

  constexpr double W = 900, H = 420, L = 60, R = 170, T = 40, B = 50;
  const double slot = (W - L - R) / 24.0;
  auto y = [&](double c) { return T + (H - T - B) * (1.0 - c / static_cast<double>(peak)); };
  detail::Svg svg(static_cast<int>(W), static_cast<int>(H));
  svg.text((W - R + L) / 2, 24, "Sound class distribution - " + node + " - " + format_rfc3339(day).substr(0, 10), 14);
  svg.line(L, H - B, W - R, H - B, "black");
  svg.line(L, T, L, H - B, "black");
  for (int h = 0; h < 24; h += 3) svg.text(L + slot * (h + 0.5), H - B + 20, std::to_string(h) + ":00", 10);
  svg.text(L - 8, y(static_cast<double>(peak)) + 4, std::to_string(peak), 10, "end");
  svg.text(L - 8, y(0) + 4, "0", 10, "end");
  std::array<double, 24> stacked{};
  for (const auto& d : dist) {
    const double top = stacked[d.hour] + static_cast<double>(d.count);
    svg.rect(L + slot * d.hour + 2, y(top), slot - 4, y(stacked[d.hour]) - y(top), detail::kPalette[d.class_index],
             std::to_string(d.hour) + ":00 " + std::string(class_label(d.class_index)) + " " + std::to_string(d.count));
    stacked[d.hour] = top;
  }
  std::set<int> present;
  for (const auto& d : dist) present.insert(d.class_index);
  double ly = T;
  for (int k : present) {
    svg.rect(W - R + 20, ly, 12, 12, detail::kPalette[k]);
    svg.text(W - R + 38, ly + 10, class_label(k), 11, "start");
    ly += 18;
  }
  r.svg = svg.finish();
  return r;
}

// ---- class locality --------------------------------------------------------

struct LocalityPlotSpec {
  std::string node_id;
  Timestamp from{}, to{};
  std::vector<int> classes{static_cast<int>(SoundClass::Alarm),        static_cast<int>(SoundClass::CarHorn),
                           static_cast<int>(SoundClass::Construction), static_cast<int>(SoundClass::HumanVoice),
                           static_cast<int>(SoundClass::Music),        static_cast<int>(SoundClass::Shout),
                           static_cast<int>(SoundClass::Vehicle)};

  void validate() const {
    if (classes.empty() || classes.size() > 7) throw ConfigError("locality plot takes 1 to 7 classes");
    std::set<int> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size()) throw ConfigError("duplicate class in locality plot");
    for (int k : classes)
      if (k < 0 || k >= kNumClasses) throw ConfigError("unknown class in locality plot");
  }
  /// Concentric ring of a class of interest (innermost = 1), or nullopt.
  std::optional<int> ring(int class_index) const {
    const auto it = std::find(classes.begin(), classes.end(), class_index);
    if (it == classes.end()) return std::nullopt;
    return static_cast<int>(it - classes.begin()) + 1;
  }
};

struct LocalityDot {
  int class_index = 0;
  int ring = 0;
  int azimuth_deg = 0;  // 10 degree bin
  std::int64_t count = 0;
};

inline std::vector<LocalityDot> locality_dots(const std::vector<coordinator::StoredRecord>& records,
                                              const LocalityPlotSpec& spec, std::size_t* excluded = nullptr) {
  spec.validate();
  std::map<std::pair<int, int>, std::int64_t> bins;  // (ring, azimuth) -> count
  std::size_t missing = 0;
  for (const auto& s : records) {
    const auto& rec = s.record;
    if (!spec.node_id.empty() && rec.node_id != spec.node_id) continue;
    if (rec.timestamp < spec.from || rec.timestamp >= spec.to) continue;
    const auto ring = spec.ring(rec.class_index);
    if (!ring) continue;
    if (!rec.azimuth) {
      ++missing;
      continue;
    }
    ++bins[{*ring, *doa::quantize_azimuth(static_cast<double>(*rec.azimuth))}];
  }
  if (excluded) *excluded = missing;
  std::vector<LocalityDot> out;
  for (const auto& [key, count] : bins) out.push_back({spec.classes[key.first - 1], key.first, key.second, count});
  return out;
}

inline Report locality_plot(const std::vector<coordinator::StoredRecord>& records, const LocalityPlotSpec& spec) {
  Report r;
  const auto dots = locality_dots(records, spec, &r.excluded);
  std::ostringstream csv;
  csv << "class,azimuth_deg,count\n";
  for (const auto& d : dots) csv << class_label(d.class_index) << ',' << d.azimuth_deg << ',' << d.count << '\n';
  r.csv = csv.str();

  constexpr double W = 640, H = 560, CX = 260, CY = 290, step = 30.0;
  detail::Svg svg(static_cast<int>(W), static_cast<int>(H));
  svg.text(W / 2, 24, "Class locality - " + spec.node_id, 14);
  const int rings = static_cast<int>(spec.classes.size());
  for (int k = rings; k >= 1; --k) {
    svg.circle(CX, CY, step * k, "none", "#bdbdbd");
    svg.text(CX + 3, CY - step * k + 12, std::to_string(k), 9, "start");
  }
  // Azimuth 0 points right (+x); angles grow counter-clockwise as in the array frame.
  svg.line(CX, CY, CX + step * (rings + 1), CY, "black", 1.5);
  svg.text(CX + step * (rings + 1) + 14, CY + 4, "0°", 11);
  svg.circle(CX, CY, 5, "black");
  for (const auto& d : dots) {
    const double a = d.azimuth_deg * std::numbers::pi / 180.0;
    svg.circle(CX + step * d.ring * std::cos(a), CY - step * d.ring * std::sin(a), 6, detail::kPalette[d.class_index],
               "black");
  }
  double ly = 60;
  for (int k = 0; k < rings; ++k) {
    svg.circle(W - 150, ly, 6, detail::kPalette[spec.classes[k]], "black");
    svg.text(W - 138, ly + 4, std::to_string(k + 1) + ": " + std::string(class_label(spec.classes[k])), 11, "start");
    ly += 20;
  }
  if (r.excluded > 0) {
    const std::string note = std::to_string(r.excluded) + " record(s) without azimuth excluded";
    svg.text(W / 2, H - 12, note, 11);
    svg.comment(note);
  }
  r.svg = svg.finish();
  return r;
}

}  // namespace urbansound::report
