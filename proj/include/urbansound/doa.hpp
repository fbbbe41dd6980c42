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

// Azimuth of the dominant source from a concentric circular array.
//
// Each edge microphone is paired with the reference (center) microphone; the
// GCC-PHAT lag of each pair becomes a range difference d_i = c * tau_i / fs.
// Under the far-field assumption the source direction u satisfies D = -M u,
// with M the edge-microphone coordinates relative to the reference, so
//
//     u = -(M^T M)^{-1} M^T D.
//
// The 2 x (N-1) operator (M^T M)^{-1} M^T depends only on the geometry and is
// built once per array.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "urbansound/common.hpp"
#include "urbansound/dsp.hpp"
#include "urbansound/fft.hpp"

namespace urbansound::doa {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct DoaConfig {
  double speed_of_sound = 343.0;  ///< m/s
  int resolution_deg = 10;
  int sample_rate = kSampleRate;
  double spacing_m = 0.045;  ///< inter-microphone distance used for the resolution bound
  /// Cross-spectrum bins weaker than this fraction of the strongest bin are excluded from PHAT.
  double phat_mask_ratio = 1e-3;
  /// Minimum normalized PHAT peak for a pair to count as reliable.
  double min_peak = 0.2;
  /// Indeterminate when this many pairs (or more) are unreliable.
  int max_unreliable_pairs = 3;

  void validate() const {
    if (resolution_deg <= 0 || 360 % resolution_deg != 0) throw ConfigError("resolution_deg must divide 360");
    if (!(speed_of_sound > 0.0) || sample_rate <= 0 || !(spacing_m > 0.0)) throw ConfigError("invalid DoA config");
  }
};

struct ArrayGeometry {
  std::vector<Point> mics;  ///< index 0 is the reference (center) microphone
  int reference = 0;

  /// The 7-microphone array: center at the origin, six edge mics at 0, 60, ..., 300 degrees.
  static ArrayGeometry concentric(double radius = 0.045) {
    ArrayGeometry g;
    g.mics.push_back({0.0, 0.0});
    for (int i = 0; i < 6; ++i) {
      const double a = i * std::numbers::pi / 3.0;
      g.mics.push_back({radius * std::cos(a), radius * std::sin(a)});
    }
    return g;
  }

  /// Largest distance from the reference microphone.
  double aperture() const {
    double r = 0.0;
    for (const auto& m : mics) r = std::max(r, std::hypot(m.x - mics[reference].x, m.y - mics[reference].y));
    return r;
  }

  static ArrayGeometry from_json(const nlohmann::json& j) {
    ArrayGeometry g;
    g.reference = j.value("reference", 0);
    const auto& mics = j.at("mics");
    g.mics.resize(mics.size());
    std::vector<bool> seen(mics.size(), false);
    for (const auto& [key, value] : mics.items()) {
      const std::size_t idx = std::stoul(key);
      if (idx >= g.mics.size() || seen[idx]) throw GeometryError("geometry mic indices must be 0..N-1, unique");
      seen[idx] = true;
      g.mics[idx] = {value.at("x").get<double>(), value.at("y").get<double>()};
    }
    if (g.mics.size() < 3) throw GeometryError("geometry needs at least 3 microphones");
    if (g.reference < 0 || g.reference >= static_cast<int>(g.mics.size())) throw GeometryError("bad reference index");
    return g;
  }

  nlohmann::json to_json() const {
    nlohmann::json mj = nlohmann::json::object();
    for (std::size_t i = 0; i < mics.size(); ++i) mj[std::to_string(i)] = {{"x", mics[i].x}, {"y", mics[i].y}};
    return {{"reference", reference}, {"mics", mj}};
  }

  static ArrayGeometry load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw GeometryError("cannot open geometry file " + path.string());
    return from_json(nlohmann::json::parse(in));
  }
};

/// Search range for lags: ceil(aperture * fs / c) + 1 samples.
inline int max_lag(const ArrayGeometry& g, const DoaConfig& cfg) {
  return static_cast<int>(std::ceil(g.aperture() * cfg.sample_rate / cfg.speed_of_sound)) + 1;
}

struct GccResult {
  int lag = 0;
  bool reliable = false;
  double peak = 0.0;  ///< normalized PHAT correlation at `lag`, in [-1, 1]
};

/// GCC-PHAT delay of x_i relative to x_j; a positive lag means x_i lags x_j.
inline GccResult gcc_delay(std::span<const double> xi, std::span<const double> xj, int max_lag,
                           const DoaConfig& cfg = {}) {
  if (xi.size() != xj.size()) throw SizeError("gcc_delay channels differ in length");
  if (max_lag < 1) throw ConfigError("max_lag must be >= 1");
  int n = 2;
  while (n < static_cast<int>(2 * xi.size())) n *= 2;
  const RealFft fft(n);
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(xi.begin(), xi.end(), a.begin());
  std::copy(xj.begin(), xj.end(), b.begin());
  const auto fa = fft.forward(a);
  const auto fb = fft.forward(b);

  std::vector<std::complex<double>> cross(fa.size());
  double strongest = 0.0;
  for (std::size_t k = 0; k < cross.size(); ++k) {
    cross[k] = fa[k] * std::conj(fb[k]);
    strongest = std::max(strongest, std::abs(cross[k]));
  }
  if (strongest == 0.0) return {0, false, 0.0};  // at least one silent channel

  const double cutoff = strongest * cfg.phat_mask_ratio;
  double weight = 0.0;
  for (std::size_t k = 0; k < cross.size(); ++k) {
    const double mag = std::abs(cross[k]);
    if (mag < cutoff || mag == 0.0) {
      cross[k] = 0.0;
      continue;
    }
    cross[k] /= mag;
    weight += (k == 0 || k + 1 == cross.size()) ? 1.0 : 2.0;
  }
  const auto corr = fft.inverse(cross);

  GccResult best{0, false, -std::numeric_limits<double>::infinity()};
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    const double v = corr[(lag + n) % n] / weight;
    if (v > best.peak) best = {lag, false, v};
  }
  best.reliable = best.peak >= cfg.min_peak;
  return best;
}

struct DelayVector {
  std::vector<int> lags;             ///< per edge microphone, samples
  std::vector<double> range_diffs;   ///< d_i = c * lag / fs, meters
  std::vector<bool> reliable;
  std::vector<double> peaks;
};

struct DoaSolution {
  std::array<double, 2> direction{};      ///< S / R_s
  std::optional<double> azimuth_deg;      ///< [0, 360); absent when indeterminate
  std::optional<int> quantized_deg;       ///< multiple of the resolution
  double residual = 0.0;                  ///< ||D + M u||
  int unreliable_pairs = 0;
  DelayVector delays;

  bool determinate() const { return azimuth_deg.has_value(); }
};

/// Nearest multiple of `resolution` modulo 360; exact half-way cases round down.
inline std::optional<int> quantize_azimuth(std::optional<double> azimuth_deg, int resolution = 10) {
  if (!azimuth_deg || !std::isfinite(*azimuth_deg)) return std::nullopt;
  if (resolution <= 0 || 360 % resolution != 0) throw ConfigError("resolution must divide 360");
  const double steps = std::ceil(*azimuth_deg / resolution - 0.5);
  long q = static_cast<long>(steps) * resolution % 360;
  if (q < 0) q += 360;
  return static_cast<int>(q);
}

/// Angular resolution asin(c * tau / (fs * d)) in degrees.
inline double doa_resolution(const DoaConfig& cfg, int tau = 1) {
  const double arg = cfg.speed_of_sound * tau / (cfg.sample_rate * cfg.spacing_m);
  if (!(std::abs(arg) < 1.0)) throw DomainError("c*tau/(fs*d) must be below 1");
  return std::asin(arg) * 180.0 / std::numbers::pi;
}

/// Far-field least-squares direction solver with the pseudo-inverse built once per geometry.
class LeastSquaresDoa {
 public:
  explicit LeastSquaresDoa(ArrayGeometry geom) : geom_(std::move(geom)) {
    const auto& ref = geom_.mics.at(geom_.reference);
    for (int i = 0; i < static_cast<int>(geom_.mics.size()); ++i) {
      if (i == geom_.reference) continue;
      edges_.push_back(i);
      rows_.push_back({geom_.mics[i].x - ref.x, geom_.mics[i].y - ref.y});
    }
    pinv_ = pseudo_inverse(rows_);
  }

  const ArrayGeometry& geometry() const { return geom_; }
  /// Microphone index of each row of M, in order.
  const std::vector<int>& edge_mics() const { return edges_; }
  const std::vector<Point>& rows() const { return rows_; }
  /// Row 0 holds the x-coefficients, row 1 the y-coefficients, one per edge microphone.
  const std::array<std::vector<double>, 2>& pseudo_inverse() const { return pinv_; }

  DoaSolution solve(std::span<const double> range_diffs) const {
    if (range_diffs.size() != rows_.size()) throw SizeError("range difference count != edge microphones");
    DoaSolution s;
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      s.direction[0] -= pinv_[0][i] * range_diffs[i];
      s.direction[1] -= pinv_[1][i] * range_diffs[i];
    }
    finish(s, rows_, range_diffs);
    return s;
  }

  /// Solves with only the rows flagged in `use` (per-call normal equations).
  DoaSolution solve_subset(std::span<const double> range_diffs, const std::vector<bool>& use) const {
    std::vector<Point> rows;
    std::vector<double> d;
    for (std::size_t i = 0; i < rows_.size(); ++i)
      if (use[i]) {
        rows.push_back(rows_[i]);
        d.push_back(range_diffs[i]);
      }
    const auto p = pseudo_inverse(rows);
    DoaSolution s;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      s.direction[0] -= p[0][i] * d[i];
      s.direction[1] -= p[1][i] * d[i];
    }
    finish(s, rows, d);
    return s;
  }

 private:
  static std::array<std::vector<double>, 2> pseudo_inverse(const std::vector<Point>& rows) {
    double sxx = 0.0, sxy = 0.0, syy = 0.0, scale = 0.0;
    for (const auto& r : rows) {
      sxx += r.x * r.x;
      sxy += r.x * r.y;
      syy += r.y * r.y;
    }
    scale = sxx + syy;
    const double det = sxx * syy - sxy * sxy;
    if (!(scale > 0.0) || std::abs(det) <= 1e-12 * scale * scale)
      throw GeometryError("microphone geometry is degenerate (M^T M singular)");
    const double i00 = syy / det, i01 = -sxy / det, i11 = sxx / det;
    std::array<std::vector<double>, 2> p;
    for (const auto& r : rows) {
      p[0].push_back(i00 * r.x + i01 * r.y);
      p[1].push_back(i01 * r.x + i11 * r.y);
    }
    return p;
  }

  static void finish(DoaSolution& s, const std::vector<Point>& rows, std::span<const double> d) {
    double res = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double e = d[i] + rows[i].x * s.direction[0] + rows[i].y * s.direction[1];
      res += e * e;
    }
    s.residual = std::sqrt(res);
    if (std::hypot(s.direction[0], s.direction[1]) < 1e-9) return;
    double az = std::atan2(s.direction[1], s.direction[0]) * 180.0 / std::numbers::pi;
    if (az < 0.0) az += 360.0;
    if (az >= 360.0) az -= 360.0;
    s.azimuth_deg = az;
  }

  ArrayGeometry geom_;
  std::vector<int> edges_;
  std::vector<Point> rows_;
  std::array<std::vector<double>, 2> pinv_;
};

/// Closed-form azimuth from range differences (one per edge microphone).
inline DoaSolution ls_azimuth(std::span<const double> range_diffs, const ArrayGeometry& geom) {
  return LeastSquaresDoa(geom).solve(range_diffs);
}

/// Full chain on one multichannel frame: GCC per (edge, reference) pair, least squares, quantization.
inline DoaSolution estimate_doa(const dsp::AudioFrame& frame, const LeastSquaresDoa& solver, const DoaConfig& cfg) {
  const auto& geom = solver.geometry();
  if (frame.channels != static_cast<int>(geom.mics.size()))
    throw ConfigError("frame channel count does not match the array geometry");
  const int lag_limit = max_lag(geom, cfg);
  const auto ref = dsp::normalize(frame.channel(geom.reference));

  DelayVector dv;
  int unreliable = 0;
  for (int mic : solver.edge_mics()) {
    const auto x = dsp::normalize(frame.channel(mic));
    const auto g = gcc_delay(x, ref, lag_limit, cfg);
    dv.lags.push_back(g.lag);
    dv.range_diffs.push_back(cfg.speed_of_sound * g.lag / cfg.sample_rate);
    dv.reliable.push_back(g.reliable);
    dv.peaks.push_back(g.peak);
    if (!g.reliable) ++unreliable;
  }

  DoaSolution s;
  if (unreliable >= cfg.max_unreliable_pairs) {
    s.unreliable_pairs = unreliable;
    s.delays = std::move(dv);
    return s;
  }
  s = unreliable == 0 ? solver.solve(dv.range_diffs) : solver.solve_subset(dv.range_diffs, dv.reliable);
  s.unreliable_pairs = unreliable;
  s.quantized_deg = quantize_azimuth(s.azimuth_deg, cfg.resolution_deg);
  s.delays = std::move(dv);
  return s;
}

inline DoaSolution estimate_doa(const dsp::AudioFrame& frame, const ArrayGeometry& geom, const DoaConfig& cfg = {}) {
  return estimate_doa(frame, LeastSquaresDoa(geom), cfg);
}

}  // namespace urbansound::doa
