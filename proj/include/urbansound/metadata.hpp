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

// Event metadata records and their one-line JSON encoding.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>

#include <json.hpp>

#include "urbansound/classify.hpp"
#include "urbansound/common.hpp"
#include "urbansound/taxonomy.hpp"

namespace urbansound {

struct MetadataRecord {
  std::string node_id;
  int class_index = 0;
  classify::Scores score{};
  double average_confidence = 0.0;
  double spl = 0.0;
  double laeq = 0.0;
  std::optional<int> azimuth;
  Timestamp timestamp{};

  bool operator==(const MetadataRecord&) const = default;
};

inline bool valid_node_id(std::string_view id) {
  if (id.empty() || id.size() > 64 || id == "." || id == "..") return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

/// Rounds scores to 4 decimals while keeping their sum at exactly 10000 units (largest remainder).
inline classify::Scores round_scores(const classify::Scores& s) {
  std::array<long, kNumClasses> units{};
  std::array<double, kNumClasses> rem{};
  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  long used = 0;
  for (int k = 0; k < kNumClasses; ++k) {
    const double exact = total > 0.0 ? s[k] / total * 1e4 : 1e4 / kNumClasses;
    units[k] = static_cast<long>(std::floor(exact));
    rem[k] = exact - units[k];
    used += units[k];
  }
  while (used < 10000) {
    int best = 0;
    for (int k = 1; k < kNumClasses; ++k)
      if (rem[k] > rem[best]) best = k;
    ++units[best];
    rem[best] = -1.0;
    ++used;
  }
  classify::Scores out{};
  for (int k = 0; k < kNumClasses; ++k) out[k] = units[k] / 1e4;
  return out;
}

/// Builds a record whose fields are already at wire precision, so it survives a JSON round trip unchanged.
inline MetadataRecord pack_metadata(const classify::TriggeredEvent& event, double spl, double laeq,
                                    std::optional<int> azimuth, const std::string& node_id) {
  if (!valid_node_id(node_id)) throw ConfigError("invalid node id: " + node_id);
  MetadataRecord r;
  r.node_id = node_id;
  r.class_index = event.class_index;
  r.score = round_scores(event.scores);
  r.average_confidence = std::max(round4(event.average_confidence), classify::kTriggerThreshold);
  r.spl = round4(spl);
  r.laeq = round4(laeq);
  r.azimuth = azimuth;
  r.timestamp = std::chrono::floor<std::chrono::seconds>(event.timestamp);
  return r;
}

inline nlohmann::ordered_json to_json(const MetadataRecord& r) {
  nlohmann::ordered_json j;
  j["node_id"] = r.node_id;
  j["class_index"] = r.class_index;
  j["score"] = nlohmann::ordered_json::array();
  for (double v : r.score) j["score"].push_back(round4(v));
  j["average_confidence"] = round4(r.average_confidence);
  j["spl"] = round4(r.spl);
  j["laeq"] = round4(r.laeq);
  j["azimuth"] = r.azimuth ? nlohmann::ordered_json(*r.azimuth) : nlohmann::ordered_json(nullptr);
  j["timestamp"] = format_rfc3339(r.timestamp);
  return j;
}

/// Canonical single-line encoding (no trailing newline).
inline std::string serialize(const MetadataRecord& r) { return to_json(r).dump(); }

struct ValidationRules {
  int azimuth_resolution_deg = 10;
};

/// Parses and validates one record; throws ProtocolError with the rejection reason.
inline MetadataRecord parse_record(std::string_view line, const ValidationRules& rules = {}) {
  static const std::array<std::string_view, 8> kKeys{"node_id", "class_index",  "score",  "average_confidence",
                                                     "spl",     "laeq",         "azimuth", "timestamp"};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("malformed JSON");
  }
  if (!j.is_object()) throw ProtocolError("record is not an object");
  for (const auto& [key, value] : j.items())
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) throw ProtocolError("unknown key " + key);
  for (auto key : kKeys)
    if (!j.contains(key)) throw ProtocolError("missing key " + std::string(key));

  MetadataRecord r;
  if (!j["node_id"].is_string() || !valid_node_id(j["node_id"].get<std::string>()))
    throw ProtocolError("invalid node_id");
  r.node_id = j["node_id"].get<std::string>();

  if (!j["class_index"].is_number_integer()) throw ProtocolError("class_index must be an integer");
  const auto cls = j["class_index"].get<std::int64_t>();
  if (cls < 0 || cls >= kNumClasses) throw ProtocolError("class_index out of range");
  r.class_index = static_cast<int>(cls);

  const auto& score = j["score"];
  if (!score.is_array() || score.size() != kNumClasses) throw ProtocolError("score must have 11 entries");
  double sum = 0.0;
  for (int k = 0; k < kNumClasses; ++k) {
    if (!score[k].is_number()) throw ProtocolError("score entries must be numbers");
    r.score[k] = score[k].get<double>();
    if (!(r.score[k] >= 0.0 && r.score[k] <= 1.0)) throw ProtocolError("score entry outside [0, 1]");
    sum += r.score[k];
  }
  if (std::abs(sum - 1.0) > 1e-3) throw ProtocolError("score does not sum to 1");

  auto finite = [&](const char* key) {
    if (!j[key].is_number()) throw ProtocolError(std::string(key) + " must be a number");
    const double v = j[key].get<double>();
    if (!std::isfinite(v)) throw ProtocolError(std::string(key) + " must be finite");
    return v;
  };
  r.average_confidence = finite("average_confidence");
  if (r.average_confidence < classify::kTriggerThreshold || r.average_confidence > 1.0)
    throw ProtocolError("average_confidence below trigger floor or above 1");
  r.spl = finite("spl");
  r.laeq = finite("laeq");

  const auto& az = j["azimuth"];
  if (!az.is_null()) {
    if (!az.is_number_integer()) throw ProtocolError("azimuth must be an integer or null");
    const auto a = az.get<std::int64_t>();
    if (a < 0 || a >= 360) throw ProtocolError("azimuth outside [0, 360)");
    if (a % rules.azimuth_resolution_deg != 0) throw ProtocolError("azimuth not a multiple of the resolution");
    r.azimuth = static_cast<int>(a);
  }

  if (!j["timestamp"].is_string()) throw ProtocolError("timestamp must be a string");
  const auto ts = parse_rfc3339(j["timestamp"].get<std::string>());
  if (!ts) throw ProtocolError("unparseable timestamp");
  r.timestamp = std::chrono::floor<std::chrono::seconds>(*ts);
  return r;
}

}  // namespace urbansound
