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

#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "urbansound/common.hpp"

namespace urbansound {

inline constexpr int kNumClasses = 11;

enum class SoundClass : int {
  Ambient = 0,
  Construction = 1,
  Vehicle = 2,
  Music = 3,
  Shout = 4,
  Rain = 5,
  Birds = 6,
  CarHorn = 7,
  Alarm = 8,
  ImpactSound = 9,
  HumanVoice = 10,
};

enum class SoundCategory { Machinery, HumanGenerated, Environmental };

struct ClassInfo {
  std::string_view label;
  SoundCategory category;
  std::string_view description;
};

/// The fixed 11-class taxonomy. Index order is part of the wire format.
inline constexpr std::array<ClassInfo, kNumClasses> kTaxonomy{{
    {"Ambient", SoundCategory::Environmental,
     "Any sound not belonging to the other 10 classes, e.g. dog barking, wind, footsteps."},
    {"Construction", SoundCategory::Machinery,
     "Non-engine sounds from construction machinery such as jackhammers, breakers and powered saws."},
    {"Vehicle", SoundCategory::Machinery,
     "Engine sounds of vehicles and engine/motor sounds of non-mobile machines, screeching brakes."},
    {"Music", SoundCategory::HumanGenerated, "Live bands, buskers, or recorded music played through a speaker."},
    {"Shout", SoundCategory::HumanGenerated, "A person or people shouting or screaming."},
    {"Rain", SoundCategory::Environmental, "Precipitation such as drizzle or heavy rain."},
    {"Birds", SoundCategory::Environmental, "Vocalization by a bird."},
    {"CarHorn", SoundCategory::Machinery, "Horn or klaxon of a car, van, bus or lorry."},
    {"Alarm", SoundCategory::Machinery, "Alert signals: fire alarms, sirens, car alarms, alarm clocks."},
    {"ImpactSound", SoundCategory::HumanGenerated,
     "Transient impacts and impact-like sounds such as shutters, trolley wheels, dragged furniture."},
    {"HumanVoice", SoundCategory::Environmental, "A person or people talking, coughing or sneezing."},
}};

inline std::string_view class_label(int index) {
  if (index < 0 || index >= kNumClasses) throw DataError("class index out of range: " + std::to_string(index));
  return kTaxonomy[index].label;
}

inline std::string_view class_label(SoundClass c) { return class_label(static_cast<int>(c)); }

inline std::optional<int> class_index(std::string_view label) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kTaxonomy[i].label == label) return i;
  return std::nullopt;
}

inline std::string_view category_name(SoundCategory c) {
  switch (c) {
    case SoundCategory::Machinery: return "Machinery";
    case SoundCategory::HumanGenerated: return "HumanGenerated";
    case SoundCategory::Environmental: return "Environmental";
  }
  return "";
}

/// Taxonomy export consumed by the coordinator as its class look-up table.
inline nlohmann::json taxonomy_json() {
  nlohmann::json classes = nlohmann::json::array();
  for (int i = 0; i < kNumClasses; ++i) {
    classes.push_back({{"index", i},
                       {"label", std::string(kTaxonomy[i].label)},
                       {"category", std::string(category_name(kTaxonomy[i].category))},
                       {"description", std::string(kTaxonomy[i].description)}});
  }
  return {{"version", 1}, {"classes", classes}};
}

/// class_index -> label mapping, bijective over 0..10.
class ClassLut {
 public:
  ClassLut() {
    for (int i = 0; i < kNumClasses; ++i) labels_[i] = std::string(kTaxonomy[i].label);
  }

  static ClassLut from_json(const nlohmann::json& j) {
    ClassLut lut;
    std::map<int, std::string> seen;
    for (const auto& c : j.at("classes")) {
      const int idx = c.at("index").get<int>();
      if (idx < 0 || idx >= kNumClasses) throw DataError("ClassLUT index out of range");
      if (!seen.emplace(idx, c.at("label").get<std::string>()).second) throw DataError("ClassLUT duplicate index");
    }
    if (static_cast<int>(seen.size()) != kNumClasses) throw DataError("ClassLUT must cover all 11 classes");
    std::map<std::string, int> labels;
    for (const auto& [i, l] : seen) {
      if (!labels.emplace(l, i).second) throw DataError("ClassLUT duplicate label " + l);
      lut.labels_[i] = l;
    }
    return lut;
  }

  const std::string& label(int index) const {
    if (index < 0 || index >= kNumClasses) throw DataError("class index out of range");
    return labels_[index];
  }

 private:
  std::array<std::string, kNumClasses> labels_;
};

}  // namespace urbansound
