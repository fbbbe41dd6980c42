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

// One node's records over two hours and the hourly aggregates they must produce.

#pragma once

#include <cstdint>
#include <vector>

#include "urbansound/taxonomy.hpp"

namespace urbansound::testing {

inline constexpr int kVoice = static_cast<int>(SoundClass::HumanVoice);
inline constexpr int kAmbient = static_cast<int>(SoundClass::Ambient);
inline constexpr int kVehicle = static_cast<int>(SoundClass::Vehicle);

struct Raw {
  int cls;
  double spl;
  int doa;
  const char* time;
};

// Raw metadata records of one node on 15 June 2020 (the worked aggregation example).
inline const std::vector<Raw> kHourlyExample{
    {kVoice, 67, 108, "11:39:49"},   {kVoice, 80, 186, "12:12:32"},   {kAmbient, 106, 319, "11:31:13"},
    {kVehicle, 67, 99, "11:37:58"},  {kVoice, 99, 137, "12:15:37"},   {kVoice, 93, 66, "12:16:34"},
    {kVehicle, 89, 282, "12:23:40"}, {kVoice, 62, 194, "12:30:19"},   {kVehicle, 87, 354, "11:21:47"},
    {kAmbient, 67, 344, "11:50:02"}, {kAmbient, 108, 7, "11:11:00"},  {kVoice, 86, 12, "12:55:53"},
    {kVoice, 95, 137, "12:55:13"},   {kVehicle, 110, 222, "11:22:59"}, {kVehicle, 77, 204, "12:27:47"},
    {kAmbient, 110, 236, "12:34:45"}, {kVehicle, 107, 272, "12:58:17"}, {kVoice, 88, 106, "12:29:43"},
    {kAmbient, 68, 70, "12:49:34"},  {kVehicle, 68, 195, "11:33:54"}};

struct Expected {
  int cls;
  const char* hour;
  std::int64_t count;
  double avg, min, max, doa;
};

inline const std::vector<Expected> kHourlyExpected{
    {kAmbient, "11", 3, 93.67, 67, 108, 223.33}, {kAmbient, "12", 2, 89, 68, 110, 153},
    {kVehicle, "11", 4, 83, 67, 110, 217.5},     {kVehicle, "12", 3, 91, 77, 107, 252.67},
    {kVoice, "11", 1, 67, 67, 67, 108},          {kVoice, "12", 7, 86.14, 62, 99, 119.71}};

}  // namespace urbansound::testing
