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

// Shared fixtures for the test binaries.

#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>

#include "urbansound/metadata.hpp"

namespace urbansound::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("urbansound_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline Timestamp at(const std::string& rfc3339) { return *parse_rfc3339(rfc3339); }

/// A well-formed record with a peaked score vector.
inline MetadataRecord make_record(const std::string& node, int cls, double spl, std::optional<int> azimuth,
                                  Timestamp ts, double ac = 0.9) {
  classify::TriggeredEvent ev;
  ev.class_index = cls;
  ev.average_confidence = ac;
  ev.timestamp = ts;
  for (int k = 0; k < kNumClasses; ++k) ev.scores[k] = k == cls ? 0.9 : 0.01;
  return pack_metadata(ev, spl, spl - 3.0, azimuth, node);
}

}  // namespace urbansound::testing
