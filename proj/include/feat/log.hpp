// Copyright 2026 The FEAT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal stderr logger. The level comes from the FEAT_LOG environment
// variable (error, warn, info, debug; default warn) and never affects results.

#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace feat::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

inline Level level_from_env() {
  const char* env = std::getenv("FEAT_LOG");
  if (env == nullptr) return Level::kWarn;
  const std::string_view s(env);
  if (s == "error") return Level::kError;
  if (s == "info") return Level::kInfo;
  if (s == "debug") return Level::kDebug;
  return Level::kWarn;
}

inline Level& current_level() {
  static Level level = level_from_env();
  return level;
}

inline void write(Level lvl, std::string_view tag, std::string_view msg) {
  if (static_cast<int>(lvl) > static_cast<int>(current_level())) return;
  std::cerr << "[feat " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::kError, "error", msg); }
inline void warn(std::string_view msg) { write(Level::kWarn, "warn", msg); }
inline void info(std::string_view msg) { write(Level::kInfo, "info", msg); }
inline void debug(std::string_view msg) { write(Level::kDebug, "debug", msg); }

}  // namespace feat::log
