// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <iostream>
#include <string_view>

namespace xgrain {

enum class LogLevel { quiet, warn, info };

inline LogLevel& log_level() {
  static LogLevel level = LogLevel::info;
  return level;
}

inline void log_info(std::string_view msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[xgrain] " << msg << '\n';
}

inline void log_warn(std::string_view msg) {
  if (log_level() >= LogLevel::warn) std::cerr << "[xgrain] warning: " << msg << '\n';
}

}  // namespace xgrain
