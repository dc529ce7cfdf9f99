/*
 * Copyright 2026 GFDANN Toolkit Contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace gfdann {

// Log severities, ordered so that a threshold comparison suffices.
enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kSilent = 4 };

namespace detail {

inline LogLevel parse_log_level(const char* value) {
  if (value == nullptr) return LogLevel::kInfo;
  std::string v(value);
  for (char& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (v == "debug") return LogLevel::kDebug;
  if (v == "info") return LogLevel::kInfo;
  if (v == "warn" || v == "warning") return LogLevel::kWarn;
  if (v == "error") return LogLevel::kError;
  if (v == "silent" || v == "off") return LogLevel::kSilent;
  return LogLevel::kInfo;
}

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

// Threshold read once from the GFDANN_LOG environment variable
// (debug|info|warn|error|silent; default info).
inline LogLevel log_level() {
  static const LogLevel level = detail::parse_log_level(std::getenv("GFDANN_LOG"));
  return level;
}

inline void log_message(LogLevel severity, const std::string& message) {
  if (severity < log_level() || severity == LogLevel::kSilent) return;
  const char* tag = severity == LogLevel::kDebug  ? "debug"
                    : severity == LogLevel::kInfo ? "info"
                    : severity == LogLevel::kWarn ? "warn"
                                                  : "error";
  std::lock_guard<std::mutex> lock(detail::log_mutex());
  std::cerr << "[" << tag << "] " << message << "\n";
}

inline void log_debug(const std::string& message) { log_message(LogLevel::kDebug, message); }
inline void log_info(const std::string& message) { log_message(LogLevel::kInfo, message); }
inline void log_warn(const std::string& message) { log_message(LogLevel::kWarn, message); }
inline void log_error(const std::string& message) { log_message(LogLevel::kError, message); }

}  // namespace gfdann
