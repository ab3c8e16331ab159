// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

namespace dprnn {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

namespace detail {

inline LogLevel level_from_env() {
  const char* v = std::getenv("DPRNN_LOG");
  if (v == nullptr) return LogLevel::warn;
  std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::quiet;
  if (s == "warn" || s == "1") return LogLevel::warn;
  if (s == "info" || s == "2") return LogLevel::info;
  if (s == "debug" || s == "3") return LogLevel::debug;
  return LogLevel::warn;
}

}  // namespace detail

/// Process-wide verbosity, initialized from the DPRNN_LOG environment
/// variable (quiet|warn|info|debug). Only controls diagnostics on stderr.
inline LogLevel& log_level() {
  static LogLevel level = detail::level_from_env();
  return level;
}

inline void log_warn(const std::string& msg) {
  if (log_level() >= LogLevel::warn) std::cerr << "[warn] " << msg << "\n";
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[info] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::cerr << "[debug] " << msg << "\n";
}

}  // namespace dprnn
