#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace ma::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Verbosity from MA_LOG (error|warn|info|debug or 0-3); defaults to warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("MA_LOG");
    if (!env) return Level::warn;
    const std::string_view v(env);
    if (v == "error" || v == "0") return Level::error;
    if (v == "warn" || v == "1") return Level::warn;
    if (v == "info" || v == "2") return Level::info;
    if (v == "debug" || v == "3") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[ma " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::error, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

}  // namespace ma::log
