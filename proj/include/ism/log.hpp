#pragma once

// Minimal stderr logging. ISM_LOG=error|warn|info|debug (default warn).

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace ism::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level parse_level(std::string_view s) {
  if (s == "error") return Level::Error;
  if (s == "info") return Level::Info;
  if (s == "debug") return Level::Debug;
  return Level::Warn;
}

inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("ISM_LOG");
    return env ? parse_level(env) : Level::Warn;
  }();
  return level;
}

inline bool enabled(Level l) { return static_cast<int>(l) <= static_cast<int>(threshold()); }

inline void write(Level l, const std::string& msg) {
  if (!enabled(l)) return;
  static constexpr const char* kNames[] = {"error", "warn", "info", "debug"};
  std::cerr << "[" << kNames[static_cast<int>(l)] << "] " << msg << '\n';
}

inline void warn(const std::string& msg) { write(Level::Warn, msg); }
inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void debug(const std::string& msg) { write(Level::Debug, msg); }

}  // namespace ism::log
