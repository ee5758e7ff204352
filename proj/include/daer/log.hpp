#pragma once

#include <string>

// Minimal stderr logger gated by DAER_LOG (debug|info|warn|error|off).
namespace daer::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

Level threshold();
void set_threshold(Level level);

void write(Level level, const std::string& msg);

inline void debug(const std::string& msg) { write(Level::debug, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void warn(const std::string& msg) { write(Level::warn, msg); }
inline void error(const std::string& msg) { write(Level::error, msg); }

}  // namespace daer::log
