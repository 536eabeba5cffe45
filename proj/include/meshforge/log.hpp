#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace meshforge {

// Verbosity from MESHFORGE_LOG: quiet | warn | info (default) | debug.
inline int log_level() {
  static int level = [] {
    const char* env = std::getenv("MESHFORGE_LOG");
    if (!env) return 2;
    if (std::strcmp(env, "quiet") == 0) return 0;
    if (std::strcmp(env, "warn") == 0) return 1;
    if (std::strcmp(env, "debug") == 0) return 3;
    return 2;
  }();
  return level;
}

inline void log_warn(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[meshforge] warning: %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 2) std::fprintf(stderr, "[meshforge] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 3) std::fprintf(stderr, "[meshforge] debug: %s\n", msg.c_str());
}

}  // namespace meshforge
