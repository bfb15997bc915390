#include "svll/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace svll {

namespace {

LogLevel initial_level() {
    const char* env = std::getenv("SVLL_LOG");
    if (env == nullptr) return LogLevel::info;
    if (std::strcmp(env, "error") == 0) return LogLevel::error;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
}

LogLevel& level_ref() {
    static LogLevel lvl = initial_level();
    return lvl;
}

void emit(const char* tag, const std::string& msg) {
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

LogLevel log_level() { return level_ref(); }

void set_log_level(LogLevel lvl) { level_ref() = lvl; }

void log_error(const std::string& msg) { emit("error", msg); }

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::info) emit("info", msg);
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::debug) emit("debug", msg);
}

}  // namespace svll
