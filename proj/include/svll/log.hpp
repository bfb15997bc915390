#pragma once

#include <string>

namespace svll {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// Current verbosity; initialized once from SVLL_LOG (error|info|debug),
/// defaulting to info.
LogLevel log_level();
void set_log_level(LogLevel lvl);

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace svll
