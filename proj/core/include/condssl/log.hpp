#pragma once

#include <functional>
#include <string>

namespace condssl {

enum class LogLevel { Info, Warning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Replaces the process-wide sink (default: warnings to stderr, info dropped).
// Returns the previous sink so tests can restore it.
LogSink set_log_sink(LogSink sink);

void log_info(const std::string& message);
void log_warning(const std::string& message);

}  // namespace condssl
