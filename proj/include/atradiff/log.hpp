#ifndef ATRADIFF_LOG_HPP_
#define ATRADIFF_LOG_HPP_

#include <functional>
#include <string_view>

namespace atradiff {

enum class LogLevel { kInfo, kWarning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

// Replaces the process-wide sink (stderr by default). Returns the old one.
LogSink set_log_sink(LogSink sink);

void log_info(std::string_view message);
void log_warning(std::string_view message);

}  // namespace atradiff

#endif  // ATRADIFF_LOG_HPP_
