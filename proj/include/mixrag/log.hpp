#pragma once

#include <functional>
#include <string>

namespace mixrag {

using WarningHandler = std::function<void(const std::string&)>;

// Non-fatal conditions (clamped k, dropped duplicates, truncated evidence).
// The default handler prints to stderr.
void warn(const std::string& message);

// Replaces the process-wide handler and returns the previous one.
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace mixrag
