#include "mixrag/log.hpp"

#include <iostream>
#include <mutex>

namespace mixrag {

namespace {

std::mutex handler_mutex;
WarningHandler handler = [](const std::string& message) { std::cerr << "warning: " << message << '\n'; };

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(handler_mutex);
  if (handler) handler(message);
}

WarningHandler set_warning_handler(WarningHandler next) {
  std::lock_guard lock(handler_mutex);
  auto previous = std::move(handler);
  handler = std::move(next);
  return previous;
}

}  // namespace mixrag
