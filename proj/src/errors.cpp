// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/errors.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include "modkit/log.hpp"

namespace modkit {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

ShapeError::ShapeError(const std::string& op, const std::vector<std::size_t>& a,
                       const std::vector<std::size_t>& b)
    : UsageError(op + ": shape mismatch " + shape_to_string(a) + " vs " + shape_to_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : UsageError(op + ": " + detail) {}

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kWarn)};
std::mutex g_log_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) < g_level.load()) return;
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "[modkit " << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace modkit
