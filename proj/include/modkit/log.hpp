// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace modkit {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kSilent = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::kInfo, m); }
inline void log_warn(std::string_view m) { log(LogLevel::kWarn, m); }

}  // namespace modkit
