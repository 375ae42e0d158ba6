// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Small parsing/formatting helpers shared by configs, specs and manifests.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace modkit {

/// "a=1,b=2" -> {a:1, b:2}. Throws UsageError on a missing '='.
std::map<std::string, std::string> parse_kv_list(std::string_view s, char sep = ',');

double parse_double(std::string_view s, std::string_view what);
std::uint64_t parse_u64(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);
/// "64x64" -> {64,64}; empty string -> {}.
std::vector<std::size_t> parse_dims(std::string_view s, std::string_view what, char sep = 'x');
std::vector<std::int32_t> parse_int_list(std::string_view s, std::string_view what, char sep = ',');
std::vector<double> parse_double_list(std::string_view s, std::string_view what, char sep = ',');

/// Shortest text that parses back to the same double.
std::string format_double(double v);
std::string join_dims(const std::vector<std::size_t>& d, char sep = 'x');

std::string_view trim(std::string_view s);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

}  // namespace modkit
