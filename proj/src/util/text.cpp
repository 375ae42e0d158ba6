// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/util/text.hpp"

#include <charconv>
#include <cstdio>

#include "modkit/errors.hpp"

namespace modkit {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

[[noreturn]] void bad(std::string_view what, std::string_view s, const char* kind) {
  throw UsageError(std::string(what) + ": expected " + kind + ", got '" + std::string(s) + "'");
}

}  // namespace

std::map<std::string, std::string> parse_kv_list(std::string_view s, char sep) {
  std::map<std::string, std::string> out;
  for (auto part : split(s, sep)) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string_view::npos) throw UsageError("expected key=value, got '" + std::string(part) + "'");
    out[std::string(trim(part.substr(0, eq)))] = std::string(trim(part.substr(eq + 1)));
  }
  return out;
}

double parse_double(std::string_view s, std::string_view what) {
  s = trim(s);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) bad(what, s, "a number");
  return v;
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
  s = trim(s);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) bad(what, s, "a non-negative integer");
  return v;
}

bool parse_bool(std::string_view s, std::string_view what) {
  s = trim(s);
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  bad(what, s, "a boolean");
}

std::vector<std::size_t> parse_dims(std::string_view s, std::string_view what, char sep) {
  std::vector<std::size_t> out;
  for (auto p : split(trim(s), sep)) out.push_back(static_cast<std::size_t>(parse_u64(p, what)));
  return out;
}

std::vector<std::int32_t> parse_int_list(std::string_view s, std::string_view what, char sep) {
  std::vector<std::int32_t> out;
  for (auto p : split(trim(s), sep)) {
    std::int32_t v = 0;
    auto [q, ec] = std::from_chars(p.data(), p.data() + p.size(), v);
    if (ec != std::errc() || q != p.data() + p.size() || p.empty()) bad(what, p, "an integer");
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(std::string_view s, std::string_view what, char sep) {
  std::vector<double> out;
  for (auto p : split(trim(s), sep)) out.push_back(parse_double(p, what));
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string join_dims(const std::vector<std::size_t>& d, char sep) {
  std::string s;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(d[i]);
  }
  return s;
}

std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace modkit
