// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Error classes shared by every layer of the toolkit. The CLI maps them onto
// exit codes (usage -> 1, data/parse -> 2, invariant -> 3).

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace modkit {

/// Caller violated a documented precondition (bad argument, bad config).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named op.
class ShapeError : public UsageError {
 public:
  ShapeError(const std::string& op, const std::vector<std::size_t>& a,
             const std::vector<std::size_t>& b);
  ShapeError(const std::string& op, const std::string& detail);
};

/// Mathematically undefined input (e.g. cosine of a zero vector).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data. `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Stored content hash does not match the payload.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bundle written by an unsupported format version.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An internal invariant was broken (topology mismatch, failed equivalence).
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace modkit
