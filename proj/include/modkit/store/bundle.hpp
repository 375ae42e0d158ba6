// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file artifact bundles.
//
// Layout (little-endian):
//   0   8  magic "MODKITBN"
//   8   4  u32 format version
//   12  8  u64 manifest length M
//   20  8  u64 FNV-1a of the manifest bytes
//   28  M  manifest, "key = value" lines
//   ..     blob: contiguous f32 tensors, row-major
//
// The manifest records blob size and FNV-1a of the blob. Encoding is
// deterministic, so decode followed by encode reproduces the input bytes.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modkit/modularize/modularizer.hpp"

namespace modkit {

inline constexpr std::uint32_t kBundleVersion = 1;
inline constexpr const char* kToolkitVersion = "modkit 0.1.0";

struct Provenance {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string source_hash;
  std::string toolkit = kToolkitVersion;
};

enum class ArtifactKind { kModel, kModules };

struct Artifact {
  ArtifactKind kind = ArtifactKind::kModel;
  ModularModel<float> model;              // kModel
  std::vector<SubModule<float>> modules;  // kModules
  Provenance provenance;
  /// Free-form key/values (config echo, verification results).
  std::vector<std::pair<std::string, std::string>> notes;
};

std::vector<std::uint8_t> encode_bundle(const Artifact& a);
/// ParseError (with byte offset) on malformed or truncated input,
/// VersionError on an unsupported version, IntegrityError on hash mismatch.
Artifact decode_bundle(const std::vector<std::uint8_t>& bytes);

/// Writes to a sibling temp file, then renames over path.
void save_bundle(const Artifact& a, const std::string& path);
Artifact load_bundle(const std::string& path);

/// Writes text via temp file and rename.
void write_file_atomic(const std::string& path, const std::string& content);

std::string config_hash(const TrainConfig& cfg);

}  // namespace modkit
