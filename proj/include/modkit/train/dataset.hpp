// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "modkit/tensor/tensor.hpp"

namespace modkit {

enum class Split { kTrain, kTest, kAll };

struct Dataset {
  Shape sample_shape;
  std::size_t n_classes = 0;
  std::vector<float> x;  // row-major, one sample after another
  std::vector<std::int32_t> y;
  std::vector<std::uint8_t> test;  // 1 = test split

  std::size_t size() const { return y.size(); }
  std::size_t sample_size() const { return numel(sample_shape); }

  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> indices_of_class(std::int32_t c, Split s) const;
  /// Stacks the given samples into (n, sample_shape...).
  template <class T>
  Tensor<T> gather(const std::vector<std::size_t>& idx) const;
  std::vector<std::int32_t> labels(const std::vector<std::size_t>& idx) const;

  /// Keeps only the listed classes; with remap, class classes[k] becomes k.
  Dataset restrict_to(const std::vector<std::int32_t>& classes, bool remap) const;
  /// Appends other (same sample shape); n_classes becomes the max of both.
  void append(const Dataset& other);

  /// Throws UsageError on inconsistent sizes or out-of-range labels.
  void validate() const;
};

/// IDX files: big-endian magic 0x00000803 (u8 images) / 0x00000801 (u8 labels).
/// Pixels are scaled to [0,1]; samples get shape (1,H,W).
Dataset load_idx(const std::string& images_path, const std::string& labels_path, bool test_split = false);
void write_idx_images(const std::string& path, std::size_t n, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Gaussian clusters. Centers lie on a radius-4 circle in the first two
/// dimensions (seeded rotation); further dimensions get seeded offsets.
/// The last test_fraction of each class is tagged as test.
Dataset gen_blobs(std::size_t n_classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed,
                  double test_fraction = 0.2);

/// Small synthetic images (C,H,W): each class is a fixed random template of
/// bright cells plus per-sample noise and a random one-pixel shift.
Dataset gen_patterns(std::size_t n_classes, std::size_t per_class, const Shape& image_shape, double noise,
                     std::uint64_t seed, double test_fraction = 0.2);

/// Parses "blobs:classes=4,per_class=500,dim=2,spread=1,seed=1",
/// "patterns:classes=4,per_class=200,shape=1x8x8,noise=0.3,seed=1" or
/// "idx:images=a,labels=b[,test_images=c,test_labels=d]".
Dataset load_dataset(const std::string& spec);

/// Batches of sample indices such that every class present has >= 2 samples
/// (when the class has >= 2 samples at all). Order depends only on (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(const Dataset& data, const std::vector<std::size_t>& pool,
                                                   std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

}  // namespace modkit
