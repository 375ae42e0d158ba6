// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Mask extraction, structured decomposition into physically smaller
// sub-models, module merging and fine-tuning.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "modkit/nn/network.hpp"
#include "modkit/train/trainer.hpp"

namespace modkit {

struct ModuleMaskSet {
  std::vector<std::int32_t> classes;  // ascending
  std::vector<std::string> layer_names;
  std::vector<BinaryMask> layers;
  double threshold = 0.0;
  std::size_t samples = 0;

  std::size_t retained() const;
  std::size_t total() const;
  /// Throws InvariantError when a layer is empty or names/lengths disagree.
  void validate() const;
};

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
std::vector<std::size_t> mask_indices(const BinaryMask& m);

/// Keep neuron j iff votes[j] / n > threshold; an empty result keeps the single
/// top-voted neuron (lowest index on ties).
BinaryMask threshold_votes(const std::vector<std::size_t>& votes, std::size_t n, double threshold);

/// Votes Bin(mask) over the given samples in generate mode.
template <class T>
ModuleMaskSet extract_module_mask(ModularModel<T>& model, const Tensor<T>& class_samples, double threshold,
                                  std::vector<std::int32_t> classes = {});
/// Convenience: samples of class c from the chosen split.
template <class T>
ModuleMaskSet extract_class_mask(ModularModel<T>& model, const Dataset& data, std::int32_t c, double threshold,
                                 Split split = Split::kTrain);

/// Same source topology required; classes are united, sample counts summed.
ModuleMaskSet merge_masks(const ModuleMaskSet& a, const ModuleMaskSet& b);

/// Keeps W rows where out_mask = 1 and columns where in_mask = 1 (in_mask
/// null: all columns). An all-zero out_mask is an invariant violation unless
/// allow_empty is set (query/key pairs whose intersection is empty).
template <class T>
Linear<T> prune_linear(const Linear<T>& layer, const BinaryMask& out_mask, const BinaryMask* in_mask = nullptr,
                       bool allow_empty = false);
template <class T>
Conv2d<T> prune_conv(const Conv2d<T>& layer, const BinaryMask& out_mask, const BinaryMask* in_mask = nullptr);

enum class HeadInit { kFresh, kOriginalRows };

template <class T>
struct SubModule {
  Backbone<T> net;
  ModuleMaskSet masks;
  /// Per maskable layer: source indices the sub-model still computes.
  std::vector<std::vector<std::size_t>> retained;
  /// Positions of the sub-model's features inside the source feature vector.
  std::vector<std::size_t> feature_index;
  std::size_t source_feature_dim = 0;
  std::size_t source_n_classes = 0;
  std::string source_hash;

  std::size_t n_classes() const { return net.n_classes(); }
};

/// Structural decomposition. The head is replaced by a fresh one (classes ->
/// k outputs, initialized from head_seed) or by the source head's rows for
/// those classes with pruned columns.
template <class T>
SubModule<T> decompose(const ModularModel<T>& model, const ModuleMaskSet& masks, HeadInit head = HeadInit::kFresh,
                       std::uint64_t head_seed = 0);

struct EquivalenceReport {
  double feature_deviation = 0;     // max |masked - scattered sub| over pre-head features
  double activation_deviation = 0;  // same over retained per-layer activations
  double removed_max = 0;           // max |masked activation| at removed positions
  double max() const;
};

/// Masked forward (fixed masks) vs the sub-model's native forward.
template <class T>
EquivalenceReport equivalence_check(ModularModel<T>& model, const ModuleMaskSet& masks, SubModule<T>& sub,
                                    const Tensor<T>& batch);

struct FinetuneOptions {
  std::size_t epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool head_only = false;
};

/// Trains the head and (unless head_only) every retained weight on a dataset
/// whose labels are already remapped to [0, k).
template <class T>
TrainHistory finetune(SubModule<T>& sub, const Dataset& target, const FinetuneOptions& opt);

/// FNV-1a over parameter names and values.
template <class T>
std::uint64_t parameter_hash(const std::vector<std::pair<std::string, const Parameter<T>*>>& params);

}  // namespace modkit
