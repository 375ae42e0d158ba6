// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation quantities: Jaccard cohesion/coupling of extracted neuron sets,
// retention rates, FLOPs, and the loss-comparison and sweep harnesses.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modkit/modularize/modularizer.hpp"

namespace modkit {

/// |A∩B| / |A∪B| over sorted, duplicate-free index sets. Two empty sets give 1.
double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
double jaccard(const BinaryMask& a, const BinaryMask& b);

/// Mean Jaccard over unordered pairs; nullopt with fewer than two sets.
/// empty_pairs (optional) counts pairs where both sets were empty.
std::optional<double> mean_pairwise_jaccard(const std::vector<BinaryMask>& sets, std::size_t* empty_pairs = nullptr);

/// Per-sample Bin(mask) joined over all maskable layers, generate mode.
template <class T>
std::vector<BinaryMask> sample_neuron_sets(ModularModel<T>& model, const Tensor<T>& batch);

struct ModularityScores {
  std::vector<std::int32_t> classes;          // classes with samples in the split
  std::vector<std::optional<double>> cohesion;  // per class; nullopt below 2 samples
  std::vector<BinaryMask> modules;            // union of sample sets per class
  std::optional<double> mean_cohesion;
  std::optional<double> coupling;  // nullopt below 2 classes
  std::size_t empty_pairs = 0;
};

struct EvalOptions {
  Split split = Split::kTest;
  /// Cohesion pairs come from at most this many samples per class.
  std::size_t cohesion_cap = 200;
  std::uint64_t seed = 0;
};

/// Cohesion per class (pairwise sample Jaccard) and coupling (pairwise
/// Jaccard of class unions) in one pass over the split.
template <class T>
ModularityScores eval_modularity(ModularModel<T>& model, const Dataset& data, const EvalOptions& opt = {});
template <class T>
std::optional<double> eval_cohesion(ModularModel<T>& model, const Dataset& data, std::int32_t c,
                                    const EvalOptions& opt = {});
template <class T>
std::optional<double> eval_coupling(ModularModel<T>& model, const Dataset& data, const EvalOptions& opt = {});

struct Retention {
  std::size_t neurons_kept = 0, neurons_total = 0;
  std::size_t kernels_kept = 0, kernels_total = 0;
  std::size_t weights_kept = 0, weights_total = 0;

  std::optional<double> nrr() const;
  std::optional<double> krr() const;
  double wrr() const;
  /// NRR when the model has neuron slots, KRR otherwise.
  double unit_rate() const;
};

/// Parameter count of a backbone excluding the classification head.
template <class T>
std::size_t backbone_weight_count(const Backbone<T>& net);

/// Slot scope follows the mask set (retained first blocks carry no masks);
/// WRR covers every block.
template <class T>
Retention retention(const ModularModel<T>& model, const ModuleMaskSet& masks);
template <class T>
Retention retention(const SubModule<T>& sub);

std::uint64_t linear_flops(std::size_t in, std::size_t out, std::size_t tokens);
/// 2 x multiply-adds of every linear, conv and attention matmul; norms,
/// activations, pooling and padding scatters count 0.
template <class T>
std::uint64_t estimate_flops(const Backbone<T>& net);

struct ModuleMetrics {
  std::vector<std::int32_t> classes;
  std::optional<double> nrr, krr;
  double wrr = 0;
  std::uint64_t flops = 0;
};

struct MetricsReport {
  std::string label;
  double accuracy = 0;
  std::vector<ModuleMetrics> modules;
  std::optional<double> mean_cohesion;
  std::optional<double> coupling;
  std::size_t empty_pairs = 0;
  std::uint64_t flops_full = 0;
  std::vector<std::pair<std::string, std::string>> config;

  /// Mean over modules of unit retention (NRR, or KRR for CNNs).
  double mean_retention() const;
  std::string text() const;
  /// Flat key = value lines, per-module values as comma lists.
  std::string key_values() const;
};

struct ReportOptions {
  double threshold = 0.9;
  Split mask_split = Split::kTrain;
  EvalOptions eval;
};

/// Accuracy on the eval split, one module per class, modularity scores.
template <class T>
MetricsReport build_report(ModularModel<T>& model, const Dataset& data, const ReportOptions& opt = {});
/// Accuracy of a standalone module on data already remapped to its classes.
template <class T>
MetricsReport module_report(SubModule<T>& sub, const Dataset& target, Split split = Split::kTest);

std::vector<std::pair<std::string, std::string>> config_echo(const ModelSpec& spec, const TrainConfig& cfg);

struct ArmResult {
  TrainHistory history;
  MetricsReport report;
};

/// Trains two models from the same spec/seed/data: arm A with the contrastive
/// objective, arm B with the direct-sum baseline.
std::pair<ArmResult, ArmResult> compare_losses(const Dataset& data, const ModelSpec& spec, TrainConfig arm_a,
                                               TrainConfig arm_b, const ReportOptions& opt = {});

struct SweepPoint {
  double value = 0;
  ArmResult result;
};

/// param is "alpha" or "tau".
std::vector<SweepPoint> sweep(const Dataset& data, const ModelSpec& spec, const TrainConfig& base,
                              const std::string& param, const std::vector<double>& values,
                              const ReportOptions& opt = {});

std::string history_table(const TrainHistory& h);

}  // namespace modkit
