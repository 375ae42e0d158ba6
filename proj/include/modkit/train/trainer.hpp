// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "modkit/loss/modular_loss.hpp"
#include "modkit/nn/network.hpp"
#include "modkit/train/dataset.hpp"

namespace modkit {

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;  // Nesterov
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  LossConfig loss;
  double threshold = 0.9;
  bool first_block_retained = false;
  double weight_decay = 0.0;

  void validate() const;
};

/// Flat "key = value" text, one per line, '#' starts a comment. Keys match the
/// field names; loss fields are prefixed with "loss.".
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});
/// Applies one key=value override.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
std::string format_config(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double ce = 0;
  double contrastive = 0;
  double test_accuracy = 0;
  double cohesion = 0;  // batch-level mean cosine
  double coupling = 0;
};

using TrainHistory = std::vector<EpochRecord>;

/// Nesterov-momentum SGD over a fixed parameter list; frozen parameters are skipped.
template <class T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>*> params, double lr, double momentum, double weight_decay = 0.0);
  void zero_grad();
  void step();

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> velocity_;
  double lr_, momentum_, weight_decay_;
};

/// One optimization step: builds the loss on the given tape.
template <class T>
using StepFn = std::function<LossTerms<T>(Tape<T>& tape, const Tensor<T>& x, const std::vector<std::int32_t>& y)>;

/// Generic loop: stratified batches of the train split, SGD, one record per
/// epoch. eval returns test accuracy after each epoch.
template <class T>
TrainHistory fit(const std::vector<Parameter<T>*>& params, const StepFn<T>& step, const std::function<double()>& eval,
                 const Dataset& data, const TrainConfig& cfg);

/// Joint training of backbone and generators in generate mode.
template <class T>
TrainHistory train(ModularModel<T>& model, const Dataset& data, const TrainConfig& cfg);

/// Predicted classes, evaluated in chunks with a non-recording tape.
template <class T>
std::vector<std::int32_t> predict(ModularModel<T>& model, const Dataset& data, const std::vector<std::size_t>& idx,
                                  MaskMode mode = MaskMode::kGenerate, const std::vector<BinaryMask>* fixed = nullptr);
template <class T>
std::vector<std::int32_t> predict(Backbone<T>& net, const Dataset& data, const std::vector<std::size_t>& idx);

double accuracy(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth);

}  // namespace modkit
