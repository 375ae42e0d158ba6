// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/train/trainer.hpp"

#include <cmath>

#include "modkit/log.hpp"

namespace modkit {

template <class T>
Sgd<T>::Sgd(std::vector<Parameter<T>*> params, double lr, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (auto* p : params_) velocity_.emplace_back(p->value.shape());
}

template <class T>
void Sgd<T>::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

template <class T>
void Sgd<T>::step() {
  const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    if (p.frozen) continue;
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* v = velocity_[i].ptr();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T gj = g[j] + wd * w[j];
      v[j] = mu * v[j] + gj;
      w[j] -= lr * (gj + mu * v[j]);
    }
  }
}

template <class T>
TrainHistory fit(const std::vector<Parameter<T>*>& params, const StepFn<T>& step, const std::function<double()>& eval,
                 const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const auto pool = data.indices(Split::kTrain);
  if (pool.empty()) throw UsageError("train: dataset has no training samples");
  Sgd<T> opt(params, cfg.lr, cfg.momentum, cfg.weight_decay);
  TrainHistory hist;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(data, pool, cfg.batch_size, cfg.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::size_t n_contra = 0, n_coh = 0, n_coup = 0;
    for (std::size_t s = 0; s < batches.size(); ++s) {
      const auto x = data.gather<T>(batches[s]);
      const auto y = data.labels(batches[s]);
      opt.zero_grad();
      Tape<T> tape;
      auto terms = step(tape, x, y);
      const double lv = static_cast<double>(terms.total.value().item());
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(s + 1));
      }
      tape.backward(terms.total);
      opt.step();
      rec.loss += lv;
      rec.ce += static_cast<double>(terms.ce.value().item());
      if (terms.contrastive.valid()) {
        rec.contrastive += static_cast<double>(terms.contrastive.value().item());
        ++n_contra;
      }
      if (terms.n_cohesion) {
        rec.cohesion += terms.cohesion_mean;
        ++n_coh;
      }
      if (terms.n_coupling) {
        rec.coupling += terms.coupling_mean;
        ++n_coup;
      }
    }
    const double nb = static_cast<double>(batches.size());
    rec.loss /= nb;
    rec.ce /= nb;
    if (n_contra) rec.contrastive /= static_cast<double>(n_contra);
    if (n_coh) rec.cohesion /= static_cast<double>(n_coh);
    if (n_coup) rec.coupling /= static_cast<double>(n_coup);
    rec.test_accuracy = eval ? eval() : 0.0;
    log(LogLevel::kDebug, "epoch " + std::to_string(rec.epoch) + " loss " + std::to_string(rec.loss) + " acc " +
                              std::to_string(rec.test_accuracy));
    hist.push_back(rec);
  }
  return hist;
}

template <class T>
TrainHistory train(ModularModel<T>& model, const Dataset& data, const TrainConfig& cfg) {
  std::vector<Parameter<T>*> params;
  for (auto& [n, p] : model.named_parameters()) params.push_back(p);
  const auto test = data.indices(Split::kTest);
  StepFn<T> step = [&](Tape<T>& tape, const Tensor<T>& x, const std::vector<std::int32_t>& y) {
    auto r = model.forward(tape, x, MaskMode::kGenerate);
    return total_loss(r.logits, y, r.masks, cfg.loss);
  };
  std::function<double()> eval = [&]() {
    if (test.empty()) return 0.0;
    return accuracy(predict(model, data, test), data.labels(test));
  };
  return fit<T>(params, step, eval, data, cfg);
}

namespace {

template <class T>
void argmax_rows(const Tensor<T>& logits, std::vector<std::int32_t>& out) {
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[r * k + j] > logits[r * k + best]) best = j;
    out.push_back(static_cast<std::int32_t>(best));
  }
}

constexpr std::size_t kEvalChunk = 256;

}  // namespace

template <class T>
std::vector<std::int32_t> predict(ModularModel<T>& model, const Dataset& data, const std::vector<std::size_t>& idx,
                                  MaskMode mode, const std::vector<BinaryMask>* fixed) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < idx.size(); i += kEvalChunk) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                  idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + kEvalChunk)));
    Tape<T> tape(false);
    auto r = model.forward(tape, data.gather<T>(part), mode, fixed);
    argmax_rows(r.logits.value(), out);
  }
  return out;
}

template <class T>
std::vector<std::int32_t> predict(Backbone<T>& net, const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < idx.size(); i += kEvalChunk) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                  idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + kEvalChunk)));
    Tape<T> tape(false);
    auto r = net.forward(tape, data.gather<T>(part));
    argmax_rows(r.logits.value(), out);
  }
  return out;
}

double accuracy(const std::vector<std::int32_t>& pred, const std::vector<std::int32_t>& truth) {
  if (pred.size() != truth.size()) throw UsageError("accuracy: size mismatch");
  if (pred.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

#define MODKIT_INSTANTIATE_TRAIN(T)                                                                                 \
  template class Sgd<T>;                                                                                            \
  template TrainHistory fit<T>(const std::vector<Parameter<T>*>&, const StepFn<T>&, const std::function<double()>&, \
                               const Dataset&, const TrainConfig&);                                                 \
  template TrainHistory train<T>(ModularModel<T>&, const Dataset&, const TrainConfig&);                             \
  template std::vector<std::int32_t> predict<T>(ModularModel<T>&, const Dataset&, const std::vector<std::size_t>&,   \
                                                MaskMode, const std::vector<BinaryMask>*);                          \
  template std::vector<std::int32_t> predict<T>(Backbone<T>&, const Dataset&, const std::vector<std::size_t>&);

MODKIT_INSTANTIATE_TRAIN(float)
MODKIT_INSTANTIATE_TRAIN(double)

}  // namespace modkit
