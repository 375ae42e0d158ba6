// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objective. Each sample's soft masks over all maskable layers are
// joined into one vector; cohesion is the mean pairwise cosine among samples
// of one class, coupling the mean cosine across two classes.

#pragma once

#include <cstdint>
#include <vector>

#include "modkit/tensor/ops.hpp"

namespace modkit {

struct LossConfig {
  double alpha = 1.0;
  double tau = 0.2;
  bool baseline_mode = false;
  double alpha_b = 0.5;
  double beta_b = 0.5;

  void validate() const;
};

/// Joined per-sample mask vectors plus the rows belonging to each class.
template <class T>
struct BatchMaskGroup {
  Var<T> vectors;  // (B, L)
  std::vector<std::int32_t> classes;
  std::vector<std::vector<std::size_t>> rows;  // rows[i] belong to classes[i]
};

/// masks: per-layer (B,1,w) or (B,w). Classes appear in ascending order.
template <class T>
BatchMaskGroup<T> group_masks(const std::vector<Var<T>>& masks, const std::vector<std::int32_t>& labels);

/// Mean cosine over unordered pairs of rows of v (n,L); n >= 2.
template <class T>
Var<T> cohesion_loss(const Var<T>& v);
/// Mean cosine over all rows(a) x rows(b).
template <class T>
Var<T> coupling_loss(const Var<T>& a, const Var<T>& b);

/// mean_i exp(values_i / tau); an empty list yields a constant 0 and a warning.
template <class T>
Var<T> aggregate(Tape<T>& tape, const std::vector<Var<T>>& values, double tau);

/// -log(coh / (coh + coup)).
template <class T>
Var<T> contrastive_loss(const Var<T>& coh_agg, const Var<T>& coup_agg);

template <class T>
struct LossTerms {
  Var<T> total;
  Var<T> ce;
  Var<T> contrastive;  // invalid when not computed
  double cohesion_mean = 0;  // raw cosine means, for logging
  double coupling_mean = 0;
  std::size_t n_cohesion = 0;
  std::size_t n_coupling = 0;
};

/// Per-class cohesion and per-pair coupling terms from one similarity matrix.
template <class T>
void class_terms(const BatchMaskGroup<T>& g, std::vector<Var<T>>& cohesion, std::vector<Var<T>>& coupling);

/// CE + alpha * contrastive, or the direct-sum baseline when cfg.baseline_mode.
template <class T>
LossTerms<T> total_loss(const Var<T>& logits, const std::vector<std::int32_t>& labels,
                        const std::vector<Var<T>>& masks, const LossConfig& cfg);

/// CE + alpha_b * mean coupling - beta_b * mean cohesion.
template <class T>
LossTerms<T> baseline_mwt_loss(const Var<T>& logits, const std::vector<std::int32_t>& labels,
                               const std::vector<Var<T>>& masks, const LossConfig& cfg);

}  // namespace modkit
