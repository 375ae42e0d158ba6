// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/loss/modular_loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "modkit/log.hpp"

namespace modkit {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw UsageError("loss.tau must be > 0");
  if (!(alpha >= 0.0)) throw UsageError("loss.alpha must be >= 0");
}

namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

template <class T>
Var<T> similarity(const Var<T>& v) {
  auto u = normalize_rows(v);
  return matmul(u, transpose_last2(u));
}

Pairs within(const std::vector<std::size_t>& rows) {
  Pairs p;
  for (std::size_t j = 0; j < rows.size(); ++j)
    for (std::size_t k = j + 1; k < rows.size(); ++k) p.emplace_back(rows[j], rows[k]);
  return p;
}

Pairs across(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  Pairs p;
  for (auto i : a)
    for (auto j : b) p.emplace_back(i, j);
  return p;
}

std::vector<std::size_t> iota(std::size_t from, std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = from + i;
  return v;
}

template <class T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  Var<T> s = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) s = add(s, xs[i]);
  return scale(s, static_cast<T>(1.0 / static_cast<double>(xs.size())));
}

template <class T>
double mean_value(const std::vector<Var<T>>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0;
  for (const auto& x : xs) s += static_cast<double>(x.value().item());
  return s / static_cast<double>(xs.size());
}

}  // namespace

template <class T>
BatchMaskGroup<T> group_masks(const std::vector<Var<T>>& masks, const std::vector<std::int32_t>& labels) {
  if (masks.empty()) throw UsageError("group_masks: no masks");
  const std::size_t b = masks[0].dim(0);
  if (labels.size() != b) throw ShapeError("group_masks", Shape{labels.size()}, masks[0].shape());
  std::vector<Var<T>> flat;
  for (const auto& m : masks) {
    const Shape s = m.shape();
    if (s.empty() || s[0] != b) throw ShapeError("group_masks", s, masks[0].shape());
    flat.push_back(reshape(m, {b, m.value().size() / b}));
  }
  BatchMaskGroup<T> g;
  g.vectors = flat.size() == 1 ? flat[0] : concat(flat, 1);
  std::map<std::int32_t, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < b; ++i) by[labels[i]].push_back(i);
  for (auto& [c, r] : by) {
    g.classes.push_back(c);
    g.rows.push_back(std::move(r));
  }
  return g;
}

template <class T>
Var<T> cohesion_loss(const Var<T>& v) {
  const std::size_t n = v.dim(0);
  if (n < 2) throw UsageError("cohesion_loss: needs at least 2 samples");
  return mean_of_entries(similarity(v), within(iota(0, n)));
}

template <class T>
Var<T> coupling_loss(const Var<T>& a, const Var<T>& b) {
  const std::size_t na = a.dim(0), nb = b.dim(0);
  if (na == 0 || nb == 0) throw UsageError("coupling_loss: empty group");
  auto s = similarity(concat(std::vector<Var<T>>{a, b}, 0));
  return mean_of_entries(s, across(iota(0, na), iota(na, nb)));
}

template <class T>
Var<T> aggregate(Tape<T>& tape, const std::vector<Var<T>>& values, double tau) {
  if (!(tau > 0.0)) throw UsageError("aggregate: tau must be > 0");
  if (values.empty()) {
    log_warn("aggregate: no contributing terms in batch, contribution is 0");
    return tape.constant(Tensor<T>::scalar(T(0)));
  }
  std::vector<Var<T>> e;
  e.reserve(values.size());
  for (const auto& v : values) e.push_back(exp(scale(v, static_cast<T>(1.0 / tau))));
  return mean_of(e);
}

template <class T>
Var<T> contrastive_loss(const Var<T>& coh_agg, const Var<T>& coup_agg) {
  return sub(log(add(coh_agg, coup_agg)), log(coh_agg));
}

template <class T>
void class_terms(const BatchMaskGroup<T>& g, std::vector<Var<T>>& cohesion, std::vector<Var<T>>& coupling) {
  auto s = similarity(g.vectors);
  for (const auto& r : g.rows) {
    if (r.size() >= 2) cohesion.push_back(mean_of_entries(s, within(r)));
  }
  for (std::size_t i = 0; i < g.rows.size(); ++i)
    for (std::size_t j = i + 1; j < g.rows.size(); ++j) coupling.push_back(mean_of_entries(s, across(g.rows[i], g.rows[j])));
}

template <class T>
LossTerms<T> total_loss(const Var<T>& logits, const std::vector<std::int32_t>& labels,
                        const std::vector<Var<T>>& masks, const LossConfig& cfg) {
  if (cfg.baseline_mode) return baseline_mwt_loss(logits, labels, masks, cfg);
  cfg.validate();
  LossTerms<T> out;
  out.ce = cross_entropy(logits, labels);
  out.total = out.ce;
  if (masks.empty() || cfg.alpha == 0.0) return out;
  auto g = group_masks(masks, labels);
  std::vector<Var<T>> coh, coup;
  class_terms(g, coh, coup);
  out.cohesion_mean = mean_value(coh);
  out.coupling_mean = mean_value(coup);
  out.n_cohesion = coh.size();
  out.n_coupling = coup.size();
  if (coh.empty()) {
    log_warn("total_loss: no class has two samples in this batch; contrastive term skipped");
    return out;
  }
  auto& tape = logits.tape();
  out.contrastive = contrastive_loss(aggregate(tape, coh, cfg.tau), aggregate(tape, coup, cfg.tau));
  out.total = add(out.ce, scale(out.contrastive, static_cast<T>(cfg.alpha)));
  return out;
}

template <class T>
LossTerms<T> baseline_mwt_loss(const Var<T>& logits, const std::vector<std::int32_t>& labels,
                               const std::vector<Var<T>>& masks, const LossConfig& cfg) {
  LossTerms<T> out;
  out.ce = cross_entropy(logits, labels);
  out.total = out.ce;
  if (masks.empty() || (cfg.alpha_b == 0.0 && cfg.beta_b == 0.0)) return out;
  auto g = group_masks(masks, labels);
  std::vector<Var<T>> coh, coup;
  class_terms(g, coh, coup);
  out.cohesion_mean = mean_value(coh);
  out.coupling_mean = mean_value(coup);
  out.n_cohesion = coh.size();
  out.n_coupling = coup.size();
  if (!coup.empty() && cfg.alpha_b != 0.0) out.total = add(out.total, scale(mean_of(coup), static_cast<T>(cfg.alpha_b)));
  if (!coh.empty() && cfg.beta_b != 0.0) out.total = sub(out.total, scale(mean_of(coh), static_cast<T>(cfg.beta_b)));
  return out;
}

#define MODKIT_INSTANTIATE_LOSS(T)                                                                            \
  template BatchMaskGroup<T> group_masks<T>(const std::vector<Var<T>>&, const std::vector<std::int32_t>&);   \
  template Var<T> cohesion_loss<T>(const Var<T>&);                                                            \
  template Var<T> coupling_loss<T>(const Var<T>&, const Var<T>&);                                             \
  template Var<T> aggregate<T>(Tape<T>&, const std::vector<Var<T>>&, double);                                 \
  template Var<T> contrastive_loss<T>(const Var<T>&, const Var<T>&);                                          \
  template void class_terms<T>(const BatchMaskGroup<T>&, std::vector<Var<T>>&, std::vector<Var<T>>&);        \
  template LossTerms<T> total_loss<T>(const Var<T>&, const std::vector<std::int32_t>&,                        \
                                      const std::vector<Var<T>>&, const LossConfig&);                         \
  template LossTerms<T> baseline_mwt_loss<T>(const Var<T>&, const std::vector<std::int32_t>&,                 \
                                             const std::vector<Var<T>>&, const LossConfig&);

MODKIT_INSTANTIATE_LOSS(float)
MODKIT_INSTANTIATE_LOSS(double)

}  // namespace modkit
