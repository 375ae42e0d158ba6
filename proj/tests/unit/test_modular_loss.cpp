// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "modkit/log.hpp"
#include "modkit/loss/modular_loss.hpp"
#include "modkit/tensor/grad_check.hpp"

using namespace modkit;

namespace {

using Rows = std::vector<std::vector<double>>;

// Independent oracle: plain loops over std::vector.
double cos_ref(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return d / std::sqrt(na * nb);
}

double cohesion_ref(const Rows& r) {
  double s = 0;
  int n = 0;
  for (std::size_t j = 0; j < r.size(); ++j)
    for (std::size_t k = j + 1; k < r.size(); ++k, ++n) s += cos_ref(r[j], r[k]);
  return s / n;
}

double coupling_ref(const Rows& a, const Rows& b) {
  double s = 0;
  for (const auto& x : a)
    for (const auto& y : b) s += cos_ref(x, y);
  return s / static_cast<double>(a.size() * b.size());
}

Tensor<double> to_tensor(const Rows& r) {
  std::vector<double> flat;
  for (const auto& x : r) flat.insert(flat.end(), x.begin(), x.end());
  return Tensor<double>(Shape{r.size(), r[0].size()}, flat);
}

Rows random_rows(std::size_t n, std::size_t l, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Rows r(n, std::vector<double>(l));
  for (auto& x : r)
    for (auto& v : x) v = u(rng) < 0.3 ? 0.0 : u(rng);
  return r;
}

}  // namespace

TEST_CASE("cohesion examples") {
  Tape<double> t(false);
  CHECK(cohesion_loss(t.constant(to_tensor({{0.3, 0.7}, {0.3, 0.7}}))).value().item() == doctest::Approx(1.0));
  CHECK(cohesion_loss(t.constant(to_tensor({{1, 0}, {0, 1}}))).value().item() == 0.0);
  CHECK(cohesion_loss(t.constant(to_tensor({{1, 0}, {1, 0}, {0, 1}}))).value().item() == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS(cohesion_loss(t.constant(to_tensor({{1, 0}}))), UsageError);
}

TEST_CASE("coupling examples") {
  Tape<double> t(false);
  auto a = t.constant(to_tensor({{1, 0}}));
  auto b = t.constant(to_tensor({{1, 0}, {0, 1}}));
  CHECK(coupling_loss(a, b).value().item() == doctest::Approx(0.5));
  CHECK(coupling_loss(a, a).value().item() == doctest::Approx(1.0));
  CHECK(coupling_loss(a, t.constant(to_tensor({{0, 2}}))).value().item() == 0.0);
}

TEST_CASE("aggregation and contrastive examples") {
  Tape<double> t(false);
  auto half = t.constant(Tensor<double>::scalar(0.5));
  auto zero = t.constant(Tensor<double>::scalar(0.0));
  CHECK(aggregate(t, {half}, 0.2).value().item() == doctest::Approx(12.182493960703473));
  CHECK(aggregate(t, {zero}, 0.7).value().item() == 1.0);
  CHECK(aggregate(t, {zero, zero}, 0.2).value().item() == 1.0);
  set_log_level(LogLevel::kSilent);
  CHECK(aggregate<double>(t, {}, 0.2).value().item() == 0.0);
  set_log_level(LogLevel::kWarn);
  auto c = t.constant(Tensor<double>::scalar(3.0));
  CHECK(contrastive_loss(c, c).value().item() == doctest::Approx(std::log(2.0)));
  auto coh = t.constant(Tensor<double>::scalar(12.182));
  auto one = t.constant(Tensor<double>::scalar(1.0));
  CHECK(contrastive_loss(coh, one).value().item() == doctest::Approx(-std::log(12.182 / 13.182)));
  CHECK(contrastive_loss(coh, t.constant(Tensor<double>::scalar(1e-12))).value().item() < 1e-12);
}

TEST_CASE("batched class terms agree with the loop oracle on random batches") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t per = 2 + trial % 3, classes = 2 + trial % 3, l = 3 + trial % 7;
    Rows all;
    std::vector<std::int32_t> labels;
    std::vector<Rows> by(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      by[c] = random_rows(per, l, rng);
    }
    // Interleave so class rows are not contiguous.
    for (std::size_t j = 0; j < per; ++j)
      for (std::size_t c = 0; c < classes; ++c) {
        all.push_back(by[c][j]);
        labels.push_back(static_cast<std::int32_t>(c));
      }
    Tape<double> t(false);
    auto g = group_masks<double>({t.constant(to_tensor(all))}, labels);
    std::vector<Var<double>> coh, coup;
    class_terms(g, coh, coup);
    REQUIRE(coh.size() == classes);
    REQUIRE(coup.size() == classes * (classes - 1) / 2);
    std::size_t p = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      CHECK(coh[c].value().item() == doctest::Approx(cohesion_ref(by[c])).epsilon(1e-12));
      for (std::size_t d = c + 1; d < classes; ++d, ++p) {
        CHECK(coup[p].value().item() == doctest::Approx(coupling_ref(by[c], by[d])).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("group_masks joins layers per sample and orders classes") {
  Tape<double> t(false);
  auto m1 = t.constant(Tensor<double>(Shape{3, 1, 2}, {1, 2, 3, 4, 5, 6}));
  auto m2 = t.constant(Tensor<double>(Shape{3, 1, 1}, {7, 8, 9}));
  auto g = group_masks<double>({m1, m2}, {2, 0, 2});
  CHECK(g.vectors.shape() == Shape{3, 3});
  CHECK(g.vectors.value().storage() == std::vector<double>{1, 2, 7, 3, 4, 8, 5, 6, 9});
  CHECK(g.classes == std::vector<std::int32_t>{0, 2});
  CHECK(g.rows[1] == std::vector<std::size_t>{0, 2});
}

TEST_CASE("symmetry and scale invariance") {
  std::mt19937_64 rng(8);
  auto a = random_rows(3, 5, rng);
  auto b = random_rows(4, 5, rng);
  Tape<double> t(false);
  const double base = cohesion_loss(t.constant(to_tensor(a))).value().item();
  Rows perm{a[2], a[0], a[1]};
  CHECK(cohesion_loss(t.constant(to_tensor(perm))).value().item() == doctest::Approx(base).epsilon(1e-14));
  auto ab = coupling_loss(t.constant(to_tensor(a)), t.constant(to_tensor(b))).value().item();
  auto ba = coupling_loss(t.constant(to_tensor(b)), t.constant(to_tensor(a))).value().item();
  CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
  Rows scaled = a;
  for (auto& r : scaled)
    for (auto& v : r) v *= 7.5;
  CHECK(cohesion_loss(t.constant(to_tensor(scaled))).value().item() == doctest::Approx(base).epsilon(1e-13));
  CHECK(base >= 0.0);
  CHECK(base <= 1.0 + 1e-12);
}

TEST_CASE("contrastive loss is monotone in both aggregates") {
  Tape<double> t(false);
  auto f = [&](double coh, double coup) {
    return contrastive_loss(t.constant(Tensor<double>::scalar(coh)), t.constant(Tensor<double>::scalar(coup))).value().item();
  };
  for (double coh : {1.0, 2.0, 10.0})
    for (double coup : {0.5, 1.0, 3.0}) {
      CHECK(f(coh, coup) > 0.0);
      CHECK(f(coh * 1.01, coup) < f(coh, coup));
      CHECK(f(coh, coup * 1.01) > f(coh, coup));
    }
}

TEST_CASE("total loss reductions") {
  Tape<double> t(false);
  auto logits = t.constant(Tensor<double>(Shape{4, 4}));
  auto masks = t.constant(Tensor<double>(Shape{4, 1, 3}, 0.5));
  LossConfig cfg;
  cfg.alpha = 0.0;
  auto r = total_loss<double>(logits, {0, 1, 2, 3}, {masks}, cfg);
  CHECK(r.total.value().item() == doctest::Approx(std::log(4.0)));
  CHECK_THROWS_AS(total_loss<double>(logits, {0, 1, 2, 4}, {masks}, cfg), UsageError);
  LossConfig base;
  base.baseline_mode = true;
  base.alpha_b = 0;
  base.beta_b = 0;
  CHECK(total_loss<double>(logits, {0, 0, 1, 1}, {masks}, base).total.value().item() == doctest::Approx(std::log(4.0)));
  base.alpha_b = 0.3;
  base.beta_b = 0.7;
  // Identical masks: cohesion 1 and coupling 1.
  CHECK(total_loss<double>(logits, {0, 0, 1, 1}, {masks}, base).total.value().item() ==
        doctest::Approx(std::log(4.0) + 0.3 - 0.7));
  LossConfig bad;
  bad.tau = 0;
  CHECK_THROWS_AS(total_loss<double>(logits, {0, 0, 1, 1}, {masks}, bad), UsageError);
}

TEST_CASE("full objective gradient matches finite differences") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Tensor<double> m1(Shape{4, 1, 3}), m2(Shape{4, 1, 2}), lg(Shape{4, 2});
  for (auto* t : {&m1, &m2, &lg})
    for (auto& v : t->storage()) v = u(rng);
  Parameter<double> p1(m1), p2(m2), pl(lg);
  for (bool baseline : {false, true}) {
    LossConfig cfg;
    cfg.alpha = 0.8;
    cfg.baseline_mode = baseline;
    auto err = grad_check_params(
        [&](Tape<double>& t) {
          return total_loss<double>(t.param(pl), {0, 1, 0, 1}, {t.param(p1), t.param(p2)}, cfg).total;
        },
        {&p1, &p2, &pl});
    CHECK(err < 1e-3);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("zero mask vectors count as dissimilar instead of failing") {
  Tape<double> t(false);
  auto v = t.constant(to_tensor({{0, 0}, {1, 0}}));
  CHECK(cohesion_loss(v).value().item() == 0.0);
}
