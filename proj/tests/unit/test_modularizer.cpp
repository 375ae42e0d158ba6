// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "modkit/modularize/modularizer.hpp"

using namespace modkit;

namespace {

template <class T>
Tensor<T> random_batch(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor<T> t(std::move(s));
  for (auto& v : t.storage()) v = static_cast<T>(nd(rng));
  return t;
}

ModuleMaskSet random_masks(const std::vector<SlotInfo>& slots, std::mt19937_64& rng, double p_on) {
  std::bernoulli_distribution on(p_on);
  ModuleMaskSet ms;
  ms.classes = {0, 1};
  for (const auto& s : slots) {
    BinaryMask m(s.width);
    for (auto& v : m) v = on(rng) ? 1 : 0;
    if (popcount(m) == 0) m[rng() % m.size()] = 1;
    ms.layer_names.push_back(s.name);
    ms.layers.push_back(m);
  }
  return ms;
}

ModuleMaskSet all_ones(const std::vector<SlotInfo>& slots, std::vector<std::int32_t> classes) {
  ModuleMaskSet ms;
  ms.classes = std::move(classes);
  for (const auto& s : slots) {
    ms.layer_names.push_back(s.name);
    ms.layers.emplace_back(s.width, 1);
  }
  return ms;
}

template <class T>
std::vector<std::pair<ModularModel<T>, Shape>> zoo(std::uint64_t seed) {
  std::vector<std::pair<ModularModel<T>, Shape>> z;
  z.emplace_back(build_mlp<T>(3, {9, 7, 5}, 3, seed), Shape{6, 3});
  z.emplace_back(build_cnn<T>({2, 8, 8}, {5, 6}, 3, seed), Shape{4, 2, 8, 8});
  z.emplace_back(build_tiny_vit<T>({1, 8, 8}, 4, 8, 3, 2, 3, false, seed), Shape{3, 1, 8, 8});
  z.emplace_back(build_tiny_vit<T>({1, 8, 8}, 2, 8, 2, 2, 3, true, seed), Shape{2, 1, 8, 8});
  return z;
}

}  // namespace

TEST_CASE("threshold votes: strict comparison and fallback") {
  CHECK(threshold_votes({3}, 3, 0.9) == BinaryMask{1});
  CHECK(threshold_votes({2}, 3, 0.9) == BinaryMask{0 + 1});  // fallback keeps the only neuron
  CHECK(threshold_votes({2, 3}, 3, 0.9) == BinaryMask{0, 1});
  CHECK(threshold_votes({9, 10}, 10, 0.9) == BinaryMask{0, 1});  // 0.9 is not > 0.9
  CHECK(threshold_votes({1, 4, 4, 2}, 10, 0.9) == BinaryMask{0, 1, 0, 0});  // tie -> lowest index
  CHECK_THROWS_AS(threshold_votes({1}, 0, 0.5), UsageError);
}

TEST_CASE("prune_linear keeps the selected rows and columns") {
  Rng rng(1);
  auto l = Linear<double>::make(20, 5, rng);
  for (std::size_t i = 0; i < 5; ++i) l.bias.value[i] = static_cast<double>(i);
  auto p = prune_linear(l, BinaryMask{1, 0, 1, 0, 0});
  CHECK(p.out_dim() == 2);
  CHECK(p.in_dim() == 20);
  for (std::size_t j = 0; j < 20; ++j) {
    CHECK(p.weight.value[j] == l.weight.value[j]);
    CHECK(p.weight.value[20 + j] == l.weight.value[2 * 20 + j]);
  }
  CHECK(p.bias.value[1] == 2.0);
  auto same = prune_linear(l, BinaryMask(5, 1));
  CHECK(bitwise_equal(same.weight.value, l.weight.value));

  auto s = Linear<double>::make(2, 3, rng);
  BinaryMask in{1, 0};
  auto q = prune_linear(s, BinaryMask(3, 1), &in);
  CHECK(q.in_dim() == 1);
  CHECK(q.out_dim() == 3);
  for (std::size_t r = 0; r < 3; ++r) CHECK(q.weight.value[r] == s.weight.value[r * 2]);
  CHECK_THROWS_AS(prune_linear(s, BinaryMask(3, 0)), InvariantError);
  CHECK(prune_linear(s, BinaryMask(3, 0), nullptr, true).out_dim() == 0);
  CHECK_THROWS_AS(prune_linear(s, BinaryMask(2, 1)), ShapeError);
}

TEST_CASE("all-ones mask set: sub-model reproduces the source forward") {
  for (auto& [m, shape] : zoo<float>(3)) {
    auto info = m.slots();
    std::vector<std::int32_t> all{0, 1, 2};
    auto ms = all_ones(info, all);
    auto sub = decompose(m, ms, HeadInit::kOriginalRows);
    auto x = random_batch<float>(shape, 4);
    Tape<float> t1(false), t2(false);
    auto a = m.forward(t1, x, MaskMode::kOff);
    auto b = sub.net.forward(t2, x);
    CHECK(bitwise_equal(a.logits.value(), b.logits.value()));
    CHECK(equivalence_check(m, ms, sub, x).max() == 0.0);
  }
}

TEST_CASE("m_QK is the intersection of query and key masks") {
  auto m = build_tiny_vit<float>({1, 4, 4}, 2, 3, 2, 2, 2, true, 1);
  auto ms = all_ones(m.slots(), {0});
  ms.layers[0] = {1, 1, 0};
  ms.layers[1] = {1, 0, 0};
  auto sub = decompose(m, ms);
  CHECK(sub.net.blocks[1].attn.query.out_dim() == 1);
  CHECK(sub.net.blocks[1].attn.key.out_dim() == 1);
  CHECK(sub.retained[0] == std::vector<std::size_t>{0});
  CHECK(sub.net.attn_scale == m.net.attn_scale);
  CHECK(sub.net.blocks[0].attn.query.out_dim() == 3);
}

TEST_CASE("random masks: decomposed features equal masked features (float and double)") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    for (auto& [m, shape] : zoo<float>(20 + trial)) {
      auto ms = random_masks(m.slots(), rng, 0.5);
      auto sub = decompose(m, ms);
      auto rep = equivalence_check(m, ms, sub, random_batch<float>(shape, trial));
      CHECK(rep.max() <= 1e-5);
      CHECK(rep.removed_max == 0.0);
    }
    for (auto& [m, shape] : zoo<double>(40 + trial)) {
      auto ms = random_masks(m.slots(), rng, 0.4);
      auto sub = decompose(m, ms);
      CHECK(equivalence_check(m, ms, sub, random_batch<double>(shape, trial)).max() <= 1e-10);
    }
  }
}

TEST_CASE("an empty query/key intersection still decomposes exactly") {
  auto m = build_tiny_vit<float>({1, 8, 8}, 4, 4, 2, 2, 2, false, 5);
  auto ms = all_ones(m.slots(), {1});
  ms.layers[0] = {1, 1, 0, 0};
  ms.layers[1] = {0, 0, 1, 1};
  auto sub = decompose(m, ms);
  CHECK(sub.net.blocks[0].attn.query.out_dim() == 0);
  CHECK(equivalence_check(m, ms, sub, random_batch<float>({3, 1, 8, 8}, 2)).max() <= 1e-5);
}

TEST_CASE("equivalence oracle detects a corrupted kept weight") {
  for (auto& [m, shape] : zoo<float>(7)) {
    std::mt19937_64 rng(2);
    auto ms = random_masks(m.slots(), rng, 0.6);
    auto sub = decompose(m, ms);
    auto x = random_batch<float>(shape, 1);
    REQUIRE(equivalence_check(m, ms, sub, x).max() == 0.0);
    auto params = sub.net.named_parameters();
    for (auto& [n, p] : params) {
      if (n.find("hidden.0.weight") == 0 || n.find("conv.0.weight") == 0 || n.find("mlp.fc1.weight") != std::string::npos) {
        if (p->value.size()) p->value[0] += 0.5f;
        break;
      }
    }
    CHECK(equivalence_check(m, ms, sub, x).max() > 0.0);
  }
}

TEST_CASE("a NaN deviation is reported, not swallowed") {
  EquivalenceReport r;
  r.activation_deviation = std::numeric_limits<double>::quiet_NaN();
  CHECK(std::isnan(r.max()));
  CHECK_FALSE(r.max() <= 1e-5);
  auto m = build_mlp<float>(2, {4}, 2, 1);
  auto ms = all_ones(m.slots(), {0, 1});
  auto sub = decompose(m, ms);
  sub.net.hidden[0].weight.value[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK(std::isnan(equivalence_check(m, ms, sub, random_batch<float>({3, 2}, 1)).max()));
}

TEST_CASE("CNN kernel removal drops head column blocks") {
  auto m = build_cnn<float>({1, 8, 8}, {4, 3}, 3, 2);
  auto ms = all_ones(m.slots(), {0, 2});
  ms.layers[0] = {1, 0, 1, 1};
  ms.layers[1] = {0, 1, 0};
  auto sub = decompose(m, ms, HeadInit::kOriginalRows);
  CHECK(sub.net.convs[0].out_channels() == 3);
  CHECK(sub.net.convs[1].in_channels() == 3);
  CHECK(sub.net.convs[1].out_channels() == 1);
  CHECK(sub.net.head.in_dim() == 4);  // one channel, 2x2 spatial
  CHECK(sub.feature_index == std::vector<std::size_t>{4, 5, 6, 7});
  CHECK(sub.net.head.out_dim() == 2);
  CHECK(sub.net.head.weight.value[0] == m.net.head.weight.value[4]);
  CHECK(sub.net.head.weight.value[4] == m.net.head.weight.value[2 * 12 + 4]);
}

TEST_CASE("topology mismatch names the layer") {
  auto m = build_mlp<float>(2, {4, 3}, 2);
  auto ms = all_ones(m.slots(), {0});
  ms.layers[1].push_back(1);
  try {
    decompose(m, ms);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    CHECK(std::string(e.what()).find("hidden.1") != std::string::npos);
  }
}

TEST_CASE("merge_masks examples") {
  ModuleMaskSet a, b;
  a.classes = {2};
  b.classes = {0};
  a.layer_names = b.layer_names = {"x"};
  a.layers = {{1, 0, 1}};
  b.layers = {{0, 0, 1}};
  auto u = merge_masks(a, b);
  CHECK(u.layers[0] == BinaryMask{1, 0, 1});
  CHECK(u.classes == std::vector<std::int32_t>{0, 2});
  CHECK(merge_masks(a, a).layers == a.layers);
  ModuleMaskSet c = a;
  c.layer_names = {"y"};
  CHECK_THROWS_AS(merge_masks(a, c), InvariantError);
}

TEST_CASE("extraction is monotone in the threshold and matches a manual vote") {
  auto m = build_mlp<float>(2, {16, 16}, 3, 8);
  auto x = random_batch<float>({40, 2}, 3);
  auto lo = extract_module_mask(m, x, 0.3);
  auto hi = extract_module_mask(m, x, 0.8);
  for (std::size_t l = 0; l < lo.layers.size(); ++l)
    for (std::size_t j = 0; j < lo.layers[l].size(); ++j) {
      if (hi.layers[l][j] && popcount(hi.layers[l]) > 1) CHECK(lo.layers[l][j]);
    }
  Tape<float> t(false);
  auto r = m.forward(t, x, MaskMode::kGenerate);
  std::vector<std::size_t> votes(16, 0);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 16; ++j) votes[j] += r.masks[0].value()[i * 16 + j] > 0.0f;
  CHECK(lo.layers[0] == threshold_votes(votes, 40, 0.3));
  CHECK(lo.samples == 40);
  CHECK_THROWS_AS(extract_module_mask(m, Tensor<float>(Shape{0, 2}), 0.5), UsageError);
}

TEST_CASE("finetune: label checks, head-only freezing, untrained head near chance") {
  auto d = gen_blobs(4, 60, 2, 1.0, 3);
  auto m = build_mlp<float>(2, {16, 16}, 4, 1);
  TrainConfig cfg;
  cfg.epochs = 5;
  train(m, d, cfg);
  auto ms = merge_masks(extract_class_mask(m, d, 0, 0.9), extract_class_mask(m, d, 1, 0.9));
  auto target = d.restrict_to({0, 1}, true);

  auto sub = decompose(m, ms, HeadInit::kFresh, 4);
  std::vector<Tensor<float>> before;
  for (auto& [n, p] : sub.net.named_parameters()) before.push_back(p->value);
  FinetuneOptions opt;
  opt.epochs = 3;
  opt.head_only = true;
  finetune(sub, target, opt);
  std::size_t i = 0;
  bool head_moved = false;
  for (auto& [n, p] : sub.net.named_parameters()) {
    if (n.rfind("head.", 0) == 0) {
      head_moved = head_moved || !bitwise_equal(p->value, before[i]);
    } else {
      CHECK(bitwise_equal(p->value, before[i]));
      CHECK_FALSE(p->frozen);
    }
    ++i;
  }
  CHECK(head_moved);
  CHECK_THROWS_AS(finetune(sub, d, opt), UsageError);

  double mean = 0;
  const auto test = target.indices(Split::kTest);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto fresh = decompose(m, ms, HeadInit::kFresh, s);
    mean += accuracy(predict(fresh.net, target, test), target.labels(test));
  }
  mean /= 20;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.3));
}
