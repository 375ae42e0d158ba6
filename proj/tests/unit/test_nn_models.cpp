// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <random>

#include "doctest.h"
#include "modkit/nn/network.hpp"
#include "modkit/tensor/grad_check.hpp"

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

std::size_t count_linear(const Backbone<float>& b) {
  std::size_t n = b.hidden.size() + 1;
  return n;
}

std::vector<BinaryMask> ones_for(const std::vector<SlotInfo>& slots) {
  std::vector<BinaryMask> out;
  for (const auto& s : slots) out.emplace_back(s.width, 1);
  return out;
}

}  // namespace

TEST_CASE("build_mlp layer and slot counts") {
  auto m = build_mlp(2, {64, 64}, 4);
  CHECK(count_linear(m.net) == 3);
  CHECK(m.slots().size() == 2);
  CHECK(m.generators.size() == 2);
  auto m2 = build_mlp(784, {128}, 10);
  CHECK(count_linear(m2.net) == 2);
  CHECK(m2.slots().size() == 1);
  CHECK_THROWS_AS(build_mlp(2, {}, 4), UsageError);
  CHECK_THROWS_AS(build_mlp(2, {8}, 1), UsageError);
}

TEST_CASE("build_cnn kernel counts") {
  auto m = build_cnn({1, 28, 28}, {8, 16}, 10);
  std::size_t kernels = 0;
  for (const auto& s : m.slots()) {
    CHECK(s.kind == SlotKind::kKernel);
    kernels += s.width;
  }
  CHECK(m.net.convs.size() == 2);
  CHECK(kernels == 24);
  CHECK(build_cnn({3, 8, 8}, {4}, 3).slots()[0].width == 4);
  CHECK_THROWS_AS(build_cnn({1, 8, 8}, {}, 3), UsageError);
}

TEST_CASE("build_tiny_vit token counts and errors") {
  auto m = build_tiny_vit({1, 28, 28}, 7, 32, 2, 2, 10);
  CHECK(m.spec().num_tokens() == 17);
  CHECK(m.net.pos_embed.value.shape() == Shape{1, 17, 32});
  ModelSpec big = m.spec();
  big.input_shape = {3, 224, 224};
  big.patch = 16;
  CHECK(big.num_tokens() == 197);
  CHECK_THROWS_AS(build_tiny_vit({1, 28, 28}, 5, 32, 2, 2, 10), UsageError);
  CHECK_THROWS_AS(build_tiny_vit({1, 8, 8}, 4, 16, 1, 2, 3, true), UsageError);
  CHECK(m.slots().size() == 12);
  auto r = build_tiny_vit({1, 8, 8}, 4, 16, 3, 2, 3, true);
  CHECK(r.slots().size() == 12);
  CHECK(r.slots()[0].name == "block.1.attn.query");
  CHECK_FALSE(r.net.blocks[0].maskable);
}

TEST_CASE("head is never maskable") {
  for (const auto& s : build_mlp(3, {5, 6}, 4).slots()) CHECK(s.name.rfind("head", 0) != 0);
  for (const auto& s : build_tiny_vit({1, 8, 8}, 4, 8, 2, 2, 3).slots()) CHECK(s.name.find("head") == std::string::npos);
}

TEST_CASE("forward off equals fixed all-ones bitwise, all architectures") {
  std::vector<std::pair<ModularModel<float>, Shape>> cases;
  cases.emplace_back(build_mlp(3, {7, 5}, 3, 11), Shape{6, 3});
  cases.emplace_back(build_cnn({2, 8, 8}, {3, 4}, 3, 12), Shape{5, 2, 8, 8});
  cases.emplace_back(build_tiny_vit({1, 8, 8}, 4, 8, 2, 2, 3, false, 13), Shape{4, 1, 8, 8});
  for (auto& [m, shape] : cases) {
    auto x = random_batch<float>(shape, 3);
    auto ones = ones_for(m.slots());
    Tape<float> t1(false), t2(false);
    auto a = m.forward(t1, x, MaskMode::kOff);
    auto b = m.forward(t2, x, MaskMode::kFixed, &ones);
    CHECK(bitwise_equal(a.logits.value(), b.logits.value()));
    CHECK(a.masks.empty());
    CHECK(b.activations.size() == m.slots().size());
  }
}

TEST_CASE("fixed zero mask zeroes the column for every token") {
  auto m = build_tiny_vit({1, 8, 8}, 4, 8, 2, 2, 3, false, 5);
  auto x = random_batch<float>({3, 1, 8, 8}, 8);
  auto masks = ones_for(m.slots());
  for (auto& mk : masks) mk[2] = 0;
  Tape<float> t(false);
  auto r = m.forward(t, x, MaskMode::kFixed, &masks);
  for (const auto& a : r.activations) {
    const auto& v = a.value();
    const std::size_t w = v.shape().back();
    for (std::size_t i = 2; i < v.size(); i += w) CHECK(v[i] == 0.0f);
  }
  auto c = build_cnn({1, 8, 8}, {4}, 3, 5);
  auto cm = ones_for(c.slots());
  cm[0][1] = 0;
  Tape<float> t2(false);
  auto rc = c.forward(t2, random_batch<float>({2, 1, 8, 8}, 1), MaskMode::kFixed, &cm);
  const auto& act = rc.activations[0].value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 64; ++p) CHECK(act[(b * 4 + 1) * 64 + p] == 0.0f);
}

TEST_CASE("fixed mode rejects mask-length mismatch, naming the layer") {
  auto m = build_mlp(2, {4, 3}, 2);
  std::vector<BinaryMask> bad{BinaryMask(4, 1), BinaryMask(5, 1)};
  Tape<float> t(false);
  auto x = random_batch<float>({2, 2}, 1);
  try {
    m.forward(t, x, MaskMode::kFixed, &bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("hidden.1") != std::string::npos);
  }
  CHECK_THROWS_AS(m.forward(t, random_batch<float>({2, 3}, 1), MaskMode::kOff), ShapeError);
}

TEST_CASE("generate mode is deterministic and masks lie in [0,1)") {
  auto m = build_tiny_vit({1, 8, 8}, 4, 8, 2, 2, 3, false, 21);
  auto x = random_batch<float>({4, 1, 8, 8}, 2);
  Tape<float> t1(false), t2(false);
  auto a = m.forward(t1, x, MaskMode::kGenerate);
  auto b = m.forward(t2, x, MaskMode::kGenerate);
  REQUIRE(a.masks.size() == 12);
  for (std::size_t i = 0; i < a.masks.size(); ++i) {
    CHECK(bitwise_equal(a.masks[i].value(), b.masks[i].value()));
    CHECK(a.masks[i].shape() == Shape{4, 1, m.slots()[i].width});
    for (float v : a.masks[i].value().data()) {
      CHECK(v >= 0.0f);
      CHECK(v < 1.0f);
    }
  }
}

TEST_CASE("same seed builds identical models; cast round-trips") {
  auto a = build_cnn({1, 8, 8}, {3}, 3, 99);
  auto b = build_cnn({1, 8, 8}, {3}, 3, 99);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(pa[i].second->value, pb[i].second->value));
  auto d = a.cast<double>();
  auto back = d.cast<float>();
  auto pc = back.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(pa[i].second->value, pc[i].second->value));
}

TEST_CASE("masked forward gradients match finite differences (double)") {
  auto m = build_tiny_vit<double>({1, 4, 4}, 2, 4, 2, 2, 3, false, 4);
  auto x = random_batch<double>({3, 1, 4, 4}, 6);
  std::vector<Parameter<double>*> params;
  for (auto& [n, p] : m.named_parameters()) {
    if (n.find("generator.0") == 0 || n.find("block.1.attn.key") == 0 || n == "cls_token") params.push_back(p);
  }
  auto err = grad_check_params(
      [&](Tape<double>& t) {
        auto r = m.forward(t, x, MaskMode::kGenerate);
        return cross_entropy(r.logits, {0, 1, 2});
      },
      params);
  CHECK(err < 1e-5);
}
