// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <unistd.h>

#include "doctest.h"
#include "modkit/train/trainer.hpp"

using namespace modkit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto p = fs::temp_directory_path() / ("modkit_trainer_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

bool same_params(ModularModel<float>& a, ModularModel<float>& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bitwise_equal(pa[i].second->value, pb[i].second->value)) return false;
  return true;
}

TrainConfig quick(std::uint64_t seed, std::size_t epochs) {
  TrainConfig c;
  c.seed = seed;
  c.epochs = epochs;
  return c;
}

}  // namespace

TEST_CASE("IDX reader: header semantics and errors") {
  const auto dir = temp_dir();
  std::vector<std::uint8_t> px(2 * 28 * 28);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i % 256);
  write_idx_images((dir / "img").string(), 2, 28, 28, px);
  write_idx_labels((dir / "lab").string(), {3, 9});
  auto d = load_idx((dir / "img").string(), (dir / "lab").string());
  CHECK(d.size() == 2);
  CHECK(d.sample_shape == Shape{1, 28, 28});
  CHECK(d.y == std::vector<std::int32_t>{3, 9});
  CHECK(d.n_classes == 10);
  CHECK(d.x[255] == 1.0f);
  CHECK(d.x[0] == 0.0f);

  write_idx_labels((dir / "lab3").string(), {1, 2, 3});
  CHECK_THROWS_AS(load_idx((dir / "img").string(), (dir / "lab3").string()), ParseError);

  // Wrong magic: swap the files.
  try {
    load_idx((dir / "lab").string(), (dir / "img").string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }

  // Truncated pixel payload reports where the data ran out.
  {
    std::ifstream in(dir / "img", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    bytes.resize(100);
    std::ofstream out(dir / "short", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    load_idx((dir / "short").string(), (dir / "lab").string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 100);
  }
  fs::remove_all(dir);
}

TEST_CASE("gen_blobs is deterministic and sized") {
  auto a = gen_blobs(4, 500, 2, 1.0, 7);
  auto b = gen_blobs(4, 500, 2, 1.0, 7);
  CHECK(a.size() == 2000);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.indices(Split::kTest).size() == 400);
  CHECK(gen_blobs(4, 500, 2, 1.0, 8).x != a.x);
  CHECK_THROWS_AS(gen_blobs(1, 10, 2, 1.0, 1), UsageError);
  auto hd = gen_blobs(3, 10, 5, 0.5, 1);
  CHECK(hd.sample_shape == Shape{5});
  hd.validate();
}

TEST_CASE("load_dataset spec strings") {
  auto d = load_dataset("blobs:classes=3,per_class=10,dim=2,spread=0.5,seed=2");
  CHECK(d.size() == 30);
  auto p = load_dataset("patterns:classes=2,per_class=5,shape=1x8x8");
  CHECK(p.sample_shape == Shape{1, 8, 8});
  CHECK_THROWS_AS(load_dataset("blobs:classes=3,bogus=1"), UsageError);
  CHECK_THROWS_AS(load_dataset("nope:"), UsageError);
}

TEST_CASE("make_batches: every present class has at least two samples") {
  auto d = gen_blobs(10, 53, 2, 1.0, 3);
  const auto pool = d.indices(Split::kAll);
  for (std::uint64_t epoch = 0; epoch < 3; ++epoch) {
    auto batches = make_batches(d, pool, 128, 5, epoch);
    std::multiset<std::size_t> seen;
    for (const auto& b : batches) {
      CHECK(b.size() <= 128);
      std::map<std::int32_t, int> count;
      for (auto i : b) {
        ++count[d.y[i]];
        seen.insert(i);
      }
      for (const auto& [c, n] : count) CHECK(n >= 2);
    }
    CHECK(seen.size() == pool.size());
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == pool.size());
  }
  CHECK(make_batches(d, pool, 128, 5, 1) == make_batches(d, pool, 128, 5, 1));
  CHECK(make_batches(d, pool, 128, 5, 1) != make_batches(d, pool, 128, 5, 2));
  CHECK_THROWS_AS(make_batches(d, pool, 3, 5, 1), UsageError);

  auto single = d.restrict_to({4}, true);
  for (const auto& b : make_batches(single, single.indices(Split::kAll), 16, 1, 0)) {
    for (auto i : b) CHECK(single.y[i] == 0);
  }
}

TEST_CASE("config parsing, formatting and validation") {
  auto c = parse_config("# comment\nlr = 0.1\nloss.alpha=2.5  # trailing\nfirst_block_retained = true\nepochs=7\n");
  CHECK(c.lr == 0.1);
  CHECK(c.loss.alpha == 2.5);
  CHECK(c.first_block_retained);
  CHECK(c.epochs == 7);
  CHECK(c.momentum == 0.9);
  auto back = parse_config(format_config(c));
  CHECK(format_config(back) == format_config(c));
  CHECK_THROWS_AS(parse_config("lr 0.1"), ParseError);
  try {
    parse_config("lr = 0.1\nunknown = 3\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 9);
  }
  TrainConfig bad;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = TrainConfig{};
  bad.threshold = 0.0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("Nesterov step matches the hand update") {
  Parameter<double> p(Tensor<double>(Shape{2}, {1.0, -2.0}));
  Sgd<double> opt({&p}, 0.1, 0.9);
  p.grad = Tensor<double>(Shape{2}, {0.5, 1.0});
  opt.step();
  // v = g; w -= lr * (g + mu * v)
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.9 * 0.5)));
  p.grad = Tensor<double>(Shape{2}, {0.5, 1.0});
  opt.step();
  const double v2 = 0.9 * 0.5 + 0.5;
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.95 - 0.1 * (0.5 + 0.9 * v2)));
  p.frozen = true;
  const double before = p.value[1];
  opt.step();
  CHECK(p.value[1] == before);
}

TEST_CASE("epochs = 0 leaves the model unchanged") {
  auto d = gen_blobs(4, 20, 2, 1.0, 1);
  auto m = build_mlp(2, {8}, 4, 3);
  auto ref = build_mlp(2, {8}, 4, 3);
  auto h = train(m, d, quick(1, 0));
  CHECK(h.empty());
  CHECK(same_params(m, ref));
}

TEST_CASE("alpha = 0 training equals a masked-CE-only reference bitwise") {
  auto d = gen_blobs(4, 40, 2, 1.0, 2);
  auto cfg = quick(4, 3);
  cfg.loss.alpha = 0.0;
  auto a = build_mlp(2, {16, 16}, 4, 9);
  train(a, d, cfg);

  auto b = build_mlp(2, {16, 16}, 4, 9);
  std::vector<Parameter<float>*> params;
  for (auto& [n, p] : b.named_parameters()) params.push_back(p);
  StepFn<float> ce_only = [&](Tape<float>& t, const Tensor<float>& x, const std::vector<std::int32_t>& y) {
    LossTerms<float> r;
    r.ce = cross_entropy(b.forward(t, x, MaskMode::kGenerate).logits, y);
    r.total = r.ce;
    return r;
  };
  fit<float>(params, ce_only, {}, d, cfg);
  CHECK(same_params(a, b));
}

TEST_CASE("training is deterministic") {
  auto d = gen_blobs(3, 30, 2, 1.0, 5);
  auto a = build_mlp(2, {8, 8}, 3, 1);
  auto b = build_mlp(2, {8, 8}, 3, 1);
  auto ha = train(a, d, quick(2, 2));
  auto hb = train(b, d, quick(2, 2));
  CHECK(same_params(a, b));
  CHECK(ha.back().loss == hb.back().loss);
}

TEST_CASE("non-finite loss aborts naming epoch and step") {
  auto d = gen_blobs(2, 40, 2, 1.0, 5);
  auto m = build_mlp(2, {4}, 2, 1);
  auto cfg = quick(1, 5);
  cfg.lr = 1e30;
  try {
    train(m, d, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch ") != std::string::npos);
    CHECK(msg.find("step ") != std::string::npos);
  }
}

TEST_CASE("spread 0 blobs are fit perfectly") {
  auto d = gen_blobs(4, 25, 2, 0.0, 3);
  auto m = build_mlp(2, {16}, 4, 2);
  train(m, d, quick(1, 15));
  const auto idx = d.indices(Split::kTrain);
  CHECK(accuracy(predict(m, d, idx), d.labels(idx)) == 1.0);
}

TEST_CASE("blobs training: accuracy, coupling trend and contrastive trend over 3 seeds") {
  int ok = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto d = gen_blobs(4, 500, 2, 1.0, seed);
    auto m = build_mlp(2, {64, 64}, 4, seed);
    auto h = train(m, d, quick(seed, 30));
    REQUIRE(h.size() == 30);
    for (const auto& r : h) CHECK(std::isfinite(r.loss));
    const bool pass = h.back().test_accuracy >= 0.95 && h.back().coupling < h.front().coupling &&
                      h.back().contrastive <= h.front().contrastive;
    ok += pass;
  }
  CHECK(ok >= 2);
}
