// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/train/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "modkit/errors.hpp"
#include "modkit/util/text.hpp"

namespace modkit {

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (s == Split::kAll || (s == Split::kTest) == (test[i] != 0)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_of_class(std::int32_t c, Split s) const {
  std::vector<std::size_t> out;
  for (auto i : indices(s))
    if (y[i] == c) out.push_back(i);
  return out;
}

template <class T>
Tensor<T> Dataset::gather(const std::vector<std::size_t>& idx) const {
  Shape s{idx.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  Tensor<T> t(s);
  const std::size_t d = sample_size();
  T* out = t.ptr();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size()) throw UsageError("Dataset::gather: index out of range");
    const float* src = x.data() + idx[r] * d;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<T>(src[j]);
  }
  return t;
}

std::vector<std::int32_t> Dataset::labels(const std::vector<std::size_t>& idx) const {
  std::vector<std::int32_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y.at(i));
  return out;
}

Dataset Dataset::restrict_to(const std::vector<std::int32_t>& classes, bool remap) const {
  std::map<std::int32_t, std::int32_t> to;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    if (classes[k] < 0 || static_cast<std::size_t>(classes[k]) >= n_classes) {
      throw UsageError("class " + std::to_string(classes[k]) + " is outside [0, " + std::to_string(n_classes) + ")");
    }
    to[classes[k]] = remap ? static_cast<std::int32_t>(k) : classes[k];
  }
  if (to.size() != classes.size()) throw UsageError("duplicate class in class list");
  Dataset d;
  d.sample_shape = sample_shape;
  d.n_classes = remap ? classes.size() : n_classes;
  const std::size_t s = sample_size();
  for (std::size_t i = 0; i < size(); ++i) {
    auto it = to.find(y[i]);
    if (it == to.end()) continue;
    d.x.insert(d.x.end(), x.begin() + static_cast<std::ptrdiff_t>(i * s), x.begin() + static_cast<std::ptrdiff_t>((i + 1) * s));
    d.y.push_back(it->second);
    d.test.push_back(test[i]);
  }
  return d;
}

void Dataset::append(const Dataset& other) {
  if (size() == 0 && sample_shape.empty()) sample_shape = other.sample_shape;
  if (other.sample_shape != sample_shape) throw ShapeError("Dataset::append", sample_shape, other.sample_shape);
  x.insert(x.end(), other.x.begin(), other.x.end());
  y.insert(y.end(), other.y.begin(), other.y.end());
  test.insert(test.end(), other.test.begin(), other.test.end());
  n_classes = std::max(n_classes, other.n_classes);
}

void Dataset::validate() const {
  if (x.size() != size() * sample_size() || test.size() != size()) throw UsageError("Dataset: inconsistent sizes");
  for (auto v : y) {
    if (v < 0 || static_cast<std::size_t>(v) >= n_classes) {
      throw UsageError("Dataset: label " + std::to_string(v) + " outside [0, " + std::to_string(n_classes) + ")");
    }
  }
}

// IDX ------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path, 0);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw ParseError(path + ": truncated header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) | b[off + 3];
}

void put32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, bool test_split) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  const auto mi = be32(img, 0, images_path);
  if (mi != 0x00000803) throw ParseError(images_path + ": bad image magic " + hex64(mi), 0);
  const auto ml = be32(lab, 0, labels_path);
  if (ml != 0x00000801) throw ParseError(labels_path + ": bad label magic " + hex64(ml), 0);
  const std::size_t n = be32(img, 4, images_path), h = be32(img, 8, images_path), w = be32(img, 12, images_path);
  const std::size_t nl = be32(lab, 4, labels_path);
  if (n != nl) {
    throw ParseError(labels_path + ": label count " + std::to_string(nl) + " differs from image count " + std::to_string(n), 4);
  }
  if (img.size() < 16 + n * h * w) throw ParseError(images_path + ": truncated pixel data", img.size());
  if (lab.size() < 8 + n) throw ParseError(labels_path + ": truncated label data", lab.size());
  Dataset d;
  d.sample_shape = {1, h, w};
  d.x.resize(n * h * w);
  for (std::size_t i = 0; i < d.x.size(); ++i) d.x[i] = static_cast<float>(img[16 + i]) / 255.0f;
  d.y.resize(n);
  std::int32_t mx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = lab[8 + i];
    mx = std::max(mx, d.y[i]);
  }
  d.n_classes = n ? static_cast<std::size_t>(mx) + 1 : 0;
  d.test.assign(n, test_split ? 1 : 0);
  return d;
}

void write_idx_images(const std::string& path, std::size_t n, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != n * h * w) throw UsageError("write_idx_images: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  put32(f, 0x00000803);
  put32(f, static_cast<std::uint32_t>(n));
  put32(f, static_cast<std::uint32_t>(h));
  put32(f, static_cast<std::uint32_t>(w));
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary);
  put32(f, 0x00000801);
  put32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

// Synthetic data ---------------------------------------------------------------

namespace {

void tag_tail_as_test(Dataset& d, std::size_t first, std::size_t count, double frac) {
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(count) * frac + 0.5));
  for (std::size_t i = count - std::min(n_test, count); i < count; ++i) d.test[first + i] = 1;
}

}  // namespace

Dataset gen_blobs(std::size_t n_classes, std::size_t per_class, std::size_t dim, double spread, std::uint64_t seed,
                  double test_fraction) {
  if (n_classes < 2) throw UsageError("gen_blobs: n_classes must be >= 2");
  if (dim == 0) throw UsageError("gen_blobs: dim must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 2.0 * std::numbers::pi);
  const double rot = ud(rng);
  std::vector<std::vector<double>> centers(n_classes, std::vector<double>(dim));
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double a = rot + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(n_classes);
    if (dim == 1) {
      centers[c][0] = 4.0 * static_cast<double>(c);
    } else {
      centers[c][0] = 4.0 * std::cos(a);
      centers[c][1] = 4.0 * std::sin(a);
      for (std::size_t j = 2; j < dim; ++j) centers[c][j] = 2.0 * nd(rng);
    }
  }
  Dataset d;
  d.sample_shape = {dim};
  d.n_classes = n_classes;
  d.x.reserve(n_classes * per_class * dim);
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t first = d.size();
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) d.x.push_back(static_cast<float>(centers[c][j] + spread * nd(rng)));
      d.y.push_back(static_cast<std::int32_t>(c));
      d.test.push_back(0);
    }
    tag_tail_as_test(d, first, per_class, test_fraction);
  }
  return d;
}

Dataset gen_patterns(std::size_t n_classes, std::size_t per_class, const Shape& image_shape, double noise,
                     std::uint64_t seed, double test_fraction) {
  if (n_classes < 2) throw UsageError("gen_patterns: n_classes must be >= 2");
  if (image_shape.size() != 3) throw UsageError("gen_patterns: image shape must be (C,H,W)");
  const std::size_t C = image_shape[0], H = image_shape[1], W = image_shape[2];
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution on(0.3);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_int_distribution<int> shift(-1, 1);
  std::vector<std::vector<float>> templ(n_classes, std::vector<float>(C * H * W));
  for (auto& t : templ)
    for (auto& v : t) v = on(rng) ? 1.0f : 0.0f;
  Dataset d;
  d.sample_shape = image_shape;
  d.n_classes = n_classes;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t first = d.size();
    for (std::size_t i = 0; i < per_class; ++i) {
      const int dy = shift(rng), dx = shift(rng);
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t q = 0; q < W; ++q) {
            const long sr = static_cast<long>(r) - dy, sq = static_cast<long>(q) - dx;
            float v = 0.0f;
            if (sr >= 0 && sq >= 0 && sr < static_cast<long>(H) && sq < static_cast<long>(W)) {
              v = templ[c][(ch * H + static_cast<std::size_t>(sr)) * W + static_cast<std::size_t>(sq)];
            }
            d.x.push_back(v + static_cast<float>(noise * nd(rng)));
          }
      d.y.push_back(static_cast<std::int32_t>(c));
      d.test.push_back(0);
    }
    tag_tail_as_test(d, first, per_class, test_fraction);
  }
  return d;
}

Dataset load_dataset(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const auto kv = parse_kv_list(colon == std::string::npos ? std::string_view{} : std::string_view(spec).substr(colon + 1));
  auto get = [&](const std::string& k, const std::string& dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
  };
  auto known = [&](std::initializer_list<const char*> keys) {
    for (const auto& [k, v] : kv) {
      bool ok = false;
      for (const char* key : keys) ok = ok || k == key;
      if (!ok) throw UsageError("data spec '" + kind + "': unknown key '" + k + "'");
    }
  };
  if (kind == "blobs") {
    known({"classes", "per_class", "dim", "spread", "seed", "test_fraction"});
    return gen_blobs(parse_u64(get("classes", "4"), "classes"), parse_u64(get("per_class", "500"), "per_class"),
                     parse_u64(get("dim", "2"), "dim"), parse_double(get("spread", "1"), "spread"),
                     parse_u64(get("seed", "1"), "seed"), parse_double(get("test_fraction", "0.2"), "test_fraction"));
  }
  if (kind == "patterns") {
    known({"classes", "per_class", "shape", "noise", "seed", "test_fraction"});
    return gen_patterns(parse_u64(get("classes", "4"), "classes"), parse_u64(get("per_class", "200"), "per_class"),
                        parse_dims(get("shape", "1x8x8"), "shape"), parse_double(get("noise", "0.3"), "noise"),
                        parse_u64(get("seed", "1"), "seed"), parse_double(get("test_fraction", "0.2"), "test_fraction"));
  }
  if (kind == "idx") {
    known({"images", "labels", "test_images", "test_labels"});
    if (!kv.count("images") || !kv.count("labels")) throw UsageError("idx data spec needs images= and labels=");
    Dataset d = load_idx(kv.at("images"), kv.at("labels"), false);
    if (kv.count("test_images") || kv.count("test_labels")) {
      if (!kv.count("test_images") || !kv.count("test_labels")) throw UsageError("idx: test_images and test_labels go together");
      d.append(load_idx(kv.at("test_images"), kv.at("test_labels"), true));
    }
    return d;
  }
  throw UsageError("unknown data spec kind '" + kind + "' (expected blobs, patterns or idx)");
}

// Batching -----------------------------------------------------------------------

std::vector<std::vector<std::size_t>> make_batches(const Dataset& data, const std::vector<std::size_t>& pool,
                                                   std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 4) throw UsageError("make_batches: batch_size must be >= 4, got " + std::to_string(batch_size));
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(ss);
  std::map<std::int32_t, std::vector<std::size_t>> by;
  for (auto i : pool) by[data.y.at(i)].push_back(i);
  // Chunks of 2 (3 for an odd remainder) per class keep pairs together.
  std::vector<std::vector<std::size_t>> chunks;
  for (auto& [c, idx] : by) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t i = 0;
    while (i < idx.size()) {
      const std::size_t left = idx.size() - i;
      const std::size_t take = left == 3 ? 3 : std::min<std::size_t>(2, left);
      chunks.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i), idx.begin() + static_cast<std::ptrdiff_t>(i + take));
      i += take;
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  for (auto& ch : chunks) {
    if (!cur.empty() && cur.size() + ch.size() > batch_size) {
      batches.push_back(std::move(cur));
      cur.clear();
    }
    cur.insert(cur.end(), ch.begin(), ch.end());
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return batches;
}

template Tensor<float> Dataset::gather<float>(const std::vector<std::size_t>&) const;
template Tensor<double> Dataset::gather<double>(const std::vector<std::size_t>&) const;

}  // namespace modkit
