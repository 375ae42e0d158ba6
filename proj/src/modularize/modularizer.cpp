// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/modularize/modularizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "modkit/util/text.hpp"

namespace modkit {

std::size_t ModuleMaskSet::retained() const {
  std::size_t n = 0;
  for (const auto& m : layers) n += popcount(m);
  return n;
}

std::size_t ModuleMaskSet::total() const {
  std::size_t n = 0;
  for (const auto& m : layers) n += m.size();
  return n;
}

void ModuleMaskSet::validate() const {
  if (layer_names.size() != layers.size()) throw InvariantError("mask set: layer names and masks differ in count");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (popcount(layers[i]) == 0) throw InvariantError("mask set: layer " + layer_names[i] + " retains no neuron");
  }
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  if (a.size() != b.size()) throw InvariantError("mask_or: length mismatch");
  BinaryMask m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = (a[i] || b[i]) ? 1 : 0;
  return m;
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  if (a.size() != b.size()) throw InvariantError("mask_and: length mismatch");
  BinaryMask m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = (a[i] && b[i]) ? 1 : 0;
  return m;
}

std::vector<std::size_t> mask_indices(const BinaryMask& m) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i]) idx.push_back(i);
  return idx;
}

BinaryMask threshold_votes(const std::vector<std::size_t>& votes, std::size_t n, double threshold) {
  if (n == 0) throw UsageError("threshold_votes: no samples");
  BinaryMask m(votes.size(), 0);
  std::size_t best = 0;
  for (std::size_t j = 0; j < votes.size(); ++j) {
    if (static_cast<double>(votes[j]) / static_cast<double>(n) > threshold) m[j] = 1;
    if (votes[j] > votes[best]) best = j;
  }
  if (!votes.empty() && popcount(m) == 0) m[best] = 1;
  return m;
}

template <class T>
ModuleMaskSet extract_module_mask(ModularModel<T>& model, const Tensor<T>& samples, double threshold,
                                  std::vector<std::int32_t> classes) {
  if (samples.rank() == 0 || samples.dim(0) == 0) throw UsageError("extract_module_mask: empty sample set");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("extract_module_mask: threshold must be in [0, 1]");
  const auto info = model.slots();
  const std::size_t n = samples.dim(0), per = samples.size() / n;
  std::vector<std::vector<std::size_t>> votes(info.size());
  for (std::size_t s = 0; s < info.size(); ++s) votes[s].assign(info[s].width, 0);
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < n; i += kChunk) {
    const std::size_t b = std::min(kChunk, n - i);
    Shape cs = samples.shape();
    cs[0] = b;
    Tensor<T> chunk(cs, std::vector<T>(samples.ptr() + i * per, samples.ptr() + (i + b) * per));
    Tape<T> tape(false);
    auto r = model.forward(tape, chunk, MaskMode::kGenerate);
    for (std::size_t s = 0; s < info.size(); ++s) {
      const auto& v = r.masks[s].value();
      const std::size_t w = info[s].width;
      for (std::size_t row = 0; row < b; ++row)
        for (std::size_t j = 0; j < w; ++j) votes[s][j] += v[row * w + j] > T(0);
    }
  }
  ModuleMaskSet ms;
  std::sort(classes.begin(), classes.end());
  ms.classes = std::move(classes);
  ms.threshold = threshold;
  ms.samples = n;
  for (std::size_t s = 0; s < info.size(); ++s) {
    ms.layer_names.push_back(info[s].name);
    ms.layers.push_back(threshold_votes(votes[s], n, threshold));
  }
  return ms;
}

template <class T>
ModuleMaskSet extract_class_mask(ModularModel<T>& model, const Dataset& data, std::int32_t c, double threshold,
                                 Split split) {
  const auto idx = data.indices_of_class(c, split);
  if (idx.empty()) throw UsageError("extract_class_mask: no samples of class " + std::to_string(c));
  return extract_module_mask(model, data.gather<T>(idx), threshold, {c});
}

ModuleMaskSet merge_masks(const ModuleMaskSet& a, const ModuleMaskSet& b) {
  if (a.layer_names != b.layer_names || a.layers.size() != b.layers.size()) {
    throw InvariantError("merge_masks: mask sets come from different topologies");
  }
  ModuleMaskSet m;
  std::set<std::int32_t> cls(a.classes.begin(), a.classes.end());
  cls.insert(b.classes.begin(), b.classes.end());
  m.classes.assign(cls.begin(), cls.end());
  m.layer_names = a.layer_names;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].size() != b.layers[i].size()) throw InvariantError("merge_masks: layer " + a.layer_names[i] + " length differs");
    m.layers.push_back(mask_or(a.layers[i], b.layers[i]));
  }
  m.threshold = std::max(a.threshold, b.threshold);
  m.samples = a.samples + b.samples;
  return m;
}

template <class T>
Linear<T> prune_linear(const Linear<T>& layer, const BinaryMask& out_mask, const BinaryMask* in_mask, bool allow_empty) {
  const std::size_t out = layer.out_dim(), in = layer.in_dim();
  if (out_mask.size() != out) throw ShapeError("prune_linear(out_mask)", Shape{out_mask.size()}, Shape{out});
  if (in_mask && in_mask->size() != in) throw ShapeError("prune_linear(in_mask)", Shape{in_mask->size()}, Shape{in});
  const auto rows = mask_indices(out_mask);
  if (rows.empty() && !allow_empty) throw InvariantError("prune_linear: all-zero output mask");
  std::vector<std::size_t> cols;
  if (in_mask) {
    cols = mask_indices(*in_mask);
  } else {
    for (std::size_t j = 0; j < in; ++j) cols.push_back(j);
  }
  Tensor<T> w(Shape{rows.size(), cols.size()});
  Tensor<T> b(Shape{rows.size()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) w[r * cols.size() + c] = layer.weight.value[rows[r] * in + cols[c]];
    b[r] = layer.bias.value[rows[r]];
  }
  Linear<T> l;
  l.weight = Parameter<T>(std::move(w));
  l.bias = Parameter<T>(std::move(b));
  return l;
}

template <class T>
Conv2d<T> prune_conv(const Conv2d<T>& layer, const BinaryMask& out_mask, const BinaryMask* in_mask) {
  const Shape& ws = layer.weight.value.shape();
  const std::size_t oc = ws[0], ic = ws[1], kk = ws[2] * ws[3];
  if (out_mask.size() != oc) throw ShapeError("prune_conv(out_mask)", Shape{out_mask.size()}, Shape{oc});
  if (in_mask && in_mask->size() != ic) throw ShapeError("prune_conv(in_mask)", Shape{in_mask->size()}, Shape{ic});
  const auto keep_o = mask_indices(out_mask);
  if (keep_o.empty()) throw InvariantError("prune_conv: all kernels removed");
  std::vector<std::size_t> keep_i;
  if (in_mask) {
    keep_i = mask_indices(*in_mask);
  } else {
    for (std::size_t j = 0; j < ic; ++j) keep_i.push_back(j);
  }
  Tensor<T> w(Shape{keep_o.size(), keep_i.size(), ws[2], ws[3]});
  Tensor<T> b(Shape{keep_o.size()});
  for (std::size_t o = 0; o < keep_o.size(); ++o) {
    for (std::size_t i = 0; i < keep_i.size(); ++i)
      for (std::size_t k = 0; k < kk; ++k) w[(o * keep_i.size() + i) * kk + k] = layer.weight.value[(keep_o[o] * ic + keep_i[i]) * kk + k];
    b[o] = layer.bias.value[keep_o[o]];
  }
  Conv2d<T> c;
  c.weight = Parameter<T>(std::move(w));
  c.bias = Parameter<T>(std::move(b));
  c.stride = layer.stride;
  c.padding = layer.padding;
  return c;
}

namespace {

template <class T>
Linear<T> head_for(const Linear<T>& src, const std::vector<std::size_t>& feature_index, const std::vector<std::int32_t>& classes,
                   HeadInit mode, std::uint64_t seed) {
  const std::size_t k = classes.size();
  if (mode == HeadInit::kFresh) {
    Rng rng(seed);
    return Linear<T>::make(feature_index.size(), k, rng);
  }
  const std::size_t in = src.in_dim();
  Linear<T> h;
  Tensor<T> w(Shape{k, feature_index.size()});
  Tensor<T> b(Shape{k});
  for (std::size_t r = 0; r < k; ++r) {
    const auto c = static_cast<std::size_t>(classes[r]);
    if (c >= src.out_dim()) throw UsageError("decompose: class " + std::to_string(c) + " is not a head output");
    for (std::size_t j = 0; j < feature_index.size(); ++j) w[r * feature_index.size() + j] = src.weight.value[c * in + feature_index[j]];
    b[r] = src.bias.value[c];
  }
  h.weight = Parameter<T>(std::move(w));
  h.bias = Parameter<T>(std::move(b));
  return h;
}

void check_topology(const std::vector<SlotInfo>& info, const ModuleMaskSet& masks) {
  if (masks.layers.size() != info.size()) {
    throw InvariantError("decompose: mask set has " + std::to_string(masks.layers.size()) + " layers, model has " +
                         std::to_string(info.size()));
  }
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (masks.layers[i].size() != info[i].width || (!masks.layer_names.empty() && masks.layer_names[i] != info[i].name)) {
      throw InvariantError("decompose: mask for layer " + info[i].name + " does not match its topology");
    }
  }
  masks.validate();
}

}  // namespace

template <class T>
SubModule<T> decompose(const ModularModel<T>& model, const ModuleMaskSet& masks, HeadInit head, std::uint64_t head_seed) {
  const auto info = model.slots();
  check_topology(info, masks);
  if (masks.classes.empty()) throw UsageError("decompose: mask set names no class");
  const Backbone<T>& src = model.net;
  SubModule<T> sub;
  sub.masks = masks;
  sub.source_feature_dim = src.feature_dim();
  sub.source_n_classes = src.n_classes();
  sub.source_hash = hex64(parameter_hash<T>(model.named_parameters()));
  Backbone<T>& net = sub.net;
  net.spec = src.spec;
  net.spec.n_classes = masks.classes.size();
  net.attn_scale = src.attn_scale;
  const auto& M = masks.layers;
  switch (src.spec.arch) {
    case Arch::kMlp: {
      for (std::size_t l = 0; l < src.hidden.size(); ++l) {
        net.hidden.push_back(prune_linear(src.hidden[l], M[l], l ? &M[l - 1] : nullptr));
        sub.retained.push_back(mask_indices(M[l]));
      }
      sub.feature_index = mask_indices(M.back());
      break;
    }
    case Arch::kCnn: {
      for (std::size_t l = 0; l < src.convs.size(); ++l) {
        net.convs.push_back(prune_conv(src.convs[l], M[l], l ? &M[l - 1] : nullptr));
        sub.retained.push_back(mask_indices(M[l]));
      }
      const std::size_t spatial = src.feature_dim() / M.back().size();
      for (auto ch : mask_indices(M.back()))
        for (std::size_t p = 0; p < spatial; ++p) sub.feature_index.push_back(ch * spatial + p);
      break;
    }
    case Arch::kTinyVit: {
      net.patch_embed = src.patch_embed;
      net.cls_token = src.cls_token;
      net.pos_embed = src.pos_embed;
      net.final_ln = src.final_ln;
      std::size_t s = 0;
      for (const auto& b : src.blocks) {
        EncoderBlock<T> nb = b;
        if (b.maskable) {
          const auto& mq = M[s];
          const auto& mk = M[s + 1];
          const auto& mv = M[s + 2];
          const auto& mo = M[s + 3];
          const auto& m1 = M[s + 4];
          const auto& m2 = M[s + 5];
          const BinaryMask mqk = mask_and(mq, mk);
          nb.attn.query = prune_linear(b.attn.query, mqk, nullptr, true);
          nb.attn.key = prune_linear(b.attn.key, mqk, nullptr, true);
          nb.attn.value = prune_linear(b.attn.value, mv);
          nb.attn.out_proj = prune_linear(b.attn.out_proj, mo, &mv);
          nb.attn.out_pad = mask_indices(mo);
          nb.mlp.fc1 = prune_linear(b.mlp.fc1, m1);
          nb.mlp.fc2 = prune_linear(b.mlp.fc2, m2, &m1);
          nb.mlp.out_pad = mask_indices(m2);
          for (const auto* m : {&mqk, &mqk, &mv, &mo, &m1, &m2}) sub.retained.push_back(mask_indices(*m));
          s += 6;
        }
        net.blocks.push_back(std::move(nb));
      }
      for (std::size_t j = 0; j < src.feature_dim(); ++j) sub.feature_index.push_back(j);
      break;
    }
  }
  net.head = head_for(src.head, sub.feature_index, masks.classes, head, head_seed);
  for (auto& [n, p] : net.named_parameters()) p->zero_grad();
  return sub;
}

namespace {

// Running maximum that lets NaN win, so a NaN deviation can never pass.
void raise_to(double& acc, double v) {
  if (std::isnan(v) || v > acc) acc = std::isnan(acc) ? acc : v;
}

}  // namespace

double EquivalenceReport::max() const {
  double m = 0;
  raise_to(m, feature_deviation);
  raise_to(m, activation_deviation);
  raise_to(m, removed_max);
  return m;
}

template <class T>
EquivalenceReport equivalence_check(ModularModel<T>& model, const ModuleMaskSet& masks, SubModule<T>& sub,
                                    const Tensor<T>& batch) {
  EquivalenceReport rep;
  Tape<T> t1(false), t2(false);
  auto full = model.forward(t1, batch, MaskMode::kFixed, &masks.layers);
  std::vector<Var<T>> acts;
  SlotHook<T> record = [&](std::size_t, const Var<T>&, const Var<T>& out) {
    acts.push_back(out);
    return out;
  };
  auto part = sub.net.forward(t2, batch, record);
  auto diff = [](T a, T b) { return std::abs(static_cast<double>(a) - static_cast<double>(b)); };

  const auto& ff = full.features.value();
  const auto& pf = part.features.value();
  const std::size_t B = ff.dim(0), fd = ff.dim(1), sd = pf.dim(1);
  std::vector<std::uint8_t> covered(fd);
  for (auto j : sub.feature_index) covered[j] = 1;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < sd; ++j)
      raise_to(rep.feature_deviation, diff(ff[b * fd + sub.feature_index[j]], pf[b * sd + j]));
    for (std::size_t j = 0; j < fd; ++j)
      if (!covered[j]) raise_to(rep.feature_deviation, diff(ff[b * fd + j], T(0)));
  }

  const bool channel_axis = model.spec().arch == Arch::kCnn;
  for (std::size_t s = 0; s < acts.size(); ++s) {
    const auto& fa = full.activations[s].value();
    const auto& pa = acts[s].value();
    const auto& keep = sub.retained[s];
    const auto& mask = masks.layers[s];
    const std::size_t w = mask.size(), pw = keep.size();
    // Walk both tensors as (outer, width, inner) with the neuron axis in the middle.
    const std::size_t inner = channel_axis ? fa.size() / (fa.dim(0) * w) : 1;
    const std::size_t outer = fa.size() / (w * inner);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < w; ++j) {
        if (mask[j]) continue;
        for (std::size_t i = 0; i < inner; ++i) raise_to(rep.removed_max, diff(fa[(o * w + j) * inner + i], T(0)));
      }
      for (std::size_t j = 0; j < pw; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          raise_to(rep.activation_deviation, diff(fa[(o * w + keep[j]) * inner + i], pa[(o * pw + j) * inner + i]));
    }
  }
  return rep;
}

template <class T>
TrainHistory finetune(SubModule<T>& sub, const Dataset& target, const FinetuneOptions& opt) {
  const std::size_t k = sub.n_classes();
  for (auto y : target.y) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw UsageError("finetune: label " + std::to_string(y) + " is outside the module's " + std::to_string(k) + " classes");
    }
  }
  TrainConfig cfg;
  cfg.lr = opt.lr;
  cfg.momentum = opt.momentum;
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  cfg.seed = opt.seed;
  cfg.loss.alpha = 0.0;
  std::vector<Parameter<T>*> params;
  std::vector<bool> was_frozen;
  for (auto& [n, p] : sub.net.named_parameters()) {
    params.push_back(p);
    was_frozen.push_back(p->frozen);
    if (opt.head_only && n.rfind("head.", 0) != 0) p->frozen = true;
  }
  const auto test = target.indices(Split::kTest);
  StepFn<T> step = [&](Tape<T>& tape, const Tensor<T>& x, const std::vector<std::int32_t>& y) {
    LossTerms<T> r;
    r.ce = cross_entropy(sub.net.forward(tape, x).logits, y);
    r.total = r.ce;
    return r;
  };
  std::function<double()> eval = [&]() {
    if (test.empty()) return 0.0;
    return accuracy(predict(sub.net, target, test), target.labels(test));
  };
  TrainHistory h;
  try {
    h = fit<T>(params, step, eval, target, cfg);
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->frozen = was_frozen[i];
    throw;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->frozen = was_frozen[i];
  return h;
}

template <class T>
std::uint64_t parameter_hash(const std::vector<std::pair<std::string, const Parameter<T>*>>& params) {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const auto& [n, p] : params) {
    h = fnv1a64(n.data(), n.size(), h);
    for (std::size_t d : p->value.shape()) {
      const auto v = static_cast<std::uint64_t>(d);
      h = fnv1a64(&v, sizeof v, h);
    }
    for (T x : p->value.data()) {
      const float f = static_cast<float>(x);
      h = fnv1a64(&f, sizeof f, h);
    }
  }
  return h;
}

#define MODKIT_INSTANTIATE_MOD(T)                                                                                  \
  template ModuleMaskSet extract_module_mask<T>(ModularModel<T>&, const Tensor<T>&, double, std::vector<std::int32_t>); \
  template ModuleMaskSet extract_class_mask<T>(ModularModel<T>&, const Dataset&, std::int32_t, double, Split);     \
  template Linear<T> prune_linear<T>(const Linear<T>&, const BinaryMask&, const BinaryMask*, bool);                \
  template Conv2d<T> prune_conv<T>(const Conv2d<T>&, const BinaryMask&, const BinaryMask*);                        \
  template SubModule<T> decompose<T>(const ModularModel<T>&, const ModuleMaskSet&, HeadInit, std::uint64_t);       \
  template EquivalenceReport equivalence_check<T>(ModularModel<T>&, const ModuleMaskSet&, SubModule<T>&,           \
                                                  const Tensor<T>&);                                               \
  template TrainHistory finetune<T>(SubModule<T>&, const Dataset&, const FinetuneOptions&);                        \
  template std::uint64_t parameter_hash<T>(const std::vector<std::pair<std::string, const Parameter<T>*>>&);

MODKIT_INSTANTIATE_MOD(float)
MODKIT_INSTANTIATE_MOD(double)

}  // namespace modkit
