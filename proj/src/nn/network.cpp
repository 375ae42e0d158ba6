// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/nn/network.hpp"

#include <cmath>

namespace modkit {

const char* arch_name(Arch a) {
  switch (a) {
    case Arch::kMlp: return "mlp";
    case Arch::kCnn: return "cnn";
    case Arch::kTinyVit: return "tinyvit";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "mlp") return Arch::kMlp;
  if (s == "cnn") return Arch::kCnn;
  if (s == "tinyvit") return Arch::kTinyVit;
  throw UsageError("unknown architecture '" + s + "'");
}

std::size_t ModelSpec::num_tokens() const {
  if (arch != Arch::kTinyVit || patch == 0 || input_shape.size() != 3) return 0;
  return (input_shape[1] / patch) * (input_shape[2] / patch) + 1;
}

void validate(const ModelSpec& s) {
  if (s.n_classes < 2) throw UsageError("n_classes must be >= 2, got " + std::to_string(s.n_classes));
  switch (s.arch) {
    case Arch::kMlp:
      if (s.input_shape.size() != 1 || s.input_shape[0] == 0) throw UsageError("mlp: input must be a non-empty vector");
      if (s.widths.empty()) throw UsageError("mlp: hidden_dims must be non-empty");
      break;
    case Arch::kCnn: {
      if (s.input_shape.size() != 3) throw UsageError("cnn: input shape must be (C,H,W)");
      if (s.widths.empty()) throw UsageError("cnn: channel list must be non-empty");
      const std::size_t f = std::size_t{1} << s.widths.size();
      if (s.input_shape[1] % f != 0 || s.input_shape[2] % f != 0) {
        throw UsageError("cnn: spatial dims must be divisible by " + std::to_string(f) + " for " +
                         std::to_string(s.widths.size()) + " pooling stages");
      }
      break;
    }
    case Arch::kTinyVit:
      if (s.input_shape.size() != 3) throw UsageError("tinyvit: image shape must be (C,H,W)");
      if (s.patch == 0 || s.input_shape[1] % s.patch != 0 || s.input_shape[2] % s.patch != 0) {
        throw UsageError("tinyvit: image " + shape_to_string(s.input_shape) + " is not divisible into " +
                         std::to_string(s.patch) + "x" + std::to_string(s.patch) + " patches");
      }
      if (s.embed_dim == 0 || s.blocks == 0 || s.mlp_ratio == 0) throw UsageError("tinyvit: empty dimensions");
      if (s.first_block_retained && s.blocks < 2) {
        throw UsageError("tinyvit: first_block_retained needs at least 2 blocks");
      }
      break;
  }
}

template <class T>
Backbone<T> Backbone<T>::init(const ModelSpec& spec, Rng& rng) {
  validate(spec);
  Backbone b;
  b.spec = spec;
  switch (spec.arch) {
    case Arch::kMlp: {
      std::size_t in = spec.input_shape[0];
      for (std::size_t w : spec.widths) {
        b.hidden.push_back(Linear<T>::make(in, w, rng));
        in = w;
      }
      b.head = Linear<T>::make(in, spec.n_classes, rng);
      break;
    }
    case Arch::kCnn: {
      std::size_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
      for (std::size_t oc : spec.widths) {
        b.convs.push_back(Conv2d<T>::make(c, oc, 3, rng));
        c = oc;
        h /= 2;
        w /= 2;
      }
      b.head = Linear<T>::make(c * h * w, spec.n_classes, rng);
      break;
    }
    case Arch::kTinyVit: {
      const std::size_t d = spec.embed_dim, n = spec.num_tokens();
      const std::size_t pd = spec.input_shape[0] * spec.patch * spec.patch;
      b.patch_embed = Linear<T>::make(pd, d, rng);
      std::normal_distribution<double> nd(0.0, 0.02);
      Tensor<T> cls(Shape{1, 1, d});
      for (auto& v : cls.storage()) v = static_cast<T>(nd(rng));
      Tensor<T> pos(Shape{1, n, d});
      for (auto& v : pos.storage()) v = static_cast<T>(nd(rng));
      b.cls_token = Parameter<T>(std::move(cls));
      b.pos_embed = Parameter<T>(std::move(pos));
      const std::size_t hid = d * spec.mlp_ratio;
      for (std::size_t i = 0; i < spec.blocks; ++i) {
        EncoderBlock<T> blk;
        blk.ln1 = LayerNorm<T>::make(d);
        blk.attn.query = Linear<T>::make(d, d, rng);
        blk.attn.key = Linear<T>::make(d, d, rng);
        blk.attn.value = Linear<T>::make(d, d, rng);
        blk.attn.out_proj = Linear<T>::make(d, d, rng);
        blk.ln2 = LayerNorm<T>::make(d);
        blk.mlp.fc1 = Linear<T>::make(d, hid, rng);
        blk.mlp.fc2 = Linear<T>::make(hid, d, rng);
        blk.maskable = !(spec.first_block_retained && i == 0);
        b.blocks.push_back(std::move(blk));
      }
      b.final_ln = LayerNorm<T>::make(d);
      b.head = Linear<T>::make(d, spec.n_classes, rng);
      b.attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
      break;
    }
  }
  return b;
}

template <class T>
std::vector<SlotInfo> Backbone<T>::slots() const {
  std::vector<SlotInfo> out;
  switch (spec.arch) {
    case Arch::kMlp:
      for (std::size_t i = 0; i < hidden.size(); ++i) {
        out.push_back({"hidden." + std::to_string(i), hidden[i].out_dim(), hidden[i].in_dim(), SlotKind::kNeuron});
      }
      break;
    case Arch::kCnn:
      for (std::size_t i = 0; i < convs.size(); ++i) {
        out.push_back({"conv." + std::to_string(i), convs[i].out_channels(), convs[i].in_channels(), SlotKind::kKernel});
      }
      break;
    case Arch::kTinyVit:
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (!b.maskable) continue;
        const std::string p = "block." + std::to_string(i) + ".";
        out.push_back({p + "attn.query", b.attn.query.out_dim(), b.attn.query.in_dim(), SlotKind::kNeuron});
        out.push_back({p + "attn.key", b.attn.key.out_dim(), b.attn.key.in_dim(), SlotKind::kNeuron});
        out.push_back({p + "attn.value", b.attn.value.out_dim(), b.attn.value.in_dim(), SlotKind::kNeuron});
        out.push_back({p + "attn.out_proj", b.attn.out_proj.out_dim(), b.attn.out_proj.in_dim(), SlotKind::kNeuron});
        out.push_back({p + "mlp.fc1", b.mlp.fc1.out_dim(), b.mlp.fc1.in_dim(), SlotKind::kNeuron});
        out.push_back({p + "mlp.fc2", b.mlp.fc2.out_dim(), b.mlp.fc2.in_dim(), SlotKind::kNeuron});
      }
      break;
  }
  return out;
}

namespace {

template <class T>
Var<T> pad_to(const Var<T>& x, const std::vector<std::size_t>& pad, std::size_t width) {
  if (pad.empty()) return x;
  return scatter_last(x, pad, width);
}

}  // namespace

template <class T>
BackboneOutput<T> Backbone<T>::forward(Tape<T>& tape, const Tensor<T>& batch, const SlotHook<T>& hook) {
  const Shape& bs = batch.shape();
  Shape expect{bs.empty() ? 0 : bs[0]};
  expect.insert(expect.end(), spec.input_shape.begin(), spec.input_shape.end());
  if (bs != expect || bs[0] == 0) throw ShapeError("forward(batch)", bs, expect);
  const std::size_t B = bs[0];
  std::size_t slot = 0;
  auto visit = [&](const Var<T>& in, const Var<T>& out) { return hook ? hook(slot++, in, out) : (++slot, out); };

  BackboneOutput<T> r;
  switch (spec.arch) {
    case Arch::kMlp: {
      Var<T> x = tape.constant(batch);
      for (auto& l : hidden) {
        auto h = visit(x, l.forward(tape, x));
        x = relu(h);
      }
      r.features = x;
      break;
    }
    case Arch::kCnn: {
      Var<T> x = tape.constant(batch);
      for (auto& c : convs) {
        auto h = visit(x, c.forward(tape, x));
        x = max_pool2d(relu(h), 2);
      }
      r.features = reshape(x, {B, x.value().size() / B});
      break;
    }
    case Arch::kTinyVit: {
      const std::size_t d = cls_token.value.dim(2);
      auto patches = tape.constant(patchify(batch, spec.patch));
      auto tok = patch_embed.forward(tape, patches);
      auto cls = add(tape.constant(Tensor<T>(Shape{B, 1, d})), tape.param(cls_token));
      Var<T> x = add(concat(std::vector<Var<T>>{cls, tok}, 1), tape.param(pos_embed));
      for (auto& blk : blocks) {
        auto identity = [](std::size_t, const Var<T>&, const Var<T>& o) { return o; };
        auto step = [&](const Var<T>& in, const Var<T>& out) { return blk.maskable ? visit(in, out) : identity(0, in, out); };
        auto h = blk.ln1.forward(tape, x);
        auto q = step(h, blk.attn.query.forward(tape, h));
        auto k = step(h, blk.attn.key.forward(tape, h));
        auto v = step(h, blk.attn.value.forward(tape, h));
        auto att = softmax(scale(matmul(q, transpose_last2(k)), attn_scale));
        auto ctx = matmul(att, v);
        auto o = step(ctx, blk.attn.out_proj.forward(tape, ctx));
        x = add(x, pad_to(o, blk.attn.out_pad, d));
        auto h2 = blk.ln2.forward(tape, x);
        auto f1 = relu(step(h2, blk.mlp.fc1.forward(tape, h2)));
        auto f2 = step(f1, blk.mlp.fc2.forward(tape, f1));
        x = add(x, pad_to(f2, blk.mlp.out_pad, d));
      }
      auto c = reshape(slice(x, 1, 0, 1), {B, d});
      r.features = final_ln.forward(tape, c);
      break;
    }
  }
  r.logits = head.forward(tape, r.features);
  return r;
}

namespace {

template <class P, class B, class Out>
void collect(B& b, Out& out) {
  auto lin = [&](const std::string& n, auto& l) {
    out.push_back({n + ".weight", static_cast<P*>(&l.weight)});
    out.push_back({n + ".bias", static_cast<P*>(&l.bias)});
  };
  auto ln = [&](const std::string& n, auto& l) {
    out.push_back({n + ".gamma", static_cast<P*>(&l.gamma)});
    out.push_back({n + ".beta", static_cast<P*>(&l.beta)});
  };
  switch (b.spec.arch) {
    case Arch::kMlp:
      for (std::size_t i = 0; i < b.hidden.size(); ++i) lin("hidden." + std::to_string(i), b.hidden[i]);
      break;
    case Arch::kCnn:
      for (std::size_t i = 0; i < b.convs.size(); ++i) lin("conv." + std::to_string(i), b.convs[i]);
      break;
    case Arch::kTinyVit:
      lin("patch_embed", b.patch_embed);
      out.push_back({"cls_token", static_cast<P*>(&b.cls_token)});
      out.push_back({"pos_embed", static_cast<P*>(&b.pos_embed)});
      for (std::size_t i = 0; i < b.blocks.size(); ++i) {
        auto& blk = b.blocks[i];
        const std::string p = "block." + std::to_string(i) + ".";
        ln(p + "ln1", blk.ln1);
        lin(p + "attn.query", blk.attn.query);
        lin(p + "attn.key", blk.attn.key);
        lin(p + "attn.value", blk.attn.value);
        lin(p + "attn.out_proj", blk.attn.out_proj);
        ln(p + "ln2", blk.ln2);
        lin(p + "mlp.fc1", blk.mlp.fc1);
        lin(p + "mlp.fc2", blk.mlp.fc2);
      }
      ln("final_ln", b.final_ln);
      break;
  }
  lin("head", b.head);
}

}  // namespace

template <class T>
std::vector<std::pair<std::string, Parameter<T>*>> Backbone<T>::named_parameters() {
  std::vector<std::pair<std::string, Parameter<T>*>> out;
  collect<Parameter<T>>(*this, out);
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Parameter<T>*>> Backbone<T>::named_parameters() const {
  std::vector<std::pair<std::string, const Parameter<T>*>> out;
  collect<const Parameter<T>>(*this, out);
  return out;
}

template <class T>
ForwardResult<T> ModularModel<T>::forward(Tape<T>& tape, const Tensor<T>& batch, MaskMode mode,
                                          const std::vector<BinaryMask>* fixed) {
  const auto info = slots();
  ForwardResult<T> r;
  std::vector<Var<T>> fixed_vars;
  if (mode == MaskMode::kFixed) {
    if (fixed == nullptr) throw UsageError("forward: fixed mode needs a mask set");
    if (fixed->size() != info.size()) {
      throw ShapeError("forward", "mask set has " + std::to_string(fixed->size()) + " layers, model has " +
                                      std::to_string(info.size()));
    }
    for (std::size_t i = 0; i < info.size(); ++i) {
      const auto& m = (*fixed)[i];
      if (m.size() != info[i].width) {
        throw ShapeError("forward", "mask for layer " + info[i].name + " has length " + std::to_string(m.size()) +
                                        ", layer width is " + std::to_string(info[i].width));
      }
      Tensor<T> t(Shape{1, 1, m.size()});
      for (std::size_t j = 0; j < m.size(); ++j) t[j] = m[j] ? T(1) : T(0);
      fixed_vars.push_back(tape.constant(std::move(t)));
    }
  } else if (mode == MaskMode::kGenerate && generators.size() != info.size()) {
    throw InvariantError("forward: generator count does not match maskable layers");
  }

  SlotHook<T> hook = [&](std::size_t slot, const Var<T>& in, const Var<T>& out) -> Var<T> {
    Var<T> m;
    if (mode == MaskMode::kGenerate) {
      const Var<T> src = spec().detach_generator_input ? tape.constant(in.value()) : in;
      m = generate_mask(tape, generators[slot], pool_input(src));
    } else if (mode == MaskMode::kFixed) {
      m = fixed_vars[slot];
    }
    Var<T> h = m.valid() ? apply_mask(out, m) : out;
    r.masks.push_back(m);
    r.activations.push_back(h);
    return h;
  };
  auto o = net.forward(tape, batch, hook);
  r.logits = o.logits;
  r.features = o.features;
  if (mode == MaskMode::kOff) r.masks.clear();
  return r;
}

template <class T>
std::vector<std::pair<std::string, Parameter<T>*>> ModularModel<T>::named_parameters() {
  auto out = net.named_parameters();
  for (std::size_t i = 0; i < generators.size(); ++i) {
    const std::string p = "generator." + std::to_string(i) + ".";
    out.push_back({p + "hidden.weight", &generators[i].hidden.weight});
    out.push_back({p + "hidden.bias", &generators[i].hidden.bias});
    out.push_back({p + "out.weight", &generators[i].out.weight});
    out.push_back({p + "out.bias", &generators[i].out.bias});
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, const Parameter<T>*>> ModularModel<T>::named_parameters() const {
  auto mut = const_cast<ModularModel*>(this)->named_parameters();
  std::vector<std::pair<std::string, const Parameter<T>*>> out;
  out.reserve(mut.size());
  for (auto& [n, p] : mut) out.push_back({n, p});
  return out;
}

template <class T>
void ModularModel<T>::zero_grad() {
  for (auto& [n, p] : named_parameters()) p->zero_grad();
}

template <class T>
ModularModel<T> build_model(const ModelSpec& spec) {
  Rng rng(spec.seed);
  ModularModel<T> m;
  m.net = Backbone<T>::init(spec, rng);
  for (const auto& s : m.net.slots()) {
    m.generators.push_back(MaskGenerator<T>::make(s.in_dim, s.width, default_generator_hidden(s.width), rng));
  }
  return m;
}

template <class T>
ModularModel<T> build_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden_dims, std::size_t n_classes,
                          std::uint64_t seed) {
  ModelSpec s;
  s.arch = Arch::kMlp;
  s.input_shape = {in_dim};
  s.widths = hidden_dims;
  s.n_classes = n_classes;
  s.seed = seed;
  return build_model<T>(s);
}

template <class T>
ModularModel<T> build_cnn(const Shape& in_shape, const std::vector<std::size_t>& channels, std::size_t n_classes,
                          std::uint64_t seed) {
  ModelSpec s;
  s.arch = Arch::kCnn;
  s.input_shape = in_shape;
  s.widths = channels;
  s.n_classes = n_classes;
  s.seed = seed;
  return build_model<T>(s);
}

template <class T>
ModularModel<T> build_tiny_vit(const Shape& image_shape, std::size_t patch, std::size_t embed_dim,
                               std::size_t n_blocks, std::size_t mlp_ratio, std::size_t n_classes,
                               bool first_block_retained, std::uint64_t seed) {
  ModelSpec s;
  s.arch = Arch::kTinyVit;
  s.input_shape = image_shape;
  s.patch = patch;
  s.embed_dim = embed_dim;
  s.blocks = n_blocks;
  s.mlp_ratio = mlp_ratio;
  s.n_classes = n_classes;
  s.first_block_retained = first_block_retained;
  s.seed = seed;
  return build_model<T>(s);
}

#define MODKIT_INSTANTIATE_NET(T)                                                                          \
  template struct Backbone<T>;                                                                             \
  template struct ModularModel<T>;                                                                         \
  template ModularModel<T> build_model<T>(const ModelSpec&);                                               \
  template ModularModel<T> build_mlp<T>(std::size_t, const std::vector<std::size_t>&, std::size_t,         \
                                        std::uint64_t);                                                    \
  template ModularModel<T> build_cnn<T>(const Shape&, const std::vector<std::size_t>&, std::size_t,        \
                                        std::uint64_t);                                                    \
  template ModularModel<T> build_tiny_vit<T>(const Shape&, std::size_t, std::size_t, std::size_t,          \
                                             std::size_t, std::size_t, bool, std::uint64_t);

MODKIT_INSTANTIATE_NET(float)
MODKIT_INSTANTIATE_NET(double)

}  // namespace modkit
