// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0
//
// Backbones (MLP, plain CNN, tiny single-head ViT) and the modular model that
// attaches one mask generator per maskable layer.
//
// The same Backbone type holds both full and structurally pruned networks; a
// pruned network simply has smaller parameter tensors plus padding indices
// for the layers that write into the residual stream.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "modkit/identifier/mask_generator.hpp"
#include "modkit/nn/layers.hpp"

namespace modkit {

enum class Arch { kMlp, kCnn, kTinyVit };

const char* arch_name(Arch a);
Arch parse_arch(const std::string& s);

struct ModelSpec {
  Arch arch = Arch::kMlp;
  /// Per-sample input shape: {in_dim} for MLP, {C,H,W} otherwise.
  Shape input_shape;
  /// MLP hidden widths or CNN channel counts.
  std::vector<std::size_t> widths;
  std::size_t patch = 0;
  std::size_t embed_dim = 0;
  std::size_t blocks = 0;
  std::size_t mlp_ratio = 2;
  std::size_t n_classes = 2;
  bool first_block_retained = false;
  /// Feed generators a gradient-stopped copy of the layer input.
  bool detach_generator_input = false;
  std::uint64_t seed = 0;

  std::size_t num_tokens() const;
  bool operator==(const ModelSpec&) const = default;
};

/// "mlp:input=2,widths=64x64,classes=4,seed=1"; ViT adds patch, dim, blocks,
/// mlp_ratio. Unknown keys are a UsageError.
ModelSpec parse_model_spec(const std::string& text);
/// Canonical form; parse_model_spec(format_model_spec(s)) == s.
std::string format_model_spec(const ModelSpec& spec);

enum class SlotKind { kNeuron, kKernel };

/// A maskable layer.
struct SlotInfo {
  std::string name;
  std::size_t width = 0;
  std::size_t in_dim = 0;  // generator input width
  SlotKind kind = SlotKind::kNeuron;
};

template <class T>
struct AttentionBlock {
  Linear<T> query, key, value, out_proj;
  /// Residual positions written by out_proj; empty means all D in order.
  std::vector<std::size_t> out_pad;
};

template <class T>
struct MlpBlock {
  Linear<T> fc1, fc2;
  std::vector<std::size_t> out_pad;
};

template <class T>
struct EncoderBlock {
  LayerNorm<T> ln1;
  AttentionBlock<T> attn;
  LayerNorm<T> ln2;
  MlpBlock<T> mlp;
  bool maskable = true;
};

/// Called on each maskable layer output; returns the (possibly masked) output.
template <class T>
using SlotHook = std::function<Var<T>(std::size_t slot, const Var<T>& input, const Var<T>& output)>;

template <class T>
struct BackboneOutput {
  Var<T> features;  // pre-head
  Var<T> logits;
};

template <class T>
struct Backbone {
  ModelSpec spec;
  std::vector<Linear<T>> hidden;  // MLP
  std::vector<Conv2d<T>> convs;   // CNN
  Linear<T> patch_embed;          // ViT
  Parameter<T> cls_token;         // (1,1,D)
  Parameter<T> pos_embed;         // (1,N,D)
  std::vector<EncoderBlock<T>> blocks;
  LayerNorm<T> final_ln;
  Linear<T> head;
  /// 1/sqrt(original key width); unchanged by pruning.
  T attn_scale = T(1);

  static Backbone init(const ModelSpec& spec, Rng& rng);

  std::vector<SlotInfo> slots() const;
  std::size_t feature_dim() const { return head.in_dim(); }
  std::size_t n_classes() const { return head.out_dim(); }

  /// batch: (B, per-sample input shape...).
  BackboneOutput<T> forward(Tape<T>& tape, const Tensor<T>& batch, const SlotHook<T>& hook = {});

  std::vector<std::pair<std::string, Parameter<T>*>> named_parameters();
  std::vector<std::pair<std::string, const Parameter<T>*>> named_parameters() const;
};

enum class MaskMode { kOff, kGenerate, kFixed };

template <class T>
struct ForwardResult {
  Var<T> logits;
  Var<T> features;
  /// Per maskable layer: (B,1,w) in generate mode, (1,1,w) in fixed mode.
  std::vector<Var<T>> masks;
  /// Per maskable layer output after masking.
  std::vector<Var<T>> activations;
};

template <class T>
struct ModularModel {
  Backbone<T> net;
  std::vector<MaskGenerator<T>> generators;

  const ModelSpec& spec() const { return net.spec; }
  std::vector<SlotInfo> slots() const { return net.slots(); }

  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& batch, MaskMode mode,
                           const std::vector<BinaryMask>* fixed = nullptr);

  std::vector<std::pair<std::string, Parameter<T>*>> named_parameters();
  std::vector<std::pair<std::string, const Parameter<T>*>> named_parameters() const;
  void zero_grad();

  template <class U>
  ModularModel<U> cast() const;
};

/// Builds the model described by spec, initialized from spec.seed.
template <class T>
ModularModel<T> build_model(const ModelSpec& spec);

template <class T = float>
ModularModel<T> build_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden_dims, std::size_t n_classes,
                          std::uint64_t seed = 0);
template <class T = float>
ModularModel<T> build_cnn(const Shape& in_shape, const std::vector<std::size_t>& channels, std::size_t n_classes,
                          std::uint64_t seed = 0);
template <class T = float>
ModularModel<T> build_tiny_vit(const Shape& image_shape, std::size_t patch, std::size_t embed_dim,
                               std::size_t n_blocks, std::size_t mlp_ratio, std::size_t n_classes,
                               bool first_block_retained = false, std::uint64_t seed = 0);

/// Throws UsageError when the spec cannot describe a valid model.
void validate(const ModelSpec& spec);

/// Copies parameter values between two models of identical topology.
template <class T, class U>
void copy_parameters(const std::vector<std::pair<std::string, const Parameter<T>*>>& from,
                     const std::vector<std::pair<std::string, Parameter<U>*>>& to) {
  if (from.size() != to.size()) throw ShapeError("copy_parameters", "parameter count differs");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].first != to[i].first || from[i].second->value.shape() != to[i].second->value.shape()) {
      throw ShapeError("copy_parameters", "mismatch at " + from[i].first);
    }
    to[i].second->value = from[i].second->value.template cast<U>();
    to[i].second->grad = Tensor<U>(to[i].second->value.shape());
  }
}

template <class T>
template <class U>
ModularModel<U> ModularModel<T>::cast() const {
  ModularModel<U> out = build_model<U>(spec());
  copy_parameters<T, U>(named_parameters(), out.named_parameters());
  return out;
}

extern template struct Backbone<float>;
extern template struct Backbone<double>;
extern template struct ModularModel<float>;
extern template struct ModularModel<double>;

}  // namespace modkit
