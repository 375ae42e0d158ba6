// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/errors.hpp"
#include "modkit/nn/network.hpp"
#include "modkit/util/text.hpp"

namespace modkit {

ModelSpec parse_model_spec(const std::string& text) {
  const auto colon = text.find(':');
  ModelSpec s;
  s.arch = parse_arch(text.substr(0, colon));
  if (colon == std::string::npos) throw UsageError("model spec '" + text + "' has no parameters");
  for (const auto& [k, v] : parse_kv_list(std::string_view(text).substr(colon + 1))) {
    if (k == "input") s.input_shape = parse_dims(v, k);
    else if (k == "widths") s.widths = parse_dims(v, k);
    else if (k == "patch") s.patch = parse_u64(v, k);
    else if (k == "dim") s.embed_dim = parse_u64(v, k);
    else if (k == "blocks") s.blocks = parse_u64(v, k);
    else if (k == "mlp_ratio") s.mlp_ratio = parse_u64(v, k);
    else if (k == "classes") s.n_classes = parse_u64(v, k);
    else if (k == "first_block_retained") s.first_block_retained = parse_bool(v, k);
    else if (k == "detach") s.detach_generator_input = parse_bool(v, k);
    else if (k == "seed") s.seed = parse_u64(v, k);
    else throw UsageError("unknown model spec key '" + k + "'");
  }
  return s;
}

std::string format_model_spec(const ModelSpec& s) {
  std::string out = std::string(arch_name(s.arch)) + ":input=" + join_dims(s.input_shape);
  if (s.arch == Arch::kTinyVit) {
    out += ",patch=" + std::to_string(s.patch) + ",dim=" + std::to_string(s.embed_dim) +
           ",blocks=" + std::to_string(s.blocks) + ",mlp_ratio=" + std::to_string(s.mlp_ratio) +
           ",first_block_retained=" + (s.first_block_retained ? "true" : "false");
  } else {
    out += ",widths=" + join_dims(s.widths);
  }
  out += ",classes=" + std::to_string(s.n_classes);
  out += std::string(",detach=") + (s.detach_generator_input ? "true" : "false");
  out += ",seed=" + std::to_string(s.seed);
  return out;
}

}  // namespace modkit
