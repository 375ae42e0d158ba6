// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include "modkit/train/trainer.hpp"
#include "modkit/util/text.hpp"

namespace modkit {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw UsageError("threshold must be in (0, 1]");
  if (batch_size < 4) throw UsageError("batch_size must be >= 4");
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be >= 0");
  loss.validate();
}

void set_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "lr") c.lr = parse_double(v, key);
  else if (key == "momentum") c.momentum = parse_double(v, key);
  else if (key == "epochs") c.epochs = parse_u64(v, key);
  else if (key == "batch_size") c.batch_size = parse_u64(v, key);
  else if (key == "seed") c.seed = parse_u64(v, key);
  else if (key == "threshold") c.threshold = parse_double(v, key);
  else if (key == "first_block_retained") c.first_block_retained = parse_bool(v, key);
  else if (key == "weight_decay") c.weight_decay = parse_double(v, key);
  else if (key == "loss.alpha") c.loss.alpha = parse_double(v, key);
  else if (key == "loss.tau") c.loss.tau = parse_double(v, key);
  else if (key == "loss.baseline_mode") c.loss.baseline_mode = parse_bool(v, key);
  else if (key == "loss.alpha_b") c.loss.alpha_b = parse_double(v, key);
  else if (key == "loss.beta_b") c.loss.beta_b = parse_double(v, key);
  else throw UsageError("unknown config key '" + key + "'");
}

TrainConfig parse_config(const std::string& text, TrainConfig cfg) {
  std::size_t off = 0;
  while (off < text.size()) {
    std::size_t end = text.find('\n', off);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + off, end - off);
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("config: expected key = value", off);
      try {
        set_config_value(cfg, std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
      } catch (const UsageError& e) {
        throw ParseError(std::string("config: ") + e.what(), off);
      }
    }
    off = end + 1;
  }
  return cfg;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open config " + path, 0);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), base);
}

std::string format_config(const TrainConfig& c) {
  std::string s;
  auto kv = [&](const char* k, const std::string& v) { s += std::string(k) + " = " + v + "\n"; };
  kv("lr", format_double(c.lr));
  kv("momentum", format_double(c.momentum));
  kv("epochs", std::to_string(c.epochs));
  kv("batch_size", std::to_string(c.batch_size));
  kv("seed", std::to_string(c.seed));
  kv("threshold", format_double(c.threshold));
  kv("first_block_retained", c.first_block_retained ? "true" : "false");
  kv("weight_decay", format_double(c.weight_decay));
  kv("loss.alpha", format_double(c.loss.alpha));
  kv("loss.tau", format_double(c.loss.tau));
  kv("loss.baseline_mode", c.loss.baseline_mode ? "true" : "false");
  kv("loss.alpha_b", format_double(c.loss.alpha_b));
  kv("loss.beta_b", format_double(c.loss.beta_b));
  return s;
}

}  // namespace modkit
