// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "modkit/metrics/metrics.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "modkit/log.hpp"
#include "modkit/util/text.hpp"

namespace modkit {

double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double jaccard(const BinaryMask& a, const BinaryMask& b) {
  if (a.size() != b.size()) throw ShapeError("jaccard", "sets over different universes");
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    inter += a[k] && b[k];
    uni += a[k] || b[k];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> mean_pairwise_jaccard(const std::vector<BinaryMask>& sets, std::size_t* empty_pairs) {
  if (sets.size() < 2) return std::nullopt;
  double sum = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      if (empty_pairs && popcount(sets[i]) == 0 && popcount(sets[j]) == 0) ++*empty_pairs;
      sum += jaccard(sets[i], sets[j]);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

template <class T>
std::vector<BinaryMask> sample_neuron_sets(ModularModel<T>& model, const Tensor<T>& batch) {
  Tape<T> tape(false);
  auto r = model.forward(tape, batch, MaskMode::kGenerate);
  const std::size_t n = batch.dim(0);
  std::vector<BinaryMask> out(n);
  for (const auto& m : r.masks) {
    const auto& v = m.value();
    const std::size_t w = v.size() / n;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i].push_back(v[i * w + j] > T(0) ? 1 : 0);
  }
  return out;
}

namespace {

constexpr std::size_t kChunk = 256;

template <class T>
std::vector<BinaryMask> sets_for(ModularModel<T>& model, const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<BinaryMask> out;
  for (std::size_t i = 0; i < idx.size(); i += kChunk) {
    std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(i),
                                  idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + kChunk)));
    auto s = sample_neuron_sets(model, data.gather<T>(part));
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

std::vector<BinaryMask> cap_samples(std::vector<BinaryMask> sets, std::size_t cap, std::uint64_t seed,
                                    std::int32_t c) {
  if (sets.size() <= cap) return sets;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(c)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(sets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(cap);
  std::sort(order.begin(), order.end());
  std::vector<BinaryMask> out;
  for (auto i : order) out.push_back(std::move(sets[i]));
  return out;
}

std::optional<double> cohesion_of(const std::vector<BinaryMask>& sets, std::int32_t c, const EvalOptions& opt,
                                  std::size_t* empty_pairs) {
  if (sets.size() < 2) {
    log(LogLevel::kWarn, "cohesion: class " + std::to_string(c) + " has fewer than 2 samples, excluded");
    return std::nullopt;
  }
  return mean_pairwise_jaccard(cap_samples(sets, opt.cohesion_cap, opt.seed, c), empty_pairs);
}

BinaryMask union_of(const std::vector<BinaryMask>& sets) {
  BinaryMask u;
  for (const auto& s : sets) u = u.empty() ? s : mask_or(u, s);
  return u;
}

}  // namespace

template <class T>
ModularityScores eval_modularity(ModularModel<T>& model, const Dataset& data, const EvalOptions& opt) {
  ModularityScores r;
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < data.n_classes; ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    const auto idx = data.indices_of_class(cls, opt.split);
    if (idx.empty()) continue;
    const auto sets = sets_for(model, data, idx);
    r.classes.push_back(cls);
    r.modules.push_back(union_of(sets));
    r.cohesion.push_back(cohesion_of(sets, cls, opt, &r.empty_pairs));
    if (r.cohesion.back()) {
      sum += *r.cohesion.back();
      ++counted;
    }
  }
  if (counted) r.mean_cohesion = sum / static_cast<double>(counted);
  r.coupling = mean_pairwise_jaccard(r.modules, &r.empty_pairs);
  if (r.empty_pairs) log(LogLevel::kWarn, "jaccard: " + std::to_string(r.empty_pairs) + " pairs of empty sets scored 1");
  return r;
}

template <class T>
std::optional<double> eval_cohesion(ModularModel<T>& model, const Dataset& data, std::int32_t c,
                                    const EvalOptions& opt) {
  return cohesion_of(sets_for(model, data, data.indices_of_class(c, opt.split)), c, opt, nullptr);
}

template <class T>
std::optional<double> eval_coupling(ModularModel<T>& model, const Dataset& data, const EvalOptions& opt) {
  std::vector<BinaryMask> modules;
  for (std::size_t c = 0; c < data.n_classes; ++c) {
    const auto idx = data.indices_of_class(static_cast<std::int32_t>(c), opt.split);
    if (!idx.empty()) modules.push_back(union_of(sets_for(model, data, idx)));
  }
  return mean_pairwise_jaccard(modules);
}

namespace {

std::optional<double> ratio(std::size_t kept, std::size_t total) {
  if (total == 0) return std::nullopt;
  return static_cast<double>(kept) / static_cast<double>(total);
}

}  // namespace

std::optional<double> Retention::nrr() const { return ratio(neurons_kept, neurons_total); }
std::optional<double> Retention::krr() const { return ratio(kernels_kept, kernels_total); }
double Retention::wrr() const { return ratio(weights_kept, weights_total).value_or(1.0); }
double Retention::unit_rate() const { return neurons_total ? *nrr() : krr().value_or(1.0); }

template <class T>
std::size_t backbone_weight_count(const Backbone<T>& net) {
  std::size_t n = 0;
  for (const auto& [name, p] : net.named_parameters())
    if (name.rfind("head.", 0) != 0) n += p->value.size();
  return n;
}

template <class T>
Retention retention(const SubModule<T>& sub) {
  Retention r;
  const bool kernels = sub.net.spec.arch == Arch::kCnn;
  for (std::size_t l = 0; l < sub.retained.size(); ++l) {
    auto& kept = kernels ? r.kernels_kept : r.neurons_kept;
    auto& total = kernels ? r.kernels_total : r.neurons_total;
    kept += sub.retained[l].size();
    total += sub.masks.layers[l].size();
  }
  r.weights_kept = backbone_weight_count(sub.net);
  Rng rng(0);
  auto src_spec = sub.net.spec;
  src_spec.n_classes = std::max<std::size_t>(2, sub.source_n_classes);
  r.weights_total = backbone_weight_count(Backbone<T>::init(src_spec, rng));
  return r;
}

template <class T>
Retention retention(const ModularModel<T>& model, const ModuleMaskSet& masks) {
  return retention(decompose(model, masks, HeadInit::kOriginalRows));
}

std::uint64_t linear_flops(std::size_t in, std::size_t out, std::size_t tokens) {
  return 2ull * in * out * tokens;
}

template <class T>
std::uint64_t estimate_flops(const Backbone<T>& net) {
  std::uint64_t f = 0;
  const auto& s = net.spec;
  switch (s.arch) {
    case Arch::kMlp:
      for (const auto& l : net.hidden) f += linear_flops(l.in_dim(), l.out_dim(), 1);
      break;
    case Arch::kCnn: {
      std::size_t h = s.input_shape[1], w = s.input_shape[2];
      for (const auto& c : net.convs) {
        const std::size_t k = c.weight.value.dim(2);
        f += 2ull * c.out_channels() * c.in_channels() * k * k * h * w;
        h /= 2;
        w /= 2;
      }
      break;
    }
    case Arch::kTinyVit: {
      const std::size_t n = s.num_tokens();
      f += linear_flops(net.patch_embed.in_dim(), net.patch_embed.out_dim(), n - 1);
      for (const auto& b : net.blocks) {
        const auto& a = b.attn;
        f += linear_flops(a.query.in_dim(), a.query.out_dim(), n);
        f += linear_flops(a.key.in_dim(), a.key.out_dim(), n);
        f += linear_flops(a.value.in_dim(), a.value.out_dim(), n);
        f += 2ull * n * n * a.query.out_dim();  // Q K^T
        f += 2ull * n * n * a.value.out_dim();  // softmax(.) V
        f += linear_flops(a.out_proj.in_dim(), a.out_proj.out_dim(), n);
        f += linear_flops(b.mlp.fc1.in_dim(), b.mlp.fc1.out_dim(), n);
        f += linear_flops(b.mlp.fc2.in_dim(), b.mlp.fc2.out_dim(), n);
      }
      break;
    }
  }
  return f + linear_flops(net.head.in_dim(), net.head.out_dim(), 1);
}

double MetricsReport::mean_retention() const {
  if (modules.empty()) return 0.0;
  double s = 0;
  for (const auto& m : modules) s += m.nrr ? *m.nrr : m.krr.value_or(1.0);
  return s / static_cast<double>(modules.size());
}

namespace {

std::string opt_str(const std::optional<double>& v) { return v ? format_double(*v) : "absent"; }

std::string classes_str(const std::vector<std::int32_t>& c) {
  std::string s;
  for (std::size_t i = 0; i < c.size(); ++i) s += (i ? "+" : "") + std::to_string(c[i]);
  return s;
}

std::string fixed4(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

}  // namespace

std::string MetricsReport::text() const {
  std::ostringstream o;
  o << "# metrics: " << (label.empty() ? "model" : label) << "\n";
  o << "# FLOPs = 2 x multiply-adds of linear, conv and attention matmuls; norms, activations, pooling excluded\n";
  o << "accuracy         " << fixed4(accuracy) << "\n";
  o << "mean cohesion    " << fixed4(mean_cohesion) << "\n";
  o << "mean coupling    " << fixed4(coupling) << "\n";
  o << "mean retention   " << fixed4(mean_retention()) << "\n";
  o << "FLOPs (full)     " << flops_full << "\n";
  if (empty_pairs) o << "note: " << empty_pairs << " pairs of empty neuron sets were scored as Jaccard 1\n";
  o << "\nmodule  classes  NRR     KRR     WRR     FLOPs\n";
  for (std::size_t i = 0; i < modules.size(); ++i) {
    const auto& m = modules[i];
    char line[160];
    std::snprintf(line, sizeof line, "%-7zu %-8s %-7s %-7s %-7s %llu\n", i, classes_str(m.classes).c_str(),
                  fixed4(m.nrr).c_str(), fixed4(m.krr).c_str(), fixed4(m.wrr).c_str(),
                  static_cast<unsigned long long>(m.flops));
    o << line;
  }
  if (!config.empty()) {
    o << "\nconfig\n";
    for (const auto& [k, v] : config) o << "  " << k << " = " << v << "\n";
  }
  return o.str();
}

std::string MetricsReport::key_values() const {
  std::ostringstream o;
  auto list = [&](const char* key, auto get) {
    o << key << " = ";
    for (std::size_t i = 0; i < modules.size(); ++i) o << (i ? "," : "") << get(modules[i]);
    o << "\n";
  };
  o << "label = " << label << "\n";
  o << "accuracy = " << format_double(accuracy) << "\n";
  o << "mean_cohesion = " << opt_str(mean_cohesion) << "\n";
  o << "coupling = " << opt_str(coupling) << "\n";
  o << "mean_retention = " << format_double(mean_retention()) << "\n";
  o << "empty_pairs = " << empty_pairs << "\n";
  o << "flops_full = " << flops_full << "\n";
  list("modules.classes", [](const ModuleMetrics& m) { return classes_str(m.classes); });
  list("modules.nrr", [](const ModuleMetrics& m) { return opt_str(m.nrr); });
  list("modules.krr", [](const ModuleMetrics& m) { return opt_str(m.krr); });
  list("modules.wrr", [](const ModuleMetrics& m) { return format_double(m.wrr); });
  list("modules.flops", [](const ModuleMetrics& m) { return std::to_string(m.flops); });
  for (const auto& [k, v] : config) o << "config." << k << " = " << v << "\n";
  return o.str();
}

namespace {

template <class T>
ModuleMetrics module_metrics(const SubModule<T>& sub) {
  const auto r = retention(sub);
  ModuleMetrics m;
  m.classes = sub.masks.classes;
  m.nrr = r.nrr();
  m.krr = r.krr();
  m.wrr = r.wrr();
  m.flops = estimate_flops(sub.net);
  return m;
}

}  // namespace

template <class T>
MetricsReport build_report(ModularModel<T>& model, const Dataset& data, const ReportOptions& opt) {
  MetricsReport rep;
  const auto idx = data.indices(opt.eval.split);
  rep.accuracy = idx.empty() ? 0.0 : accuracy(predict(model, data, idx), data.labels(idx));
  rep.flops_full = estimate_flops(model.net);
  for (std::size_t c = 0; c < data.n_classes; ++c) {
    const auto cls = static_cast<std::int32_t>(c);
    if (data.indices_of_class(cls, opt.mask_split).empty()) continue;
    auto ms = extract_class_mask(model, data, cls, opt.threshold, opt.mask_split);
    rep.modules.push_back(module_metrics(decompose(model, ms, HeadInit::kOriginalRows)));
  }
  const auto scores = eval_modularity(model, data, opt.eval);
  rep.mean_cohesion = scores.mean_cohesion;
  rep.coupling = scores.coupling;
  rep.empty_pairs = scores.empty_pairs;
  return rep;
}

template <class T>
MetricsReport module_report(SubModule<T>& sub, const Dataset& target, Split split) {
  MetricsReport rep;
  rep.label = "module";
  const auto idx = target.indices(split);
  rep.accuracy = idx.empty() ? 0.0 : accuracy(predict(sub.net, target, idx), target.labels(idx));
  rep.modules.push_back(module_metrics(sub));
  Rng rng(0);
  auto src = sub.net.spec;
  src.n_classes = std::max<std::size_t>(2, sub.source_n_classes);
  rep.flops_full = estimate_flops(Backbone<T>::init(src, rng));
  return rep;
}

std::vector<std::pair<std::string, std::string>> config_echo(const ModelSpec& spec, const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out{{"model", format_model_spec(spec)}};
  std::istringstream in(format_config(cfg));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

namespace {

ArmResult run_arm(const Dataset& data, const ModelSpec& spec, const TrainConfig& cfg, const ReportOptions& opt,
                  std::string label) {
  auto model = build_model<float>(spec);
  ArmResult r;
  r.history = train(model, data, cfg);
  auto ropt = opt;
  ropt.threshold = cfg.threshold;
  r.report = build_report(model, data, ropt);
  r.report.label = std::move(label);
  r.report.config = config_echo(spec, cfg);
  return r;
}

}  // namespace

std::pair<ArmResult, ArmResult> compare_losses(const Dataset& data, const ModelSpec& spec, TrainConfig arm_a,
                                               TrainConfig arm_b, const ReportOptions& opt) {
  arm_a.loss.baseline_mode = false;
  arm_b.loss.baseline_mode = true;
  return {run_arm(data, spec, arm_a, opt, "contrastive"), run_arm(data, spec, arm_b, opt, "baseline")};
}

std::vector<SweepPoint> sweep(const Dataset& data, const ModelSpec& spec, const TrainConfig& base,
                              const std::string& param, const std::vector<double>& values,
                              const ReportOptions& opt) {
  if (param != "alpha" && param != "tau") throw UsageError("sweep: parameter must be alpha or tau, got '" + param + "'");
  std::vector<SweepPoint> out;
  for (double v : values) {
    auto cfg = base;
    set_config_value(cfg, "loss." + param, format_double(v));
    cfg.validate();
    out.push_back({v, run_arm(data, spec, cfg, opt, param + "=" + format_double(v))});
  }
  return out;
}

std::string history_table(const TrainHistory& h) {
  std::ostringstream o;
  o << "epoch  loss      ce        contra    test_acc  cohesion  coupling\n";
  for (const auto& r : h) {
    char line[160];
    std::snprintf(line, sizeof line, "%-6zu %-9.5f %-9.5f %-9.5f %-9.4f %-9.4f %-9.4f\n", r.epoch, r.loss, r.ce,
                  r.contrastive, r.test_accuracy, r.cohesion, r.coupling);
    o << line;
  }
  return o.str();
}

#define MODKIT_INSTANTIATE_METRICS(T)                                                                               \
  template std::vector<BinaryMask> sample_neuron_sets<T>(ModularModel<T>&, const Tensor<T>&);                       \
  template ModularityScores eval_modularity<T>(ModularModel<T>&, const Dataset&, const EvalOptions&);               \
  template std::optional<double> eval_cohesion<T>(ModularModel<T>&, const Dataset&, std::int32_t,                   \
                                                  const EvalOptions&);                                              \
  template std::optional<double> eval_coupling<T>(ModularModel<T>&, const Dataset&, const EvalOptions&);            \
  template std::size_t backbone_weight_count<T>(const Backbone<T>&);                                                \
  template Retention retention<T>(const SubModule<T>&);                                                             \
  template Retention retention<T>(const ModularModel<T>&, const ModuleMaskSet&);                                    \
  template std::uint64_t estimate_flops<T>(const Backbone<T>&);                                                     \
  template MetricsReport build_report<T>(ModularModel<T>&, const Dataset&, const ReportOptions&);                   \
  template MetricsReport module_report<T>(SubModule<T>&, const Dataset&, Split);

MODKIT_INSTANTIATE_METRICS(float)
MODKIT_INSTANTIATE_METRICS(double)

}  // namespace modkit
