// Copyright (c) 2026, modkit authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <utility>

#include "CLI11.hpp"
#include "modkit/log.hpp"
#include "modkit/metrics/metrics.hpp"
#include "modkit/store/bundle.hpp"
#include "modkit/util/text.hpp"

namespace modkit::cli {

namespace {

constexpr double kVerifyTolerance = 1e-5;
constexpr std::size_t kVerifySamples = 256;

struct Options {
  std::string data, model, config, out, module, report, config_a, config_b, param, values, classes, head = "original",
                                                                                             split = "train";
  std::vector<std::string> sets;
  std::optional<double> threshold;
  std::size_t finetune_epochs = 10;
  std::optional<double> finetune_lr;
  std::uint64_t seed = 0;
  bool verify = false, head_only = false, verbose = false, quiet = false;
};

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "all") return Split::kAll;
  throw UsageError("split must be train, test or all");
}

TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& sets) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
  }
  cfg.validate();
  return cfg;
}

// Fills input shape, class count and seed from the data/config when the
// model string leaves them out.
ModelSpec resolve_spec(const std::string& text, const Dataset& data, const TrainConfig& cfg) {
  auto spec = parse_model_spec(text);
  if (text.find("input=") == std::string::npos) spec.input_shape = data.sample_shape;
  if (text.find("classes=") == std::string::npos) spec.n_classes = data.n_classes;
  if (text.find("seed=") == std::string::npos) spec.seed = cfg.seed;
  validate(spec);
  if (spec.input_shape != data.sample_shape) {
    throw UsageError("model input " + join_dims(spec.input_shape) + " does not match data samples " +
                     join_dims(data.sample_shape));
  }
  return spec;
}

std::vector<std::int32_t> parse_classes(const std::string& s, std::size_t n_classes) {
  std::vector<std::int32_t> c;
  if (s.empty() || s == "all") {
    for (std::size_t i = 0; i < n_classes; ++i) c.push_back(static_cast<std::int32_t>(i));
    return c;
  }
  c = parse_int_list(s, "--classes");
  std::sort(c.begin(), c.end());
  c.erase(std::unique(c.begin(), c.end()), c.end());
  for (auto v : c)
    if (v < 0 || static_cast<std::size_t>(v) >= n_classes)
      throw UsageError("class " + std::to_string(v) + " is outside [0, " + std::to_string(n_classes) + ")");
  return c;
}

double note_threshold(const Artifact& a, const std::optional<double>& flag) {
  if (flag) return *flag;
  for (const auto& [k, v] : a.notes)
    if (k == "config.threshold") return parse_double(v, "threshold");
  return TrainConfig{}.threshold;
}

Artifact load_model_bundle(const std::string& path) {
  auto a = load_bundle(path);
  if (a.kind != ArtifactKind::kModel) throw UsageError("'" + path + "' holds modules, not a model");
  return a;
}

void write_report(const std::string& path, const MetricsReport& r, const Provenance& p) {
  if (path.empty()) return;
  std::string kv = r.key_values();
  kv += "provenance.command = " + p.command + "\n";
  kv += "provenance.seed = " + std::to_string(p.seed) + "\n";
  kv += "provenance.config_hash = " + p.config_hash + "\n";
  kv += "provenance.source_hash = " + p.source_hash + "\n";
  kv += "provenance.toolkit = " + p.toolkit + "\n";
  write_file_atomic(path, kv);
}

std::string fmt(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

int cmd_train(const Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  const auto cfg = load_train_config(o.config, o.sets);
  const auto spec = resolve_spec(o.model, data, cfg);
  auto model = build_model<float>(spec);
  const auto hist = train(model, data, cfg);
  if (!o.quiet) out << history_table(hist);
  Artifact a;
  a.kind = ArtifactKind::kModel;
  a.model = std::move(model);
  const auto source = hex64(parameter_hash<float>(std::as_const(a.model).named_parameters()));
  a.provenance = {"train", cfg.seed, config_hash(cfg), source};
  a.notes.emplace_back("data", o.data);
  for (const auto& [k, v] : config_echo(spec, cfg)) a.notes.emplace_back("config." + k, v);
  if (!hist.empty()) a.notes.emplace_back("final_test_accuracy", format_double(hist.back().test_accuracy));
  save_bundle(a, o.out);
  out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_decompose(const Options& o, std::ostream& out) {
  auto src = load_model_bundle(o.model);
  auto& model = src.model;
  const auto data = load_dataset(o.data);
  const double threshold = note_threshold(src, o.threshold);
  const auto classes = parse_classes(o.classes, model.spec().n_classes);
  const auto split = parse_split(o.split);
  if (o.head != "fresh" && o.head != "original") throw UsageError("--head must be fresh or original");
  const HeadInit head = o.head == "fresh" ? HeadInit::kFresh : HeadInit::kOriginalRows;

  auto verify_idx = data.indices(Split::kTest);
  if (verify_idx.empty()) verify_idx = data.indices(Split::kAll);
  verify_idx.resize(std::min(verify_idx.size(), kVerifySamples));
  const auto batch = data.gather<float>(verify_idx);

  Artifact a;
  a.kind = ArtifactKind::kModules;
  a.provenance = {"decompose", o.seed, src.provenance.config_hash, src.provenance.source_hash};
  a.notes.emplace_back("threshold", format_double(threshold));
  double worst = 0;
  out << "class  NRR/KRR  WRR     FLOPs";
  if (o.verify) out << "     deviation";
  out << "\n";
  for (auto c : classes) {
    auto ms = extract_class_mask(model, data, c, threshold, split);
    auto sub = decompose(model, ms, head, o.seed);
    const auto r = retention(sub);
    out << std::to_string(c) << "      " << fmt(r.unit_rate()) << "   " << fmt(r.wrr()) << "  "
        << estimate_flops(sub.net);
    if (o.verify) {
      const double dev = equivalence_check(model, ms, sub, batch).max();
      if (!std::isnan(worst) && (std::isnan(dev) || dev > worst)) worst = dev;  // NaN must fail
      out << "  " << format_double(dev);
    }
    out << "\n";
    a.modules.push_back(std::move(sub));
  }
  out << "full model FLOPs " << estimate_flops(model.net) << "\n";
  if (o.verify) {
    a.notes.emplace_back("verify.max_deviation", format_double(worst));
    out << "max deviation " << format_double(worst) << " (tolerance " << format_double(kVerifyTolerance) << ")\n";
    if (!(worst <= kVerifyTolerance)) {
      throw InvariantError("equivalence check failed: deviation " + format_double(worst) + " exceeds " +
                           format_double(kVerifyTolerance));
    }
  }
  save_bundle(a, o.out);
  out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_reuse(const Options& o, std::ostream& out) {
  auto src = load_model_bundle(o.model);
  auto& model = src.model;
  const auto data = load_dataset(o.data);
  const double threshold = note_threshold(src, o.threshold);
  const auto classes = parse_classes(o.classes, model.spec().n_classes);
  if (classes.size() < 2) throw UsageError("reuse needs at least two classes");

  ModuleMaskSet merged = extract_class_mask(model, data, classes[0], threshold);
  for (std::size_t i = 1; i < classes.size(); ++i)
    merged = merge_masks(merged, extract_class_mask(model, data, classes[i], threshold));
  auto sub = decompose(model, merged, HeadInit::kFresh, o.seed);
  const auto target = data.restrict_to(classes, true);

  FinetuneOptions fo;
  fo.epochs = o.finetune_epochs;
  fo.seed = o.seed;
  fo.head_only = o.head_only;
  if (o.finetune_lr) fo.lr = *o.finetune_lr;
  finetune(sub, target, fo);

  // Full model on the same samples, restricted to the reused classes.
  const auto subset = data.restrict_to(classes, false);
  const auto idx = subset.indices(Split::kTest);
  const auto full_acc = accuracy(predict(model, subset, idx), subset.labels(idx));
  auto rep = module_report(sub, target);
  rep.label = "reused module";
  out << rep.text();
  out << "full model accuracy on these classes " << fmt(full_acc) << "\n";

  Artifact a;
  a.kind = ArtifactKind::kModules;
  a.provenance = {"reuse", o.seed, src.provenance.config_hash, src.provenance.source_hash};
  a.notes.emplace_back("threshold", format_double(threshold));
  a.notes.emplace_back("finetune_epochs", std::to_string(fo.epochs));
  a.notes.emplace_back("module_accuracy", format_double(rep.accuracy));
  a.notes.emplace_back("full_accuracy", format_double(full_acc));
  a.modules.push_back(std::move(sub));
  save_bundle(a, o.out);
  write_report(o.report, rep, a.provenance);
  out << "wrote " << o.out << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  if (o.model.empty() == o.module.empty()) throw UsageError("eval needs exactly one of --model or --module");
  if (!o.model.empty()) {
    auto a = load_model_bundle(o.model);
    ReportOptions ro;
    ro.threshold = note_threshold(a, o.threshold);
    auto rep = build_report(a.model, data, ro);
    rep.label = o.model;
    for (const auto& [k, v] : a.notes)
      if (k.rfind("config.", 0) == 0) rep.config.emplace_back(k.substr(7), v);
    out << rep.text();
    a.provenance.command = "eval";
    write_report(o.report, rep, a.provenance);
    return 0;
  }
  auto a = load_bundle(o.module);
  if (a.kind != ArtifactKind::kModules) throw UsageError("'" + o.module + "' holds a model, not modules");
  for (auto& sub : a.modules) {
    if (sub.net.spec.input_shape != data.sample_shape) throw UsageError("module input does not match data samples");
    const auto target = data.restrict_to(sub.masks.classes, true);
    auto rep = module_report(sub, target);
    rep.label = o.module;
    out << rep.text();
    a.provenance.command = "eval";
    write_report(o.report, rep, a.provenance);
  }
  return 0;
}

void summary_row(std::ostream& out, const std::string& label, const MetricsReport& r) {
  out << label << "  acc " << fmt(r.accuracy) << "  retention " << fmt(r.mean_retention()) << "  cohesion "
      << (r.mean_cohesion ? fmt(*r.mean_cohesion) : "n/a") << "  coupling "
      << (r.coupling ? fmt(*r.coupling) : "n/a") << "\n";
}

int cmd_compare(const Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  const auto a = load_train_config(o.config_a, {});
  const auto b = load_train_config(o.config_b, {});
  if (a.seed != b.seed) throw UsageError("compare needs matched seeds in both configs");
  const auto spec = resolve_spec(o.model, data, a);
  auto [ra, rb] = compare_losses(data, spec, a, b);
  out << ra.report.text() << "\n" << rb.report.text() << "\n";
  summary_row(out, "contrastive", ra.report);
  summary_row(out, "baseline   ", rb.report);
  if (!o.report.empty()) {
    write_report(o.report + ".contrastive", ra.report, {"compare", a.seed, config_hash(a), ""});
    write_report(o.report + ".baseline", rb.report, {"compare", b.seed, config_hash(b), ""});
  }
  return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
  const auto data = load_dataset(o.data);
  const auto cfg = load_train_config(o.config, o.sets);
  const auto spec = resolve_spec(o.model, data, cfg);
  const auto values = parse_double_list(o.values, "--values");
  const auto pts = sweep(data, spec, cfg, o.param, values);
  for (const auto& p : pts) {
    out << "## " << o.param << " = " << format_double(p.value) << "\n" << history_table(p.result.history) << "\n";
  }
  out << o.param << "  accuracy  retention  cohesion  coupling\n";
  for (const auto& p : pts) summary_row(out, format_double(p.value), p.result.report);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"modkit: modular training, decomposition and reuse of small networks", "modkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_flag("-v,--verbose", o.verbose, "debug logging");
  app.add_flag("-q,--quiet", o.quiet, "warnings and errors only");

  auto* train_cmd = app.add_subcommand("train", "train a modular model");
  train_cmd->add_option("--data", o.data, "dataset spec (blobs:..., patterns:..., idx:...)")->required();
  train_cmd->add_option("--model", o.model, "model spec, e.g. mlp:widths=64x64")->required();
  train_cmd->add_option("--config", o.config, "key = value config file");
  train_cmd->add_option("--set", o.sets, "override a config key (key=value)");
  train_cmd->add_option("--out", o.out, "output bundle")->required();

  auto* dec = app.add_subcommand("decompose", "extract per-class modules");
  dec->add_option("--model", o.model, "model bundle")->required();
  dec->add_option("--data", o.data, "dataset spec used for mask extraction")->required();
  dec->add_option("--classes", o.classes, "comma list (default: all)");
  dec->add_option("--threshold", o.threshold, "vote threshold (default: from training config)");
  dec->add_option("--split", o.split, "extraction split: train|test|all");
  dec->add_option("--head", o.head, "module head: original|fresh");
  dec->add_option("--seed", o.seed, "seed for fresh heads");
  dec->add_flag("--verify", o.verify, "check sub-model equivalence, exit 3 on failure");
  dec->add_option("--out", o.out, "output bundle")->required();

  auto* reuse = app.add_subcommand("reuse", "merge class modules and fine-tune");
  reuse->add_option("--model", o.model, "model bundle")->required();
  reuse->add_option("--classes", o.classes, "comma list of at least two classes")->required();
  reuse->add_option("--data", o.data, "dataset spec")->required();
  reuse->add_option("--finetune-epochs", o.finetune_epochs, "fine-tuning epochs");
  reuse->add_option("--finetune-lr", o.finetune_lr, "fine-tuning learning rate");
  reuse->add_option("--threshold", o.threshold, "vote threshold");
  reuse->add_option("--seed", o.seed, "seed for the new head and batching");
  reuse->add_flag("--head-only", o.head_only, "freeze everything but the new head");
  reuse->add_option("--report", o.report, "write the metrics report (key = value)");
  reuse->add_option("--out", o.out, "output bundle")->required();

  auto* ev = app.add_subcommand("eval", "metrics report for a model or module bundle");
  ev->add_option("--model", o.model, "model bundle");
  ev->add_option("--module", o.module, "module bundle");
  ev->add_option("--data", o.data, "dataset spec")->required();
  ev->add_option("--threshold", o.threshold, "vote threshold");
  ev->add_option("--report", o.report, "write the metrics report (key = value)");

  auto* cmp = app.add_subcommand("compare", "contrastive vs direct-sum baseline loss");
  cmp->add_option("--data", o.data, "dataset spec")->required();
  cmp->add_option("--model", o.model, "model spec")->required();
  cmp->add_option("--config-a", o.config_a, "contrastive arm config")->required();
  cmp->add_option("--config-b", o.config_b, "baseline arm config")->required();
  cmp->add_option("--report", o.report, "report path prefix");

  auto* sw = app.add_subcommand("sweep", "train once per value of alpha or tau");
  sw->add_option("--param", o.param, "alpha|tau")->required();
  sw->add_option("--values", o.values, "comma list")->required();
  sw->add_option("--data", o.data, "dataset spec")->required();
  sw->add_option("--model", o.model, "model spec")->required();
  sw->add_option("--config", o.config, "base config file");
  sw->add_option("--set", o.sets, "override a config key (key=value)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const auto prev = log_level();
  set_log_level(o.verbose ? LogLevel::kDebug : o.quiet ? LogLevel::kWarn : LogLevel::kInfo);
  int code = 0;
  try {
    if (*train_cmd) code = cmd_train(o, out);
    else if (*dec) code = cmd_decompose(o, out);
    else if (*reuse) code = cmd_reuse(o, out);
    else if (*ev) code = cmd_eval(o, out);
    else if (*cmp) code = cmd_compare(o, out);
    else if (*sw) code = cmd_sweep(o, out);
  } catch (const InvariantError& e) {
    err << "invariant violation: " << e.what() << "\n";
    code = 3;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    code = 2;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    code = 2;
  } catch (const VersionError& e) {
    err << "version error: " << e.what() << "\n";
    code = 2;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << "\n";
    code = 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    code = 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = 2;
  }
  set_log_level(prev);
  return code;
}

}  // namespace modkit::cli
