#include "commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rnet/analysis.hpp"
#include "rnet/attacks.hpp"
#include "rnet/corruptions.hpp"
#include "rnet/data.hpp"
#include "rnet/error.hpp"
#include "rnet/models.hpp"
#include "rnet/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace rnet::cli {
namespace {

// Flag values as given on the command line; applied over the config file.
struct Flags {
  std::string config;
  std::map<std::string, std::string> keys;
  std::map<std::string, CLI::Option*> key_options;
  std::vector<std::pair<std::string, std::string>> shortcuts;  // flag name -> key
  std::map<std::string, std::string> shortcut_values;
  std::map<std::string, CLI::Option*> shortcut_options;

  std::string out;
  std::string log;
  std::string checkpoint;
  std::vector<std::string> inputs;
};

void add_schema_options(CLI::App* cmd, Flags& f) {
  for (const KeyInfo& k : schema()) {
    std::string desc = k.help;
    if (!k.default_value.empty()) desc += " [default: " + k.default_value + "]";
    f.key_options[k.key] = cmd->add_option("--" + k.key, f.keys[k.key], desc)->group("Configuration keys");
  }
}

void add_shortcut(CLI::App* cmd, Flags& f, const std::string& name, const std::string& key) {
  f.shortcuts.emplace_back(name, key);
  f.shortcut_options[name] = cmd->add_option("--" + name, f.shortcut_values[name], "same as --" + key);
}

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg.load_file(f.config);
  for (const auto& [key, opt] : f.key_options) {
    if (opt->count() > 0) cfg.set(key, f.keys.at(key));
  }
  for (const auto& [name, key] : f.shortcuts) {
    if (f.shortcut_options.at(name)->count() > 0) cfg.set(key, f.shortcut_values.at(name));
  }
  return cfg;
}

fs::path dataset_path(const RunConfig& cfg, const std::string& prefix) {
  fs::path p(prefix);
  const std::string& dir = cfg.str("data.dir");
  if (p.is_relative() && !dir.empty()) return fs::path(dir) / p;
  return p;
}

Dataset load_dataset(const fs::path& prefix, std::size_t limit) {
  Dataset ds = load_idx_prefix(prefix);
  if (limit > 0 && limit < ds.size()) ds = ds.head(limit);
  return ds;
}

ModelSpec model_from_config(const RunConfig& cfg, const Dataset& ds) {
  const std::string arch = cfg.str("model.architecture");
  ModelSpec spec;
  if (architecture_from_string(arch) == Architecture::Mlp) {
    spec = ModelSpec::mlp(cfg.count_list("model.layer_sizes"));
  } else {
    spec = ModelSpec::lenet();
    spec.conv1_channels = cfg.count("model.conv1_channels");
    spec.conv2_channels = cfg.count("model.conv2_channels");
    spec.kernel = cfg.count("model.kernel");
    spec.hidden = cfg.count("model.hidden");
    const Shape s = ds.sample_shape();
    spec.in_channels = s[0];
    spec.in_height = s[1];
    spec.in_width = s[2];
  }
  spec.validate();
  const Shape s = ds.sample_shape();
  if (spec.input_features() != shape_size(s)) {
    throw ConfigError("model expects " + std::to_string(spec.input_features()) + " input features but dataset '" +
                      ds.name + "' has samples of shape " + shape_string(s));
  }
  return spec;
}

PerturbConfig perturb_from_config(const RunConfig& cfg) {
  PerturbConfig p;
  p.epsilon = cfg.real("perturb.epsilon");
  p.prob = cfg.real("perturb.prob");
  p.placement = cfg.list("perturb.placement");
  p.active_in_eval = cfg.flag("perturb.eval_active");
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("perturb.*: ") + e.what());
  }
  return p;
}

AttackSpec attack_from_config(const RunConfig& cfg) {
  AttackSpec a;
  a.kind = cfg.str("attack.kind");
  a.epsilon = cfg.real("attack.epsilon");
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("attack.*: ") + e.what());
  }
  return a;
}

std::string run_name(const RunConfig& cfg) {
  const std::string& name = cfg.str("run.name");
  if (!name.empty()) return name;
  return cfg.str("train.regime") + "-seed" + cfg.str("run.seed");
}

fs::path output_path(const RunConfig& cfg, const std::string& flag_value, const std::string& suffix) {
  if (!flag_value.empty()) return flag_value;
  return fs::path(cfg.str("run.out_dir")) / (run_name(cfg) + suffix);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

int cmd_train(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(f);
  const Dataset train_ds = load_dataset(dataset_path(cfg, cfg.str("data.train")), cfg.count("data.train_limit"));
  std::optional<Dataset> test_ds;
  // Per-epoch accuracy is measured on the test set when it is available.
  const fs::path test_prefix = dataset_path(cfg, cfg.str("data.test"));
  if (!cfg.str("data.test").empty()) test_ds = load_dataset(test_prefix, cfg.count("data.test_limit"));

  TrainConfig tc;
  tc.regime = regime_from_string(cfg.str("train.regime"));
  tc.model = model_from_config(cfg, train_ds);
  tc.epochs = cfg.count("train.epochs");
  tc.batch_size = cfg.count("train.batch_size");
  tc.learning_rate = cfg.real("train.learning_rate");
  tc.momentum = cfg.real("train.momentum");
  tc.seed = cfg.u64("run.seed");
  if (tc.regime == Regime::R) tc.perturb = perturb_from_config(cfg);
  if (tc.regime == Regime::Fgsm) {
    tc.attack = attack_from_config(cfg);
    tc.mix_ratio = cfg.real("attack.mix_ratio");
  }
  const fs::path ckpt = output_path(cfg, f.out, ".ckpt");
  const fs::path log_path = output_path(cfg, f.log, ".log.jsonl");
  ensure_parent(ckpt);
  ensure_parent(log_path);
  tc.divergence_checkpoint = ckpt.string() + ".last-good";

  std::ofstream log(log_path, std::ios::binary);
  if (!log) throw FormatError("--log: cannot open " + log_path.string() + " for writing");
  const TrainResult result = train(tc, train_ds, test_ds ? &*test_ds : nullptr, [&](const EpochRecord& r) {
    log << r.to_json().dump() << "\n";
    log.flush();
    err << "epoch " << r.epoch << "/" << tc.epochs << "  loss " << r.train_loss << "  accuracy " << r.eval_accuracy
        << "  (" << static_cast<long long>(r.wall_ms) << " ms)\n";
  });
  save_checkpoint(result.params, tc.model, ckpt);
  out << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve(f);
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const fs::path prefix = f.inputs.empty() ? dataset_path(cfg, cfg.str("data.test")) : fs::path(f.inputs.front());
  const Dataset ds = load_dataset(prefix, cfg.count("data.test_limit"));
  if (ck.spec.input_features() != shape_size(ds.sample_shape())) {
    throw ConfigError("--checkpoint " + f.checkpoint + " expects " + std::to_string(ck.spec.input_features()) +
                      " input features; dataset " + prefix.string() + " has " +
                      std::to_string(shape_size(ds.sample_shape())));
  }

  EvalOptions opts;
  opts.model_id = cfg.str("eval.model_id").empty() ? to_string(ck.spec.architecture) : cfg.str("eval.model_id");
  opts.regime = to_string(regime_from_string(cfg.str("train.regime")));
  if (cfg.flag("perturb.eval_active")) opts.perturb = perturb_from_config(cfg);

  std::vector<Condition> conditions;
  for (const std::string& name : cfg.list("eval.conditions")) {
    try {
      conditions.push_back(Condition::parse(name));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("eval.conditions: ") + e.what());
    }
  }
  if (conditions.empty()) throw ConfigError("eval.conditions: no condition given");

  const std::uint64_t seed = cfg.u64("run.seed");
  std::vector<EvalRow> rows;
  for (const Condition& c : conditions) rows.push_back(evaluate(ck.params, ck.spec, ds, c, seed, opts));
  const std::string csv = eval_csv(rows);
  if (f.out.empty()) {
    out << csv;
  } else {
    write_text(f.out, csv);
  }
  return kExitOk;
}

int cmd_attack(const Flags& f, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve(f);
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (f.out.empty()) throw ConfigError("--out is required (output dataset prefix)");
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  const fs::path prefix = f.inputs.empty() ? dataset_path(cfg, cfg.str("data.test")) : fs::path(f.inputs.front());
  const Dataset ds = load_dataset(prefix, cfg.count("data.test_limit"));
  const Dataset adv = fgsm_dataset(ck.params, ck.spec, ds, attack_from_config(cfg));
  ensure_parent(f.out);
  write_idx_prefix(adv, f.out);
  out << f.out << "\n";
  return kExitOk;
}

int cmd_corrupt(const Flags& f, std::ostream& out, std::ostream&) {
  const RunConfig cfg = resolve(f);
  if (f.inputs.empty()) throw ConfigError("--in is required (input dataset prefix)");
  if (f.out.empty()) throw ConfigError("--out is required (output dataset prefix)");
  CorruptionSpec spec;
  try {
    spec.kind = corruption_from_string(cfg.str("corrupt.kind"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--kind: ") + e.what());
  }
  if (!cfg.str("corrupt.param").empty()) spec.primary_param() = cfg.real("corrupt.param");
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--param: ") + e.what());
  }
  const Dataset ds = load_dataset(f.inputs.front(), 0);
  const Dataset corrupted = corrupt_dataset(ds, spec, cfg.u64("run.seed"));
  ensure_parent(f.out);
  write_idx_prefix(corrupted, f.out);
  out << f.out << "\n";
  return kExitOk;
}

int cmd_verify(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(f);
  analysis::VerifyOptions opts;
  try {
    opts.suite = analysis::suite_from_string(cfg.str("verify.suite"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("--suite: ") + e.what());
  }
  opts.epsilons = cfg.real_list("verify.epsilon");
  for (double e : opts.epsilons) {
    if (!(e >= 0.0 && e < 1.0)) throw ConfigError("--epsilon: values must lie in [0, 1)");
  }
  opts.seed = cfg.u64("run.seed");
  opts.jacobian_points = cfg.count("verify.points");
  opts.curvature_samples = cfg.count("verify.samples");
  opts.gradient_probes = cfg.count("verify.probes");
  if (opts.curvature_samples < 2) throw ConfigError("verify.samples must be >= 2");

  const nlohmann::json report = analysis::run_verification(opts);
  const std::string text = report.dump(2) + "\n";
  if (f.out.empty()) {
    out << text;
  } else {
    write_text(f.out, text);
  }
  if (!report.at("ok").get<bool>()) {
    err << "verification failed; see entries with \"ok\": false\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_report(const Flags& f, std::ostream& out, std::ostream&) {
  if (f.inputs.empty()) throw ConfigError("--in is required (one or more eval CSV files)");
  std::vector<EvalRow> rows;
  for (const std::string& path : f.inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("--in: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto part = parse_eval_csv(ss.str(), path);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::string table = summarize_reports(rows);
  if (f.out.empty()) {
    out << table;
  } else {
    write_text(f.out, table);
  }
  return kExitOk;
}

std::string key_listing() {
  std::string s = "Configuration keys (config file 'section.key = value' or flag --section.key):\n";
  for (const KeyInfo& k : schema()) {
    s += "  " + k.key;
    s += std::string(k.key.size() < 22 ? 22 - k.key.size() : 1, ' ');
    s += k.help;
    if (!k.default_value.empty()) s += " [default: " + k.default_value + "]";
    s += "\n";
  }
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sign-perturbation robustness toolkit: train, evaluate, attack, corrupt, verify, report"};
  app.name("rnet");
  app.require_subcommand(1);
  app.footer(key_listing() +
             "\nExit codes: 0 success, 1 usage or configuration error, 2 data or format error, 3 numeric error.");

  struct Command {
    CLI::App* app;
    Flags flags;
    int (*fn)(const Flags&, std::ostream&, std::ostream&);
  };
  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](const std::string& name, const std::string& desc, auto fn) -> Command& {
    auto c = std::make_unique<Command>();
    c->app = app.add_subcommand(name, desc);
    c->fn = fn;
    c->app->add_option("--config", c->flags.config, "config file of 'section.key = value' lines");
    add_shortcut(c->app, c->flags, "seed", "run.seed");
    add_shortcut(c->app, c->flags, "data-dir", "data.dir");
    add_schema_options(c->app, c->flags);
    commands.push_back(std::move(c));
    return *commands.back();
  };

  Command& train = make("train", "train a model; writes a checkpoint and a line-JSON training log", cmd_train);
  add_shortcut(train.app, train.flags, "regime", "train.regime");
  train.app->add_option("--out", train.flags.out, "checkpoint path [default: <run.out_dir>/<run.name>.ckpt]");
  train.app->add_option("--log", train.flags.log, "training log path [default: <run.out_dir>/<run.name>.log.jsonl]");

  Command& eval = make("eval", "evaluate a checkpoint under test conditions; writes an EvalReport CSV", cmd_eval);
  add_shortcut(eval.app, eval.flags, "regime", "train.regime");
  add_shortcut(eval.app, eval.flags, "conditions", "eval.conditions");
  eval.app->add_option("--checkpoint", eval.flags.checkpoint, "model checkpoint")->required();
  eval.app->add_option("--in", eval.flags.inputs, "dataset prefix [default: data.test]")->expected(1);
  eval.app->add_option("--out", eval.flags.out, "CSV output path [default: stdout]");

  Command& attack = make("attack", "write an FGSM adversarial copy of a dataset in IDX format", cmd_attack);
  add_shortcut(attack.app, attack.flags, "epsilon", "attack.epsilon");
  attack.app->add_option("--checkpoint", attack.flags.checkpoint, "model checkpoint")->required();
  attack.app->add_option("--in", attack.flags.inputs, "dataset prefix [default: data.test]")->expected(1);
  attack.app->add_option("--out", attack.flags.out, "output dataset prefix")->required();

  Command& corrupt = make("corrupt", "write a corrupted copy of a dataset in IDX format", cmd_corrupt);
  add_shortcut(corrupt.app, corrupt.flags, "kind", "corrupt.kind");
  add_shortcut(corrupt.app, corrupt.flags, "param", "corrupt.param");
  corrupt.app->add_option("--in", corrupt.flags.inputs, "input dataset prefix")->required()->expected(1);
  corrupt.app->add_option("--out", corrupt.flags.out, "output dataset prefix")->required();

  Command& verify = make("verify", "run the numerical verification suites; writes a JSON report", cmd_verify);
  add_shortcut(verify.app, verify.flags, "suite", "verify.suite");
  add_shortcut(verify.app, verify.flags, "epsilon", "verify.epsilon");
  verify.app->add_option("--out", verify.flags.out, "JSON output path [default: stdout]");

  Command& report = make("report", "aggregate EvalReport CSVs into a mean±std table over seeds", cmd_report);
  report.app->add_option("--in", report.flags.inputs, "EvalReport CSV files")->required();
  report.app->add_option("--out", report.flags.out, "output path [default: stdout]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (const auto& c : commands) {
    if (!c->app->parsed()) continue;
    try {
      return c->fn(c->flags, out, err);
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const DomainError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const NumericError& e) {
      err << "numeric error: " << e.what() << "\n";
      return kExitNumeric;
    } catch (const Error& e) {
      err << "data error: " << e.what() << "\n";
      return kExitData;
    } catch (const fs::filesystem_error& e) {
      err << "file error: " << e.what() << "\n";
      return kExitData;
    }
  }
  return kExitUsage;
}

}  // namespace rnet::cli
