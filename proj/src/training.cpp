#include "rnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <tuple>

#include "rnet/error.hpp"
#include "rnet/graph.hpp"
#include "rnet/ops.hpp"

namespace rnet {
namespace {

std::string format_double(double v, const char* fmt) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Base: return "base";
    case Regime::Fgsm: return "fgsm";
    case Regime::R: return "r";
  }
  return "?";
}

Regime regime_from_string(const std::string& name) {
  if (name == "base") return Regime::Base;
  if (name == "fgsm") return Regime::Fgsm;
  if (name == "r") return Regime::R;
  throw ConfigError("unknown regime '" + name + "' (expected base, fgsm or r)");
}

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train.lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (perturb.has_value() != (regime == Regime::R)) {
    throw ConfigError("perturbation config must be present exactly for regime r");
  }
  if (attack.has_value() != (regime == Regime::Fgsm)) {
    throw ConfigError("attack config must be present exactly for regime fgsm");
  }
  if (perturb) perturb->validate();
  if (attack) {
    attack->validate();
    fgsm_mix_count(batch_size, mix_ratio);
  }
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch}, {"trainLoss", train_loss}, {"evalAccuracy", eval_accuracy}, {"wallMs", wall_ms}};
}

void sgd_step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr, double momentum,
              Velocity& velocity) {
  for (const auto& [id, g] : grads) {
    auto it = params.find(id);
    if (it == params.end()) throw ConfigError("gradient for unknown parameter '" + id + "'");
    if (g.shape() != it->second.shape()) {
      throw ShapeError("gradient for '" + id + "' has shape " + shape_string(g.shape()) + ", parameter has " +
                       shape_string(it->second.shape()));
    }
    if (!g.all_finite()) throw NumericError("non-finite gradient for parameter '" + id + "'");
  }
  for (const auto& [id, g] : grads) {
    auto [v, inserted] = velocity.try_emplace(id, Tensor(g.shape()));
    v->second.array() = momentum * v->second.array() + g.array();
    params.at(id).array() -= lr * v->second.array();
  }
}

StepResult loss_and_grads(const ModelParams& params, const ModelSpec& spec, const Tensor& images,
                          std::span<const int> labels, Perturber* perturber) {
  Graph g;
  const ParamVars p = bind_params(g, params, true);
  const Var x = g.constant(images);
  const Var loss = softmax_cross_entropy(forward(p, spec, x, perturber), labels);
  StepResult out;
  out.loss = loss.value().item();
  if (!std::isfinite(out.loss)) return out;
  g.backward(loss);
  for (const auto& [id, v] : p) out.grads.emplace(id, g.grad(v));
  return out;
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds, const Dataset* eval_ds,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (ds.size() == 0) throw ConfigError("training set is empty");
  if (cfg.model.num_classes() < ds.num_classes) {
    throw ConfigError("model has " + std::to_string(cfg.model.num_classes()) + " outputs but dataset has " +
                      std::to_string(ds.num_classes) + " classes");
  }
  Rng init_rng = Rng::derive(cfg.seed, {0x1417});
  TrainResult result;
  result.params = build_model(cfg.model, init_rng);
  Velocity velocity;
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    BatchIter it(ds, cfg.batch_size, cfg.seed, epoch);
    Batch batch;
    while (it.next(batch)) {
      if (cfg.regime == Regime::Fgsm) {
        batch = fgsm_training_batch(result.params, cfg.model, batch, *cfg.attack, cfg.mix_ratio);
      }
      std::optional<Perturber> perturber;
      if (cfg.regime == Regime::R) {
        perturber.emplace(make_perturber(cfg.model, *cfg.perturb, Mode::Train, Rng::derive(cfg.seed, {0x9e47, step})));
      }
      const StepResult sr = loss_and_grads(result.params, cfg.model, batch.images, batch.labels,
                                           perturber ? &*perturber : nullptr);
      if (!std::isfinite(sr.loss)) {
        std::string where;
        if (!cfg.divergence_checkpoint.empty()) {
          save_checkpoint(result.params, cfg.model, cfg.divergence_checkpoint);
          where = "; last good parameters saved to " + cfg.divergence_checkpoint.string();
        }
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           " (loss " + std::to_string(sr.loss) + ")" + where);
      }
      sgd_step(result.params, sr.grads, cfg.learning_rate, cfg.momentum, velocity);
      loss_sum += sr.loss * double(batch.labels.size());
      seen += batch.labels.size();
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(seen);
    EvalOptions opts;
    rec.eval_accuracy = evaluate(result.params, cfg.model, eval_ds ? *eval_ds : ds, Condition::clean(), cfg.seed, opts)
                            .accuracy;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

Condition Condition::corrupted(CorruptionSpec spec) {
  spec.validate();
  Condition c;
  c.kind = Kind::Corruption;
  c.corruption = spec;
  return c;
}

Condition Condition::fgsm(double epsilon) {
  Condition c;
  c.kind = Kind::Fgsm;
  c.attack.epsilon = epsilon;
  c.attack.validate();
  return c;
}

Condition Condition::parse(const std::string& name) {
  if (name == "clean") return clean();
  if (name.rfind("fgsm@", 0) == 0) {
    const std::string eps = name.substr(5);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(eps, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != eps.size()) throw ConfigError("bad FGSM budget in condition '" + name + "'");
    return fgsm(v);
  }
  CorruptionSpec spec;
  spec.kind = corruption_from_string(name);
  return corrupted(spec);
}

std::string Condition::label() const {
  switch (kind) {
    case Kind::Clean: return "clean";
    case Kind::Corruption: return to_string(corruption.kind);
    case Kind::Fgsm: {
      std::ostringstream os;
      os << "fgsm@" << attack.epsilon;
      return os.str();
    }
  }
  return "?";
}

std::vector<int> predict(const Tensor& logits) {
  const auto m = logits.matrix();
  std::vector<int> out(std::size_t(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(r, c) > m(r, best)) best = c;
    }
    out[std::size_t(r)] = int(best);
  }
  return out;
}

EvalRow evaluate(const ModelParams& params, const ModelSpec& spec, const Dataset& ds, const Condition& condition,
                 std::uint64_t seed, const EvalOptions& options) {
  if (ds.size() == 0) throw ConfigError("evaluation set is empty");
  if (condition.kind == Condition::Kind::Corruption) condition.corruption.validate();
  if (condition.kind == Condition::Kind::Fgsm) condition.attack.validate();

  std::optional<Perturber> perturber;
  if (options.perturb.active_in_eval && !options.perturb.placement.empty()) {
    perturber.emplace(make_perturber(spec, options.perturb, Mode::Eval, Rng::derive(seed, {0xe7a1})));
  }

  const Shape sample = ds.sample_shape();
  const std::size_t stride = shape_size(sample);
  std::size_t correct = 0;
  double loss_sum = 0.0;
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    Tensor x = ds.images.slice(start, end);
    const std::span<const int> labels(ds.labels.data() + start, end - start);
    if (condition.kind == Condition::Kind::Corruption) {
      for (std::size_t i = start; i < end; ++i) {
        const auto first = x.data().begin() + std::ptrdiff_t((i - start) * stride);
        Tensor image(sample, std::vector<double>(first, first + std::ptrdiff_t(stride)));
        Rng rng = Rng::derive(seed, {0xc0de, i});
        const Tensor out = apply_corruption(image, condition.corruption, rng);
        std::copy(out.data().begin(), out.data().end(), first);
      }
    } else if (condition.kind == Condition::Kind::Fgsm) {
      x = fgsm_attack(params, spec, x, labels, condition.attack);
    }
    const Tensor logits = forward(params, spec, x, perturber ? &*perturber : nullptr);
    const std::vector<int> pred = predict(logits);
    const std::vector<double> losses = kernels::per_sample_cross_entropy(logits, labels);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      correct += pred[k] == labels[k] ? 1 : 0;
      loss_sum += losses[k];
    }
  }
  if (!std::isfinite(loss_sum)) throw NumericError("evaluation produced a non-finite loss");
  EvalRow row;
  row.model = options.model_id;
  row.regime = options.regime;
  row.dataset = ds.name;
  row.condition = condition.label();
  row.accuracy = double(correct) / double(ds.size());
  row.mean_loss = loss_sum / double(ds.size());
  row.seed = seed;
  row.n = ds.size();
  return row;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = std::string(kEvalCsvHeader) + "\n";
  for (const EvalRow& r : rows) {
    out += r.model + "," + r.regime + "," + r.dataset + "," + r.condition + "," + format_double(r.accuracy, "%.6f") +
           "," + format_double(r.mean_loss, "%.6f") + "," + std::to_string(r.seed) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& source) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kEvalCsvHeader) {
    throw FormatError(source + ": missing or unexpected header (expected '" + std::string(kEvalCsvHeader) + "')");
  }
  std::vector<EvalRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != 8) throw FormatError(where + ": expected 8 fields, got " + std::to_string(cells.size()));
    EvalRow r;
    r.model = cells[0];
    r.regime = cells[1];
    r.dataset = cells[2];
    r.condition = cells[3];
    try {
      r.accuracy = std::stod(cells[4]);
      r.mean_loss = std::stod(cells[5]);
      r.seed = std::stoull(cells[6]);
      r.n = std::stoull(cells[7]);
    } catch (const std::exception&) {
      throw FormatError(where + ": non-numeric accuracy/mean_loss/seed/n field");
    }
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) throw FormatError(where + ": field 'accuracy' outside [0, 1]");
    if (!std::isfinite(r.mean_loss) || r.mean_loss < 0.0) throw FormatError(where + ": field 'mean_loss' invalid");
    if (r.n == 0) throw FormatError(where + ": field 'n' must be positive");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string summarize_reports(const std::vector<EvalRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> keys;
  std::vector<std::string> conditions;
  std::map<std::pair<Key, std::string>, std::vector<double>> cells;
  for (const EvalRow& r : rows) {
    const Key k{r.model, r.regime, r.dataset};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    if (std::find(conditions.begin(), conditions.end(), r.condition) == conditions.end()) {
      conditions.push_back(r.condition);
    }
    cells[{k, r.condition}].push_back(100.0 * r.accuracy);
  }
  std::string out = "model,regime,dataset,seeds";
  for (const auto& c : conditions) out += "," + c;
  out += "\n";
  for (const Key& k : keys) {
    std::size_t seeds = 0;
    std::string line = std::get<0>(k) + "," + std::get<1>(k) + "," + std::get<2>(k);
    std::string body;
    for (const auto& c : conditions) {
      auto it = cells.find({k, c});
      if (it == cells.end()) {
        body += ",";
        continue;
      }
      const auto& v = it->second;
      seeds = std::max(seeds, v.size());
      double mean = 0.0;
      for (double a : v) mean += a;
      mean /= double(v.size());
      double var = 0.0;
      for (double a : v) var += (a - mean) * (a - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / double(v.size() - 1)) : 0.0;
      body += "," + format_double(mean, "%.2f") + "±" + format_double(sd, "%.2f");
    }
    out += line + "," + std::to_string(seeds) + body + "\n";
  }
  return out;
}

}  // namespace rnet
