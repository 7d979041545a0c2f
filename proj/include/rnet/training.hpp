#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnet/attacks.hpp"
#include "rnet/corruptions.hpp"
#include "rnet/data.hpp"
#include "rnet/models.hpp"
#include "rnet/perturbation.hpp"

namespace rnet {

/// base: plain ERM; fgsm: FGSM-mixed batches; r: sign perturbation active in training.
enum class Regime { Base, Fgsm, R };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& name);

struct TrainConfig {
  Regime regime = Regime::Base;
  ModelSpec model = ModelSpec::lenet();
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  /// Present exactly when regime == R.
  std::optional<PerturbConfig> perturb;
  /// Present exactly when regime == Fgsm.
  std::optional<AttackSpec> attack;
  double mix_ratio = 0.5;
  /// Where to save the last finite parameters if training diverges (optional).
  std::filesystem::path divergence_checkpoint;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
  double wall_ms = 0.0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> log;
};

using Velocity = std::map<std::string, Tensor>;

/// v <- momentum * v + g;  theta <- theta - lr * v. Missing velocity entries start at zero.
void sgd_step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr, double momentum,
              Velocity& velocity);

/// Mean loss and parameter gradients of one batch under the configured regime.
struct StepResult {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};
StepResult loss_and_grads(const ModelParams& params, const ModelSpec& spec, const Tensor& images,
                          std::span<const int> labels, Perturber* perturber);

/// Trains from a seeded initialization. Per-epoch accuracy is measured on
/// `eval_ds` when given, otherwise on the training set.
TrainResult train(const TrainConfig& cfg, const Dataset& ds, const Dataset* eval_ds = nullptr,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Test-time condition: clean, one of the five corruptions, or FGSM at a budget.
struct Condition {
  enum class Kind { Clean, Corruption, Fgsm };
  Kind kind = Kind::Clean;
  CorruptionSpec corruption;
  AttackSpec attack;

  static Condition clean() { return {}; }
  static Condition corrupted(CorruptionSpec spec);
  static Condition fgsm(double epsilon);
  /// "clean", "ran_crop", ..., "five_crop", "fgsm@<eps>" (default corruption parameters).
  static Condition parse(const std::string& name);
  std::string label() const;
};

struct EvalRow {
  std::string model;
  std::string regime;
  std::string dataset;
  std::string condition;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::uint64_t seed = 0;
  std::size_t n = 0;
};

struct EvalOptions {
  std::string model_id = "model";
  std::string regime = "base";
  /// Perturbation sites are applied at evaluation only when perturb.active_in_eval is set.
  PerturbConfig perturb{.placement = {}};
  std::size_t chunk = 500;
};

/// Top-1 accuracy and mean loss on `ds` under `condition`. Corruptions use a
/// per-sample stream derived from (seed, sample index).
EvalRow evaluate(const ModelParams& params, const ModelSpec& spec, const Dataset& ds, const Condition& condition,
                 std::uint64_t seed, const EvalOptions& options = {});

/// Index of the largest logit per row; ties go to the lowest index.
std::vector<int> predict(const Tensor& logits);

inline constexpr const char* kEvalCsvHeader = "model,regime,dataset,condition,accuracy,mean_loss,seed,n";

std::string eval_csv(const std::vector<EvalRow>& rows);
std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& source = "csv");

/// Table over seeds: one line per (model, regime, dataset), one column per
/// condition, cells "mean±std" of accuracy in percent with two decimals.
/// std is the sample standard deviation (0 for a single seed).
std::string summarize_reports(const std::vector<EvalRow>& rows);

}  // namespace rnet
