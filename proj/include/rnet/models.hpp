#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rnet/graph.hpp"
#include "rnet/ops.hpp"
#include "rnet/perturbation.hpp"
#include "rnet/random.hpp"
#include "rnet/tensor.hpp"

namespace rnet {

enum class Architecture { Mlp, LeNet };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& name);

/// Layered classifier description.
///
/// mlp:   affine layers over `layer_sizes` = [inputs, hidden..., classes] with
///        relu between them; sites "input", "post-fc1", ... after each hidden layer.
/// lenet: conv(1->c1,k) relu pool conv(c1->c2,k) relu pool flatten
///        affine(->hidden) relu affine(->classes); sites "input", "post-conv1",
///        "post-conv2" (after each pooled block) and "post-fc1".
struct ModelSpec {
  Architecture architecture = Architecture::LeNet;
  std::vector<std::size_t> layer_sizes;
  std::size_t in_channels = 1;
  std::size_t in_height = 28;
  std::size_t in_width = 28;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 5;
  std::size_t hidden = 120;
  std::size_t classes = 10;
  bool pool_pad_odd = false;

  static ModelSpec mlp(std::vector<std::size_t> sizes);
  static ModelSpec lenet();

  void validate() const;
  std::vector<std::string> sites() const;
  std::size_t num_classes() const;
  /// Number of input features per sample.
  std::size_t input_features() const;
  std::map<std::string, Shape> parameter_shapes() const;
  std::size_t parameter_count() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Parameter id -> tensor, iterated in sorted-id order.
using ModelParams = std::map<std::string, Tensor>;
using ParamVars = std::map<std::string, Var>;

/// He-normal weights (std sqrt(2/fan_in)) for relu-followed layers,
/// LeCun-normal (std sqrt(1/fan_in)) for the output layer, zero biases.
ModelParams build_model(const ModelSpec& spec, Rng& rng);

/// Throws ConfigError/ShapeError unless params match spec exactly and are finite.
void check_params(const ModelParams& params, const ModelSpec& spec);

ParamVars bind_params(Graph& graph, const ModelParams& params, bool requires_grad = true);

/// Eager inference; no graph is allocated.
Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x, Perturber* perturber = nullptr);
/// Traced forward pass.
Var forward(const ParamVars& params, const ModelSpec& spec, Var x, Perturber* perturber = nullptr);
/// Forward pass with a fresh perturbation state built from (cfg, mode, rng).
Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x, Mode mode,
               const PerturbConfig& cfg, Rng& rng);

Perturber make_perturber(const ModelSpec& spec, const PerturbConfig& cfg, Mode mode, Rng rng);

// Checkpoint container: "RNET", u32 version, u64-length-prefixed canonical
// JSON spec, u64 parameter count, then per parameter in sorted-id order:
// u64 id length, id bytes, u64 rank, u64 dims, raw float64 values. All
// integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  ModelSpec spec;
};

void save_checkpoint(const ModelParams& params, const ModelSpec& spec, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and verifies the stored parameters against `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace rnet
