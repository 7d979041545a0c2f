#pragma once

#include <span>
#include <string>

#include "rnet/data.hpp"
#include "rnet/models.hpp"
#include "rnet/tensor.hpp"

namespace rnet {

/// One-step L-infinity attack x + eps * sgn(grad_x L), clamped to [lo, hi].
struct AttackSpec {
  std::string kind = "fgsm";
  double epsilon = 0.1;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;

  void validate() const;
};

/// Gradient of the mean cross-entropy with respect to the input, computed
/// with every stochastic perturbation disabled.
Tensor input_gradient(const ModelParams& params, const ModelSpec& spec, const Tensor& x, std::span<const int> labels);

Tensor fgsm_attack(const ModelParams& params, const ModelSpec& spec, const Tensor& x, std::span<const int> labels,
                   const AttackSpec& atk);

/// Replaces the first floor(mix_ratio * B) samples of the batch with FGSM
/// examples against the current parameters; labels are unchanged.
Batch fgsm_training_batch(const ModelParams& params, const ModelSpec& spec, const Batch& batch, const AttackSpec& atk,
                          double mix_ratio);

/// Number of samples fgsm_training_batch replaces.
std::size_t fgsm_mix_count(std::size_t batch_size, double mix_ratio);

/// Adversarial copy of a whole dataset, generated in chunks of `chunk` samples.
Dataset fgsm_dataset(const ModelParams& params, const ModelSpec& spec, const Dataset& ds, const AttackSpec& atk,
                     std::size_t chunk = 256);

}  // namespace rnet
