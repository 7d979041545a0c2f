#include "rnet/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "rnet/error.hpp"
#include "rnet/graph.hpp"
#include "rnet/ops.hpp"

namespace rnet {

void AttackSpec::validate() const {
  if (kind != "fgsm") throw ConfigError("attack.kind: unsupported attack '" + kind + "' (only fgsm)");
  if (!(clamp_lo < clamp_hi)) throw ConfigError("attack clamp range must satisfy lo < hi");
  if (!(epsilon >= 0.0 && epsilon <= clamp_hi - clamp_lo)) {
    throw ConfigError("attack.epsilon must lie in [0, " + std::to_string(clamp_hi - clamp_lo) + "], got " +
                      std::to_string(epsilon));
  }
}

Tensor input_gradient(const ModelParams& params, const ModelSpec& spec, const Tensor& x, std::span<const int> labels) {
  Graph g;
  const ParamVars p = bind_params(g, params, false);
  const Var input = g.leaf(x, true);
  const Var loss = softmax_cross_entropy(forward(p, spec, input, nullptr), labels);
  g.backward(loss);
  const Tensor& grad = g.grad(input);
  if (!grad.all_finite()) throw NumericError("FGSM: non-finite input gradient");
  return grad;
}

Tensor fgsm_attack(const ModelParams& params, const ModelSpec& spec, const Tensor& x, std::span<const int> labels,
                   const AttackSpec& atk) {
  atk.validate();
  for (double v : x.data()) {
    if (!(v >= atk.clamp_lo && v <= atk.clamp_hi)) throw DomainError("FGSM: input outside the clamp range");
  }
  if (atk.epsilon == 0.0) return x;
  const Tensor grad = input_gradient(params, spec, x, labels);
  Tensor adv = x;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    adv[i] = std::clamp(x[i] + atk.epsilon * s, atk.clamp_lo, atk.clamp_hi);
  }
  return adv;
}

std::size_t fgsm_mix_count(std::size_t batch_size, double mix_ratio) {
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("attack.mix_ratio must lie in [0, 1]");
  return std::min(batch_size, static_cast<std::size_t>(std::floor(mix_ratio * double(batch_size))));
}

Batch fgsm_training_batch(const ModelParams& params, const ModelSpec& spec, const Batch& batch, const AttackSpec& atk,
                          double mix_ratio) {
  const std::size_t k = fgsm_mix_count(batch.labels.size(), mix_ratio);
  Batch out = batch;
  if (k == 0) return out;
  const Tensor head = batch.images.slice(0, k);
  const Tensor adv = fgsm_attack(params, spec, head, std::span<const int>(batch.labels.data(), k), atk);
  std::copy(adv.data().begin(), adv.data().end(), out.images.data().begin());
  return out;
}

Dataset fgsm_dataset(const ModelParams& params, const ModelSpec& spec, const Dataset& ds, const AttackSpec& atk,
                     std::size_t chunk) {
  Dataset out = ds;
  auto dst = out.images.data();
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    const Tensor x = ds.images.slice(start, end);
    const Tensor adv =
        fgsm_attack(params, spec, x, std::span<const int>(ds.labels.data() + start, end - start), atk);
    std::copy(adv.data().begin(), adv.data().end(), dst.begin() + std::ptrdiff_t(start * (x.size() / (end - start))));
  }
  out.name = ds.name + "+fgsm";
  return out;
}

}  // namespace rnet
