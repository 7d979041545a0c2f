#pragma once

// Stochastic sign perturbation g(x) = x + eps * x (.) l(x), where each entry
// of l(x) is +sgn(x) with probability p and -sgn(x) otherwise. The map is
// applied at named sites of a model (the input and hidden activations).

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rnet/graph.hpp"
#include "rnet/random.hpp"
#include "rnet/tensor.hpp"

namespace rnet {

enum class Mode { Train, Eval };

struct PerturbConfig {
  double epsilon = 0.1;
  /// Probability that l(x) = +sgn(x).
  double prob = 0.5;
  std::vector<std::string> placement = {"input"};
  bool active_in_training = true;
  bool active_in_eval = false;

  /// Throws ConfigError unless 0 <= epsilon < 1 and 0 <= prob <= 1.
  void validate() const;
  bool active(Mode mode) const { return mode == Mode::Train ? active_in_training : active_in_eval; }
  bool placed_at(std::string_view site) const;
};

/// Entries in {-1, 0, +1}; zero exactly where the perturbed tensor is zero.
struct SignMask {
  Tensor values;

  /// sgn(x) elementwise with sgn(0) = 0.
  static SignMask sign_of(const Tensor& x);
  /// -sgn(x) elementwise.
  static SignMask negated_sign_of(const Tensor& x);
};

/// Sign site identifiers accepted anywhere: "input", "post-conv<k>", "post-fc<k>".
bool is_known_site(std::string_view site);

SignMask sample_sign_mask(const Tensor& x, double prob, Rng& rng);

/// x + eps * x * mask. The traced form's local Jacobian is diag(1 + eps * mask)
/// with the mask held constant.
Tensor apply_perturbation(const Tensor& x, const SignMask& mask, double epsilon);
Var apply_perturbation(Var x, const SignMask& mask, double epsilon);

/// Draws a fresh mask and applies it when the config is active for `mode` and
/// places a perturbation at `site`; otherwise returns x unchanged.
Tensor perturb_forward(const Tensor& x, const PerturbConfig& cfg, std::string_view site, Mode mode, Rng& rng);

/// Per-forward-pass perturbation state threaded through a model.
///
/// Each call to `mask` draws a fresh mask for the site and remembers it. After
/// `freeze()` the remembered masks are replayed instead, which is what
/// finite-difference checks need to differentiate a fixed realization of g.
class Perturber {
 public:
  Perturber(PerturbConfig cfg, Mode mode, Rng rng, std::vector<std::string> valid_sites);

  bool applies(std::string_view site) const;
  const SignMask& mask(std::string_view site, const Tensor& x);
  double epsilon() const { return cfg_.epsilon; }
  const PerturbConfig& config() const { return cfg_; }

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  /// Replace a remembered mask (used to flip a frozen realization).
  void set_mask(const std::string& site, SignMask mask) { masks_[site] = std::move(mask); }
  const std::map<std::string, SignMask, std::less<>>& masks() const { return masks_; }

 private:
  PerturbConfig cfg_;
  Mode mode_;
  Rng rng_;
  bool frozen_ = false;
  std::map<std::string, SignMask, std::less<>> masks_;
};

inline const Tensor& value_of(const Tensor& x) { return x; }
inline const Tensor& value_of(Var x) { return x.value(); }

/// Applies the perturbation at `site` if the perturber is present and active there.
template <typename Handle>
Handle perturb_site(const Handle& x, std::string_view site, Perturber* perturber) {
  if (!perturber || !perturber->applies(site)) return x;
  const SignMask& m = perturber->mask(site, value_of(x));
  return apply_perturbation(x, m, perturber->epsilon());
}

}  // namespace rnet
