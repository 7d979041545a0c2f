#include "rnet/perturbation.hpp"

#include <algorithm>
#include <cctype>

#include "rnet/error.hpp"

namespace rnet {
namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw ConfigError("perturb.epsilon must lie in [0, 1), got " + std::to_string(epsilon));
  }
}

void check_mask(const Tensor& x, const SignMask& mask) {
  if (mask.values.shape() != x.shape()) {
    throw ShapeError("sign mask shape " + shape_string(mask.values.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
}

bool has_numeric_suffix(std::string_view s, std::string_view prefix) {
  if (s.size() <= prefix.size() || s.substr(0, prefix.size()) != prefix) return false;
  return std::all_of(s.begin() + std::ptrdiff_t(prefix.size()), s.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; });
}

}  // namespace

void PerturbConfig::validate() const {
  check_epsilon(epsilon);
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("perturb.prob must lie in [0, 1], got " + std::to_string(prob));
  for (const auto& site : placement) {
    if (!is_known_site(site)) throw ConfigError("perturb.placement: unknown site id '" + site + "'");
  }
}

bool PerturbConfig::placed_at(std::string_view site) const {
  return std::find(placement.begin(), placement.end(), site) != placement.end();
}

bool is_known_site(std::string_view site) {
  return site == "input" || has_numeric_suffix(site, "post-conv") || has_numeric_suffix(site, "post-fc");
}

SignMask SignMask::sign_of(const Tensor& x) {
  Tensor m(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = sgn(x[i]);
  return {std::move(m)};
}

SignMask SignMask::negated_sign_of(const Tensor& x) {
  Tensor m(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) m[i] = -sgn(x[i]);
  return {std::move(m)};
}

SignMask sample_sign_mask(const Tensor& x, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("sign mask probability must lie in [0, 1]");
  Tensor m(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // One draw per element regardless of its value keeps the stream aligned.
    const bool keep = rng.bernoulli(prob);
    m[i] = keep ? sgn(x[i]) : -sgn(x[i]);
  }
  return {std::move(m)};
}

Tensor apply_perturbation(const Tensor& x, const SignMask& mask, double epsilon) {
  check_epsilon(epsilon);
  check_mask(x, mask);
  if (epsilon == 0.0) return x;
  Tensor y = x;
  y.array() += epsilon * x.array() * mask.values.array();
  return y;
}

Var apply_perturbation(Var x, const SignMask& mask, double epsilon) {
  Tensor y = apply_perturbation(x.value(), mask, epsilon);
  Tensor factor = mask.values;
  factor.array() = 1.0 + epsilon * factor.array();
  return x.graph->record("sign_perturbation", std::move(y), {x},
                         [factor = std::move(factor)](const BackwardContext& c) {
                           Tensor g = c.grad_output;
                           g.array() *= factor.array();
                           return std::vector<Tensor>{std::move(g)};
                         });
}

Tensor perturb_forward(const Tensor& x, const PerturbConfig& cfg, std::string_view site, Mode mode, Rng& rng) {
  if (!is_known_site(site)) throw ConfigError("unknown perturbation site '" + std::string(site) + "'");
  if (!cfg.active(mode) || !cfg.placed_at(site)) return x;
  return apply_perturbation(x, sample_sign_mask(x, cfg.prob, rng), cfg.epsilon);
}

Perturber::Perturber(PerturbConfig cfg, Mode mode, Rng rng, std::vector<std::string> valid_sites)
    : cfg_(std::move(cfg)), mode_(mode), rng_(std::move(rng)) {
  cfg_.validate();
  for (const auto& site : cfg_.placement) {
    if (std::find(valid_sites.begin(), valid_sites.end(), site) == valid_sites.end()) {
      throw ConfigError("perturb.placement: site '" + site + "' does not exist in this model");
    }
  }
}

bool Perturber::applies(std::string_view site) const { return cfg_.active(mode_) && cfg_.placed_at(site); }

const SignMask& Perturber::mask(std::string_view site, const Tensor& x) {
  auto it = masks_.find(site);
  if (frozen_) {
    if (it == masks_.end()) throw ContractError("no frozen mask recorded for site '" + std::string(site) + "'");
    check_mask(x, it->second);
    return it->second;
  }
  SignMask m = sample_sign_mask(x, cfg_.prob, rng_);
  if (it == masks_.end()) return masks_.emplace(std::string(site), std::move(m)).first->second;
  it->second = std::move(m);
  return it->second;
}

}  // namespace rnet
