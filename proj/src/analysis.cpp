#include "rnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "rnet/error.hpp"
#include "rnet/kernels.hpp"
#include "rnet/ops.hpp"

namespace rnet::analysis {
namespace {

double sgn(double x) { return (x > 0.0) - (x < 0.0); }

void check_epsilon(double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw DomainError("epsilon must lie in [0, 1), got " + std::to_string(epsilon));
  }
}

void check_mask(int mask_value) {
  if (mask_value != 1 && mask_value != -1) {
    throw ConfigError("mask value must be +1 or -1, got " + std::to_string(mask_value));
  }
}

// Traced g(x) for a scalar leaf: x * (1 + eps*m*sgn(x)) with the factor constant.
Var perturb_traced(Var x, double epsilon, int mask_value) {
  return scale(x, 1.0 + epsilon * mask_value * sgn(x.value().item()));
}

std::vector<double> sign_changes(const std::vector<double>& grid, const std::vector<double>& values) {
  std::vector<double> out;
  double prev_sign = 0.0;
  double prev_x = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s = sgn(values[i]);
    if (s == 0.0) continue;
    if (prev_sign != 0.0 && s != prev_sign) out.push_back(0.5 * (prev_x + grid[i]));
    prev_sign = s;
    prev_x = grid[i];
  }
  return out;
}

// Everything in the forward pass that decides which branch of a piecewise
// linear op is taken: relu input signs and pooling winners.
std::vector<std::size_t> activation_pattern(const ModelParams& params, const ModelSpec& spec, const Tensor& x,
                                            Perturber& perturber) {
  Graph g;
  ParamVars vars = bind_params(g, params, false);
  forward(vars, spec, g.constant(x), &perturber);
  std::vector<std::size_t> pattern;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const Var v{&g, id};
    const std::string& op = g.op(v);
    if (op == "relu") {
      const Tensor& in = g.value(Var{&g, g.inputs(v)[0]});
      for (double e : in.values()) pattern.push_back(e > 0.0 ? 1 : 0);
    } else if (op == "max_pool2") {
      std::vector<std::size_t> argmax;
      kernels::max_pool2(g.value(Var{&g, g.inputs(v)[0]}), kernels::PoolParams{spec.pool_pad_odd}, &argmax);
      pattern.insert(pattern.end(), argmax.begin(), argmax.end());
    }
  }
  return pattern;
}

double eager_loss(const ModelParams& params, const ModelSpec& spec, const Tensor& x, std::span<const int> labels,
                  Perturber& perturber) {
  const double loss = kernels::softmax_cross_entropy(forward(params, spec, x, &perturber), labels);
  if (!std::isfinite(loss)) throw NumericError("gradient audit: non-finite loss");
  return loss;
}

}  // namespace

std::vector<ScalarFunction> function_zoo() {
  std::vector<ScalarFunction> zoo;
  zoo.push_back({"square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; },
                 [](double) { return 2.0; }, [](Var x) { return x * x; }, {-2.0, 2.0}, std::nullopt});
  zoo.push_back({"cubic", [](double x) { return x * x * x - x; }, [](double x) { return 3.0 * x * x - 1.0; },
                 [](double x) { return 6.0 * x; }, [](Var x) { return add(x * x * x, scale(x, -1.0)); },
                 {-2.0, 2.0}, 1.0 / std::sqrt(3.0)});
  zoo.push_back({"sin", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); },
                 [](double x) { return -std::sin(x); }, [](Var x) { return rnet::sin(x); }, {-4.0, 4.0},
                 std::numbers::pi / 2.0});
  zoo.push_back({"quartic", [](double x) { return x * x * x * x - 2.0 * x * x; },
                 [](double x) { return 4.0 * x * x * x - 4.0 * x; }, [](double x) { return 12.0 * x * x - 4.0; },
                 [](Var x) {
                   Var sq = x * x;
                   return add(sq * sq, scale(sq, -2.0));
                 },
                 {-2.0, 2.0}, 1.0});
  zoo.push_back({"tanh_sq",
                 [](double x) {
                   const double t = std::tanh(x - 1.0);
                   return t * t;
                 },
                 [](double x) {
                   const double t = std::tanh(x - 1.0);
                   return 2.0 * t * (1.0 - t * t);
                 },
                 [](double x) {
                   const double t = std::tanh(x - 1.0);
                   const double s2 = 1.0 - t * t;
                   return 2.0 * s2 * s2 - 4.0 * t * t * s2;
                 },
                 [](Var x) {
                   Var t = rnet::tanh(add_scalar(x, -1.0));
                   return t * t;
                 },
                 {-2.0, 2.0}, 1.0});
  return zoo;
}

double fd_step(double x) { return 1e-5 * std::max(1.0, std::abs(x)); }

double finite_diff_derivative(const std::function<double(double)>& fn, double x, double h) {
  if (!(h > 0.0)) throw DomainError("finite difference step must be positive");
  const double a = fn(x + h);
  const double b = fn(x - h);
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw NumericError("finite difference: non-finite evaluation near x = " + std::to_string(x));
  }
  return (a - b) / (2.0 * h);
}

double finite_diff_second_derivative(const std::function<double(double)>& fn, double x, double h) {
  if (!(h > 0.0)) throw DomainError("finite difference step must be positive");
  const double a = fn(x + h);
  const double c = fn(x);
  const double b = fn(x - h);
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c)) {
    throw NumericError("finite difference: non-finite evaluation near x = " + std::to_string(x));
  }
  return (a - 2.0 * c + b) / (h * h);
}

double perturb_scalar(double x, double epsilon, int mask_value) {
  return x + epsilon * x * (mask_value * sgn(x));
}

FactorizationCheck check_jacobian_factorization(const ScalarFunction& fn, double x, double epsilon, int mask_value) {
  check_epsilon(epsilon);
  check_mask(mask_value);
  const double h = fd_step(x);
  if (!(std::abs(x) > h)) {
    throw DomainError("jacobian factorization undefined at the sign discontinuity x = " + std::to_string(x));
  }

  FactorizationCheck r;
  auto composed = [&](double t) { return fn.value(perturb_scalar(t, epsilon, mask_value)); };
  r.composed_fd = finite_diff_derivative(composed, x, h);
  const double gx = perturb_scalar(x, epsilon, mask_value);
  r.factored = fn.derivative(gx) * (1.0 + epsilon * mask_value * sgn(x));
  r.residual = std::abs(r.composed_fd - r.factored) / std::max(1.0, std::abs(r.factored));

  Graph g;
  Var leaf = g.leaf(Tensor::scalar(x));
  g.backward(fn.traced(perturb_traced(leaf, epsilon, mask_value)));
  r.composed_autodiff = g.grad(leaf).item();
  r.autodiff_error = std::abs(r.composed_autodiff - r.composed_fd) / std::max(1.0, std::abs(r.composed_fd));

  r.first_order_gap = std::abs(fn.derivative(x) - fn.derivative(gx));
  return r;
}

ZeroSetComparison check_zero_set(const ScalarFunction& fn, std::pair<double, double> interval, double epsilon,
                                 int mask_value, std::size_t points) {
  check_epsilon(epsilon);
  check_mask(mask_value);
  const auto [lo, hi] = interval;
  if (!(hi > lo) || points < 2) throw ConfigError("zero-set scan needs hi > lo and at least two points");

  ZeroSetComparison out;
  out.grid_step = (hi - lo) / static_cast<double>(points);
  std::vector<double> grid(points), composed(points), reference(points);
  auto composed_fn = [&](double t) { return fn.value(perturb_scalar(t, epsilon, mask_value)); };
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + (static_cast<double>(i) + 0.5) * out.grid_step;
    grid[i] = x;
    composed[i] = finite_diff_derivative(composed_fn, x, fd_step(x));
    reference[i] = fn.derivative(perturb_scalar(x, epsilon, mask_value));
  }
  out.composed_zeros = sign_changes(grid, composed);
  out.reference_zeros = sign_changes(grid, reference);

  out.agree = out.composed_zeros.size() == out.reference_zeros.size();
  for (std::size_t i = 0; out.agree && i < out.composed_zeros.size(); ++i) {
    out.agree = std::abs(out.composed_zeros[i] - out.reference_zeros[i]) <= 2.0 * out.grid_step;
  }
  return out;
}

double expected_curvature_factor(double epsilon, double prob) {
  const double up = 1.0 + epsilon;
  const double down = 1.0 - epsilon;
  return prob * up * up + (1.0 - prob) * down * down;
}

CurvatureEstimate curvature_amplification(const ScalarFunction& fn, double critical_point, double epsilon, double prob,
                                          std::size_t samples, std::uint64_t seed) {
  check_epsilon(epsilon);
  if (critical_point == 0.0) throw DomainError("curvature amplification undefined at x0 = 0");
  if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("prob must lie in [0, 1]");
  if (samples < 2) throw ConfigError("curvature amplification needs at least two samples");

  CurvatureEstimate r;
  r.samples = samples;
  r.seed = seed;
  r.exact = expected_curvature_factor(epsilon, prob);
  r.expected = 1.0 + epsilon * epsilon;

  // l = +-sgn(x0), so the factor (1 + eps*l*sgn(x0))^2 only depends on the draw.
  Rng rng(seed);
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double s = rng.bernoulli(prob) ? 1.0 : -1.0;
    const double f = (1.0 + epsilon * s) * (1.0 + epsilon * s);
    const double delta = f - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (f - mean);
  }
  r.estimate = mean;
  r.std_error = std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));

  // FD cross-check: at the preimage x of the critical point under g the
  // composed second derivative is fn''(x0) * (1 + eps*m)^2.
  const double curvature = fn.second_derivative(critical_point);
  auto ratio = [&](int m) {
    const double factor = 1.0 + epsilon * m * sgn(critical_point);
    const double x = critical_point / factor;
    auto composed = [&](double t) { return fn.value(perturb_scalar(t, epsilon, m)); };
    const double h = 1e-4 * std::max(1.0, std::abs(x));
    return finite_diff_second_derivative(composed, x, h) / curvature;
  };
  if (curvature != 0.0) {
    r.fd_ratio_plus = ratio(1);
    r.fd_ratio_minus = ratio(-1);
    const double up = 1.0 + epsilon * sgn(critical_point);
    const double down = 1.0 - epsilon * sgn(critical_point);
    r.fd_ratio_error = std::max(std::abs(r.fd_ratio_plus - up * up), std::abs(r.fd_ratio_minus - down * down));
  }
  return r;
}

GradientAudit gradient_audit(const ModelSpec& spec, const ModelParams& params, const PerturbConfig& perturb,
                             std::size_t probes, std::uint64_t seed, std::size_t batch) {
  spec.validate();
  check_params(params, spec);
  perturb.validate();
  if (batch == 0) throw ConfigError("gradient audit needs a non-empty batch");

  Rng data_rng = Rng::derive(seed, {0xa0d1});
  Shape xshape{batch};
  if (spec.architecture == Architecture::Mlp) {
    xshape.push_back(spec.input_features());
  } else {
    xshape.insert(xshape.end(), {spec.in_channels, spec.in_height, spec.in_width});
  }
  Tensor x(xshape);
  for (double& v : x.data()) v = data_rng.uniform();
  std::vector<int> labels(batch);
  for (int& l : labels) l = static_cast<int>(data_rng.uniform_index(spec.num_classes()));

  // One realization of every mask, then frozen for all later passes.
  Perturber perturber = make_perturber(spec, perturb, Mode::Train, Rng::derive(seed, {0xa0d2}));
  Graph g;
  ParamVars vars = bind_params(g, params, true);
  g.backward(softmax_cross_entropy(forward(vars, spec, g.constant(x), &perturber), labels));
  perturber.freeze();

  const std::vector<std::size_t> base_pattern = activation_pattern(params, spec, x, perturber);
  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [id, t] : params) {
    for (std::size_t i = 0; i < t.size(); ++i) coords.emplace_back(id, i);
  }

  GradientAudit audit;
  Rng probe_rng = Rng::derive(seed, {0xa0d3});
  ModelParams work = params;
  // A coordinate whose FD stencil crosses a relu or pooling kink has no
  // two-sided derivative to compare against; such draws are replaced.
  std::size_t attempts = 0;
  const std::size_t max_attempts = 20 * probes + 100;
  while (audit.probes.size() < probes) {
    if (++attempts > max_attempts) throw NumericError("gradient audit: too many probes hit non-smooth points");
    const auto& [id, index] = coords[probe_rng.uniform_index(coords.size())];
    double& theta = work.at(id)[index];
    const double original = theta;
    const double h = fd_step(original);

    theta = original + h;
    const double up = eager_loss(work, spec, x, labels, perturber);
    const bool up_smooth = activation_pattern(work, spec, x, perturber) == base_pattern;
    theta = original - h;
    const double down = eager_loss(work, spec, x, labels, perturber);
    const bool down_smooth = activation_pattern(work, spec, x, perturber) == base_pattern;
    theta = original;
    if (!up_smooth || !down_smooth) continue;

    GradientProbe p;
    p.parameter = id;
    p.index = index;
    p.autodiff = g.grad(vars.at(id)).values()[index];
    p.finite_diff = (up - down) / (2.0 * h);
    p.rel_error = std::abs(p.autodiff - p.finite_diff) /
                  std::max({std::abs(p.autodiff), std::abs(p.finite_diff), kGradErrorFloor});
    audit.max_rel_error = std::max(audit.max_rel_error, p.rel_error);
    audit.probes.push_back(std::move(p));
  }
  return audit;
}

std::vector<std::pair<std::string, ModelSpec>> shipped_model_specs() {
  return {{"lenet", ModelSpec::lenet()}, {"mlp", ModelSpec::mlp({784, 128, 10})}};
}

Suite suite_from_string(const std::string& name) {
  if (name == "jacobian") return Suite::Jacobian;
  if (name == "hessian") return Suite::Hessian;
  if (name == "gradients") return Suite::Gradients;
  if (name == "all") return Suite::All;
  throw ConfigError("unknown verify suite '" + name + "' (expected jacobian, hessian, gradients or all)");
}

nlohmann::json run_verification(const VerifyOptions& options) {
  using nlohmann::json;
  for (double e : options.epsilons) check_epsilon(e);
  const bool all = options.suite == Suite::All;
  json report = json::object();
  report["seed"] = options.seed;
  report["epsilons"] = options.epsilons;
  bool ok = true;

  if (all || options.suite == Suite::Jacobian) {
    json rows = json::array();
    for (const ScalarFunction& fn : function_zoo()) {
      for (double eps : options.epsilons) {
        for (int mask : {1, -1}) {
          Rng rng = Rng::derive(options.seed, {0x1ac0, static_cast<std::uint64_t>(mask + 1)});
          FactorizationCheck worst;
          double max_residual = 0.0, max_autodiff = 0.0, max_gap = 0.0;
          for (std::size_t i = 0; i < options.jacobian_points; ++i) {
            double x = 0.0;
            while (std::abs(x) <= fd_step(x)) x = rng.uniform(fn.interval.first, fn.interval.second);
            const FactorizationCheck c = check_jacobian_factorization(fn, x, eps, mask);
            max_residual = std::max(max_residual, c.residual);
            max_autodiff = std::max(max_autodiff, c.autodiff_error);
            max_gap = std::max(max_gap, c.first_order_gap);
          }
          const ZeroSetComparison z = check_zero_set(fn, fn.interval, eps, mask);
          const bool row_ok = max_residual < 1e-6 && max_autodiff < 1e-6 && z.agree;
          ok = ok && row_ok;
          rows.push_back({{"function", fn.name},
                          {"epsilon", eps},
                          {"mask", mask},
                          {"points", options.jacobian_points},
                          {"factorizationResidual", max_residual},
                          {"composedJacobianError", max_autodiff},
                          {"firstOrderGap", max_gap},
                          {"zeroSetAgreement", z.agree},
                          {"composedZeros", z.composed_zeros},
                          {"referenceZeros", z.reference_zeros},
                          {"ok", row_ok}});
        }
      }
    }
    report["jacobian"] = std::move(rows);
  }

  if (all || options.suite == Suite::Hessian) {
    json rows = json::array();
    for (const ScalarFunction& fn : function_zoo()) {
      if (!fn.critical_point) continue;
      for (double eps : options.epsilons) {
        const std::uint64_t seed = Rng::derive(options.seed, {0x4e55}).next_u64();
        const CurvatureEstimate c =
            curvature_amplification(fn, *fn.critical_point, eps, 0.5, options.curvature_samples, seed);
        const bool exact_ok = std::abs(c.exact - c.expected) <= 4.0 * 2.220446049250313e-16 * c.expected;
        const bool mc_ok = std::abs(c.estimate - c.expected) <= 4.0 * c.std_error;
        const bool row_ok = exact_ok && mc_ok && c.fd_ratio_error < 1e-4;
        ok = ok && row_ok;
        rows.push_back({{"function", fn.name},
                        {"criticalPoint", *fn.critical_point},
                        {"epsilon", eps},
                        {"prob", 0.5},
                        {"curvatureRatioEstimate", c.estimate},
                        {"standardError", c.std_error},
                        {"exactEnumeration", c.exact},
                        {"expectedRatio", c.expected},
                        {"samples", c.samples},
                        {"sampleSeed", c.seed},
                        {"fdRatioPlus", c.fd_ratio_plus},
                        {"fdRatioMinus", c.fd_ratio_minus},
                        {"ok", row_ok}});
      }
    }
    report["hessian"] = std::move(rows);
  }

  if (all || options.suite == Suite::Gradients) {
    json rows = json::array();
    for (const auto& [name, spec] : shipped_model_specs()) {
      Rng init = Rng::derive(options.seed, {0x9a2d});
      const ModelParams params = build_model(spec, init);
      for (double eps : options.epsilons) {
        PerturbConfig cfg;
        cfg.epsilon = eps;
        cfg.placement = spec.sites();
        const GradientAudit a = gradient_audit(spec, params, cfg, options.gradient_probes, options.seed);
        const bool row_ok = a.max_rel_error < 1e-5;
        ok = ok && row_ok;
        rows.push_back({{"model", name},
                        {"epsilon", eps},
                        {"probes", a.probes.size()},
                        {"maxRelativeError", a.max_rel_error},
                        {"ok", row_ok}});
      }
    }
    report["gradients"] = std::move(rows);
  }

  report["ok"] = ok;
  return report;
}

}  // namespace rnet::analysis
