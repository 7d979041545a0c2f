#pragma once

// Numerical checks of the calculus of f(g(x)) with g(x) = x + eps*x*l(x).
//
// For a fixed mask value m in {-1, +1} the realized sign factor is
// l(x) = m*sgn(x), so g(x) = x + eps*m*|x| and, away from x = 0,
//   d/dx f(g(x))     = f'(g(x)) * (1 + eps*m)
//   d2/dx2 f(g(x))   = f''(g(x)) * (1 + eps*m)^2
// since sgn(x)^2 = 1. Averaging the curvature factor over m with
// P(m = +1) = p gives p(1+eps)^2 + (1-p)(1-eps)^2, which is 1 + eps^2 at p = 1/2.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnet/graph.hpp"
#include "rnet/models.hpp"
#include "rnet/perturbation.hpp"
#include "rnet/random.hpp"

namespace rnet::analysis {

/// Scalar test function with analytic derivatives and a traced form for autodiff.
struct ScalarFunction {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  std::function<double(double)> second_derivative;
  std::function<Var(Var)> traced;
  /// Interval scanned by the zero-set check.
  std::pair<double, double> interval{-2.0, 2.0};
  /// A nonzero critical point with nonzero curvature, when one exists.
  std::optional<double> critical_point;
};

/// x^2, x^3 - x, sin x, x^4 - 2x^2, tanh(x - 1)^2.
std::vector<ScalarFunction> function_zoo();

/// Finite-difference step 1e-5 * max(1, |x|).
double fd_step(double x);

/// Central difference (fn(x+h) - fn(x-h)) / (2h). Throws NumericError on a non-finite evaluation.
double finite_diff_derivative(const std::function<double(double)>& fn, double x, double h);

/// Central second difference (fn(x+h) - 2fn(x) + fn(x-h)) / h^2.
double finite_diff_second_derivative(const std::function<double(double)>& fn, double x, double h);

/// g(x) for the realized mask l(x) = mask_value * sgn(x).
double perturb_scalar(double x, double epsilon, int mask_value);

struct FactorizationCheck {
  double composed_fd = 0.0;        // d/dx fn(g(x)) by central differences
  double composed_autodiff = 0.0;  // the same derivative by reverse mode through the graph
  double factored = 0.0;           // fn'(g(x)) * (1 + eps*mask*sgn(x))
  double residual = 0.0;           // |composed_fd - factored| / max(1, |factored|)
  double autodiff_error = 0.0;     // |composed_autodiff - composed_fd| / max(1, |composed_fd|)
  double first_order_gap = 0.0;    // |fn'(x) - fn'(g(x))|, the gap of evaluating f' at x
};

/// Throws DomainError when |x| is within one FD step of the sign discontinuity
/// or epsilon is outside [0, 1), and ConfigError for a mask value other than +-1.
FactorizationCheck check_jacobian_factorization(const ScalarFunction& fn, double x, double epsilon, int mask_value);

struct ZeroSetComparison {
  std::vector<double> composed_zeros;   // sign changes of d/dx fn(g(x)) (finite differences)
  std::vector<double> reference_zeros;  // sign changes of fn'(g(x))
  double grid_step = 0.0;
  bool agree = false;
};

/// Scans a dense grid of `points` cell centres over [lo, hi] and compares the
/// sign-change locations of both derivatives within two grid cells.
ZeroSetComparison check_zero_set(const ScalarFunction& fn, std::pair<double, double> interval, double epsilon,
                                 int mask_value, std::size_t points = 4000);

struct CurvatureEstimate {
  double estimate = 0.0;  // Monte Carlo mean of (1 + eps*s)^2, s = +1 w.p. prob else -1
  double std_error = 0.0;
  double exact = 0.0;     // two-point enumeration
  double expected = 0.0;  // 1 + eps^2
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  /// Second derivative of fn(g(x)) at the preimage of the critical point over
  /// fn'' there, by finite differences, for mask +1 and -1.
  double fd_ratio_plus = 0.0;
  double fd_ratio_minus = 0.0;
  /// Largest deviation of the FD ratios from (1 +- eps)^2.
  double fd_ratio_error = 0.0;
};

/// Throws DomainError when the critical point is 0.
CurvatureEstimate curvature_amplification(const ScalarFunction& fn, double critical_point, double epsilon, double prob,
                                          std::size_t samples, std::uint64_t seed);

/// p(1+eps)^2 + (1-p)(1-eps)^2.
double expected_curvature_factor(double epsilon, double prob);

struct GradientProbe {
  std::string parameter;
  std::size_t index = 0;
  double autodiff = 0.0;
  double finite_diff = 0.0;
  double rel_error = 0.0;
};

struct GradientAudit {
  double max_rel_error = 0.0;
  std::vector<GradientProbe> probes;
};

/// Denominator floor of the relative gradient error |a - f| / max(|a|, |f|, floor).
inline constexpr double kGradErrorFloor = 1e-3;

/// Compares reverse-mode dL/dtheta against central differences on `probes`
/// uniformly chosen coordinates, with the perturbation masks of the forward
/// pass frozen. Inputs are a random batch of `batch` samples in [0, 1].
GradientAudit gradient_audit(const ModelSpec& spec, const ModelParams& params, const PerturbConfig& perturb,
                             std::size_t probes, std::uint64_t seed, std::size_t batch = 2);

/// Shipped model specs audited by the verification suite.
std::vector<std::pair<std::string, ModelSpec>> shipped_model_specs();

enum class Suite { Jacobian, Hessian, Gradients, All };
Suite suite_from_string(const std::string& name);

struct VerifyOptions {
  Suite suite = Suite::All;
  std::vector<double> epsilons{0.0, 0.1, 0.3, 0.5, 0.9};
  std::uint64_t seed = 7;
  std::size_t jacobian_points = 100;
  std::size_t curvature_samples = 100000;
  std::size_t gradient_probes = 50;
};

/// Runs the selected suites; the result is a deterministic JSON document with
/// an "ok" flag per entry and overall.
nlohmann::json run_verification(const VerifyOptions& options);

}  // namespace rnet::analysis
