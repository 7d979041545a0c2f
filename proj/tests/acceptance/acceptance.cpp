// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Usage: acceptance <mnist-dir> <rnet-binary>

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "../oracles.hpp"
#include "rnet/analysis.hpp"
#include "rnet/ops.hpp"
#include "rnet/perturbation.hpp"
#include "rnet/training.hpp"

using namespace rnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;
int skipped = 0;

void report(const std::string& name, const Outcome& o, double seconds) {
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  (" << std::fixed << std::setprecision(1) << seconds
            << " s)  " << o.detail << std::endl;
}

template <class F>
void criterion(const std::string& name, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

// ---------------------------------------------------------------- math checks

Outcome gradient_correctness() {
  double worst = 0.0;
  std::string detail;
  for (const auto& [label, spec] : analysis::shipped_model_specs()) {
    Rng init(17);
    const ModelParams params = build_model(spec, init);
    for (double eps : {0.0, 0.2}) {
      PerturbConfig cfg;
      cfg.epsilon = eps;
      cfg.placement = spec.sites();
      const auto audit = analysis::gradient_audit(spec, params, cfg, 50, 23);
      if (audit.probes.size() != 50) return {false, "audit returned " + std::to_string(audit.probes.size()) + " probes"};
      worst = std::max(worst, audit.max_rel_error);
      detail += label + "@" + fmt(eps) + "=" + fmt(audit.max_rel_error) + " ";
    }
  }
  return {worst < 1e-5, detail + "(max " + fmt(worst) + " < 1e-5)"};
}

Outcome perturbation_algebra() {
  Rng rng(101);
  const Tensor x = oracle::random_tensor({1000}, rng, -3.0, 3.0);
  if (!(apply_perturbation(x, sample_sign_mask(x, 0.5, rng), 0.0) == x)) return {false, "eps=0 is not the identity"};

  for (double eps : {0.1, 0.5, 0.9}) {
    for (double p : {0.0, 0.5, 1.0}) {
      const Tensor y = apply_perturbation(x, sample_sign_mask(x, p, rng), eps);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = std::abs(x[i]);
        if (std::signbit(y[i]) != std::signbit(x[i])) return {false, "sign flipped at eps=" + fmt(eps)};
        if (std::abs(y[i]) < (1 - eps) * a - 1e-15 * a || std::abs(y[i]) > (1 + eps) * a + 1e-15 * a) {
          return {false, "magnitude outside [(1-eps)|x|, (1+eps)|x|] at eps=" + fmt(eps)};
        }
      }
    }
  }

  // E[g(x)] = x at p = 0.5: the mean of (g(x) - x) / (eps * x) over draws is the mask mean.
  const Tensor one({1}, {0.7});
  const std::size_t n = 100000;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) sum += (apply_perturbation(one, sample_sign_mask(one, 0.5, rng), 0.3)[0] - 0.7);
  const double mean = sum / double(n);
  const double sigma = 0.3 * 0.7 / std::sqrt(double(n));
  return {std::abs(mean) <= 4 * sigma,
          "identity, sign, envelope ok; unbiasedness |mean shift| " + fmt(std::abs(mean)) + " vs 4 sigma " + fmt(4 * sigma)};
}

Outcome jacobian_factorization() {
  double worst = 0.0;
  int checked = 0;
  for (const auto& f : analysis::function_zoo()) {
    for (double eps : {0.0, 0.1, 0.3, 0.5, 0.9}) {
      for (int mask : {1, -1}) {
        Rng rng(Rng::derive(9, {std::uint64_t(checked)}));
        for (int k = 0; k < 20; ++k) {
          double x = 0.0;
          while (std::abs(x) <= analysis::fd_step(x) * 10) x = rng.uniform(f.interval.first, f.interval.second);
          worst = std::max(worst, analysis::check_jacobian_factorization(f, x, eps, mask).residual);
        }
        if (!analysis::check_zero_set(f, f.interval, eps, mask).agree) {
          return {false, "zero sets disagree for " + f.name + " eps=" + fmt(eps) + " mask=" + std::to_string(mask)};
        }
        ++checked;
      }
    }
  }
  return {worst < 1e-6, std::to_string(checked) + " (function, eps, mask) cases; max residual " + fmt(worst) +
                            " < 1e-6; zero sets agree"};
}

Outcome curvature() {
  std::string detail;
  bool ok = true;
  double worst_exact = 0.0, worst_sigmas = 0.0;
  for (const auto& f : analysis::function_zoo()) {
    if (!f.critical_point) continue;
    for (double eps : {0.0, 0.1, 0.5}) {
      const auto c = analysis::curvature_amplification(f, *f.critical_point, eps, 0.5, 100000, 77);
      const double target = 1 + eps * eps;
      const double gap = std::abs(c.exact - target);
      worst_exact = std::max(worst_exact, gap / target);
      ok = ok && gap <= 4 * std::numeric_limits<double>::epsilon() * target;
      if (c.std_error > 0) {
        worst_sigmas = std::max(worst_sigmas, std::abs(c.estimate - target) / c.std_error);
        ok = ok && std::abs(c.estimate - target) <= 4 * c.std_error;
      } else {
        ok = ok && c.estimate == target;
      }
      if (f.name == "cubic") detail += "eps=" + fmt(eps) + ": exact " + fmt(c.exact, 17) + ", MC " + fmt(c.estimate, 6) + "; ";
    }
  }
  return {ok, detail + "max relative exact error " + fmt(worst_exact) + ", max MC deviation " + fmt(worst_sigmas) +
                  " sigma (<= 4)"};
}

Outcome oracle_equivalence() {
  Rng rng(55);
  double mm = 0.0, cv = 0.0, ce = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t m = 1 + rng.uniform_index(8), k = 1 + rng.uniform_index(8), n = 1 + rng.uniform_index(8);
    const Tensor a = oracle::random_tensor({m, k}, rng), b = oracle::random_tensor({k, n}, rng);
    mm = std::max(mm, oracle::max_abs(matmul(a, b), oracle::matmul(a, b)));

    const std::size_t c = 1 + rng.uniform_index(3), h = 4 + rng.uniform_index(5), w = 4 + rng.uniform_index(5);
    const std::size_t f = 1 + rng.uniform_index(4), kk = 1 + rng.uniform_index(3);
    const std::size_t stride = 1 + rng.uniform_index(2), pad = rng.uniform_index(2);
    const Tensor x = oracle::random_tensor({2, c, h, w}, rng);
    const Tensor wt = oracle::random_tensor({f, c, kk, kk}, rng), bias = oracle::random_tensor({f}, rng);
    cv = std::max(cv, oracle::max_abs(conv2d(x, wt, bias, Conv2dParams{stride, pad}), oracle::conv2d(x, wt, bias, stride, pad)));

    const std::size_t rows = 1 + rng.uniform_index(8), classes = 2 + rng.uniform_index(9);
    const Tensor z = oracle::random_tensor({rows, classes}, rng, -30.0, 30.0);
    std::vector<int> labels(rows);
    for (int& l : labels) l = int(rng.uniform_index(classes));
    ce = std::max(ce, std::abs(softmax_cross_entropy(z, labels).item() - oracle::cross_entropy(z, labels)));
  }
  return {mm < 1e-12 && cv < 1e-12 && ce < 1e-12,
          "max |diff| matmul " + fmt(mm) + ", conv2d " + fmt(cv) + ", cross-entropy " + fmt(ce)};
}

// ---------------------------------------------------------- desk experiments

const std::vector<std::string> kCorruptionNames{"ran_crop", "ran_hflip", "ran_grayscale", "ran_color", "five_crop"};
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// accuracy[regime][seed][condition]
using Results = std::map<std::string, std::map<std::uint64_t, std::map<std::string, double>>>;

Results run_desk_experiments(const Dataset& train_ds, const Dataset& test_ds) {
  Results out;
  std::vector<std::string> conditions{"clean"};
  conditions.insert(conditions.end(), kCorruptionNames.begin(), kCorruptionNames.end());
  conditions.push_back("fgsm@0.1");
  for (std::uint64_t seed : kSeeds) {
    for (Regime regime : {Regime::Base, Regime::R, Regime::Fgsm}) {
      TrainConfig cfg;
      cfg.regime = regime;
      cfg.seed = seed;
      if (regime == Regime::R) cfg.perturb = PerturbConfig{};
      if (regime == Regime::Fgsm) cfg.attack = AttackSpec{};
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = train(cfg, train_ds, &test_ds);
      auto& row = out[to_string(regime)][seed];
      for (const std::string& c : conditions) {
        row[c] = evaluate(r.params, cfg.model, test_ds, Condition::parse(c), seed).accuracy;
      }
      std::cerr << "  trained " << to_string(regime) << " seed " << seed << " in "
                << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s:";
      for (const std::string& c : conditions) std::cerr << " " << c << "=" << pct(row[c]);
      std::cerr << std::endl;
    }
  }
  return out;
}

double mean_over_seeds(const Results& r, const std::string& regime, const std::string& condition) {
  double s = 0.0;
  for (std::uint64_t seed : kSeeds) s += r.at(regime).at(seed).at(condition);
  return s / double(kSeeds.size());
}

std::string per_seed(const Results& r, const std::string& regime, const std::string& condition) {
  std::string s = regime + "[";
  for (std::uint64_t seed : kSeeds) s += (seed == kSeeds.front() ? "" : " ") + pct(r.at(regime).at(seed).at(condition));
  return s + "]";
}

Outcome base_accuracy(const Results& r) {
  double worst = 1.0;
  for (std::uint64_t seed : kSeeds) worst = std::min(worst, r.at("base").at(seed).at("clean"));
  return {worst >= 0.97, "clean accuracy per seed " + per_seed(r, "base", "clean") + " (min " + pct(worst) + " >= 97.00)"};
}

Outcome clean_ordering(const Results& r) {
  const double b = mean_over_seeds(r, "base", "clean"), rr = mean_over_seeds(r, "r", "clean"),
               f = mean_over_seeds(r, "fgsm", "clean");
  const bool ok = 100 * rr >= 100 * b - 0.2 && f <= b;
  return {ok, "mean clean r " + pct(rr) + ", base " + pct(b) + ", fgsm " + pct(f) + "; per seed " +
                  per_seed(r, "r", "clean") + " " + per_seed(r, "base", "clean") + " " + per_seed(r, "fgsm", "clean")};
}

Outcome corruption_ordering(const Results& r) {
  int strictly = 0;
  bool within = true;
  std::string detail;
  for (const std::string& c : kCorruptionNames) {
    const double b = mean_over_seeds(r, "base", c), rr = mean_over_seeds(r, "r", c);
    within = within && 100 * rr >= 100 * b - 0.1;
    strictly += rr > b;
    detail += c + " r " + pct(rr) + " vs base " + pct(b) + "; ";
  }
  return {within && strictly >= 3, detail + "strictly greater on " + std::to_string(strictly) + "/5"};
}

Outcome attack_sanity(const Results& r) {
  const double clean = mean_over_seeds(r, "base", "clean"), attacked = mean_over_seeds(r, "base", "fgsm@0.1");
  const double hardened = mean_over_seeds(r, "fgsm", "fgsm@0.1");
  const double drop = 100 * (clean - attacked), recovery = 100 * (hardened - attacked);
  return {drop >= 20 && recovery >= 5, "base drop " + fmt(drop, 4) + " points (>= 20), fgsm-regime recovery " +
                                           fmt(recovery, 4) + " points (>= 5); " + per_seed(r, "base", "fgsm@0.1") +
                                           " " + per_seed(r, "fgsm", "fgsm@0.1")};
}

// ------------------------------------------------------------- CLI criteria

struct Cli {
  std::string binary;
  fs::path data_dir;
  fs::path work;

  int run(const std::string& args, const std::string& stdout_file = "") const {
    const std::string out = stdout_file.empty() ? (work / "stdout.txt").string() : stdout_file;
    const std::string cmd = binary + " " + args + " > " + out + " 2>> " + (work / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string train_args(const std::string& name) const {
    return "train --data-dir " + data_dir.string() +
           " --data.train_limit 5000 --data.test_limit 1000 --train.epochs 1 --seed 1 --run.out_dir " + work.string() +
           " --run.name " + name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// Wall-clock time is the only field of the training log allowed to vary.
std::string log_without_wall_time(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wallMs");
    out += j.dump() + "\n";
  }
  return out;
}

Outcome cli_determinism(const Cli& cli) {
  std::vector<std::string> diffs;
  auto check = [&](const std::string& what, const std::string& a, const std::string& b) {
    if (a != b) diffs.push_back(what);
  };
  for (const char* name : {"det-a", "det-b"}) {
    if (cli.run(cli.train_args(name)) != 0) return {false, std::string("train ") + name + " failed"};
  }
  check("train checkpoint", slurp(cli.work / "det-a.ckpt"), slurp(cli.work / "det-b.ckpt"));
  check("train log", log_without_wall_time(cli.work / "det-a.log.jsonl"), log_without_wall_time(cli.work / "det-b.log.jsonl"));

  const std::string eval = "eval --checkpoint " + (cli.work / "det-a.ckpt").string() + " --data-dir " +
                           cli.data_dir.string() +
                           " --data.test_limit 1000 --conditions clean,ran_crop,ran_hflip,ran_grayscale,ran_color,"
                           "five_crop,fgsm@0.1 --seed 1";
  for (const char* out : {"eval-a.csv", "eval-b.csv"}) {
    if (cli.run(eval + " --out " + (cli.work / out).string()) != 0) return {false, "eval failed"};
  }
  check("eval", slurp(cli.work / "eval-a.csv"), slurp(cli.work / "eval-b.csv"));

  const fs::path test_prefix = cli.data_dir / "t10k";
  for (const std::string& kind : kCorruptionNames) {
    for (const char* tag : {"a", "b"}) {
      const fs::path out = cli.work / ("corrupt-" + kind + "-" + tag);
      if (cli.run("corrupt --kind " + kind + " --seed 3 --in " + test_prefix.string() + " --out " + out.string()) != 0) {
        return {false, "corrupt " + kind + " failed"};
      }
    }
    const auto a = idx_paths(cli.work / ("corrupt-" + kind + "-a")), b = idx_paths(cli.work / ("corrupt-" + kind + "-b"));
    check("corrupt " + kind, slurp(a.images) + slurp(a.labels), slurp(b.images) + slurp(b.labels));
  }

  for (const char* tag : {"a", "b"}) {
    const fs::path out = cli.work / (std::string("verify-") + tag + ".json");
    if (cli.run("verify --seed 7 --out " + out.string()) != 0) return {false, "verify failed or reported not ok"};
  }
  check("verify", slurp(cli.work / "verify-a.json"), slurp(cli.work / "verify-b.json"));

  if (!diffs.empty()) {
    std::string d = "outputs differ:";
    for (const auto& s : diffs) d += " " + s + ";";
    return {false, d};
  }
  return {true, "train (1 epoch, 5k), eval (7 conditions), corrupt (5 kinds), verify repeated: byte-identical"};
}

Outcome regime_collapse(const Cli& cli) {
  if (!fs::exists(cli.work / "det-a.ckpt") && cli.run(cli.train_args("det-a")) != 0) return {false, "base train failed"};
  if (cli.run(cli.train_args("collapse-r") +
              " --regime r --perturb.epsilon 0 --perturb.placement input,post-conv1,post-conv2,post-fc1") != 0) {
    return {false, "r train failed"};
  }
  if (cli.run(cli.train_args("collapse-fgsm") + " --regime fgsm --attack.mix_ratio 0") != 0) {
    return {false, "fgsm train failed"};
  }
  const std::string base = slurp(cli.work / "det-a.ckpt");
  const bool r_same = slurp(cli.work / "collapse-r.ckpt") == base;
  const bool f_same = slurp(cli.work / "collapse-fgsm.ckpt") == base;
  return {r_same && f_same, std::string("r(eps=0) ") + (r_same ? "identical" : "DIFFERS") + ", fgsm(mix=0) " +
                                (f_same ? "identical" : "DIFFERS") + " to the base checkpoint"};
}

void skip(const std::string& name, const std::string& why) {
  ++skipped;
  std::cout << "SKIP  " << name << "  " << why << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance <mnist-dir> <rnet-binary>\n";
    return 2;
  }
  const fs::path data_dir = argv[1];
  const Cli cli{argv[2], data_dir, fs::temp_directory_path() / "rnet-acceptance"};
  fs::remove_all(cli.work);
  fs::create_directories(cli.work);

  criterion("gradient correctness", gradient_correctness);
  criterion("perturbation algebra", perturbation_algebra);
  criterion("jacobian factorization and zero sets", jacobian_factorization);
  criterion("curvature amplification", curvature);
  criterion("oracle equivalence", oracle_equivalence);

  const bool have_mnist = fs::exists(idx_paths(data_dir / "train").images) && fs::exists(idx_paths(data_dir / "t10k").images);
  const std::vector<std::string> mnist_criteria{"mnist base accuracy", "clean accuracy ordering",
                                                "corruption robustness ordering", "attack sanity",
                                                "cli determinism", "regime collapse"};
  if (!have_mnist) {
    for (const auto& name : mnist_criteria) skip(name, "MNIST IDX files not found in " + data_dir.string());
  } else {
    const Dataset train_ds = load_idx_prefix(data_dir / "train");
    const Dataset test_ds = load_idx_prefix(data_dir / "t10k");
    std::cerr << "desk experiments: 3 regimes x 3 seeds on " << train_ds.size() << " / " << test_ds.size()
              << " samples" << std::endl;
    std::optional<Results> results;
    try {
      results = run_desk_experiments(train_ds, test_ds);
    } catch (const std::exception& e) {
      for (int i = 0; i < 4; ++i) report(mnist_criteria[i], {false, std::string("training failed: ") + e.what()}, 0);
    }
    if (results) {
      criterion("mnist base accuracy", [&] { return base_accuracy(*results); });
      criterion("clean accuracy ordering", [&] { return clean_ordering(*results); });
      criterion("corruption robustness ordering", [&] { return corruption_ordering(*results); });
      criterion("attack sanity", [&] { return attack_sanity(*results); });
    }
    criterion("cli determinism", [&] { return cli_determinism(cli); });
    criterion("regime collapse", [&] { return regime_collapse(cli); });
  }

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED");
  if (skipped) std::cout << " (" << skipped << " skipped)";
  std::cout << std::endl;
  if (failures) return 1;
  return skipped ? 77 : 0;
}
