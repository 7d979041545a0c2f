#include "run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rnet/error.hpp"

namespace rnet::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const char* data_dir_default() {
  const char* env = std::getenv("DATA_DIR");
  return env ? env : "";
}

}  // namespace

const std::vector<KeyInfo>& schema() {
  static const std::vector<KeyInfo> keys = {
      {"run.seed", "1", "global seed for initialization, shuffling, perturbation and corruption streams"},
      {"run.out_dir", ".", "directory for outputs whose path is not given explicitly"},
      {"run.name", "", "run name used for default output file names (default <regime>-seed<seed>)"},
      {"data.dir", data_dir_default(), "dataset root; relative dataset prefixes resolve against it (env DATA_DIR)"},
      {"data.train", "train", "training set IDX prefix (<prefix>-images-idx3-ubyte, <prefix>-labels-idx1-ubyte)"},
      {"data.test", "t10k", "test set IDX prefix"},
      {"data.train_limit", "0", "use only the first N training samples (0 = all)"},
      {"data.test_limit", "0", "use only the first N test samples (0 = all)"},
      {"model.architecture", "lenet", "lenet or mlp"},
      {"model.layer_sizes", "784,128,10", "mlp layer widths, inputs first and classes last"},
      {"model.conv1_channels", "8", "lenet first conv output channels"},
      {"model.conv2_channels", "16", "lenet second conv output channels"},
      {"model.kernel", "5", "lenet conv kernel size"},
      {"model.hidden", "120", "lenet hidden fully connected width"},
      {"train.regime", "base", "base, fgsm or r"},
      {"train.epochs", "3", "training epochs"},
      {"train.batch_size", "64", "minibatch size"},
      {"train.learning_rate", "0.05", "SGD learning rate"},
      {"train.momentum", "0.9", "SGD momentum"},
      {"perturb.epsilon", "0.1", "sign perturbation magnitude, 0 <= eps < 1"},
      {"perturb.prob", "0.5", "probability that l(x) = +sgn(x)"},
      {"perturb.placement", "input", "comma-separated sites: input, post-conv1, post-conv2, post-fc1, ..."},
      {"perturb.eval_active", "false", "keep the perturbation active at evaluation"},
      {"attack.kind", "fgsm", "attack method (fgsm)"},
      {"attack.epsilon", "0.1", "L-infinity attack budget"},
      {"attack.mix_ratio", "0.5", "fraction of each batch replaced by adversarial examples in regime fgsm"},
      {"eval.conditions", "clean", "comma-separated: clean, ran_crop, ran_hflip, ran_grayscale, ran_color, five_crop, fgsm@<eps>"},
      {"eval.model_id", "", "model column of the report (default: the architecture name)"},
      {"corrupt.kind", "ran_crop", "ran_crop, ran_hflip, ran_grayscale, ran_color or five_crop"},
      {"corrupt.param", "", "main parameter of the corruption (crop fraction, flip/gray probability, jitter)"},
      {"verify.suite", "all", "jacobian, hessian, gradients or all"},
      {"verify.epsilon", "0,0.1,0.3,0.5,0.9", "comma-separated perturbation magnitudes"},
      {"verify.points", "100", "random points per function, epsilon and mask in the jacobian suite"},
      {"verify.samples", "100000", "Monte Carlo samples in the hessian suite"},
      {"verify.probes", "50", "probed coordinates per model and epsilon in the gradients suite"},
  };
  return keys;
}

bool is_known_key(const std::string& key) {
  const auto& s = schema();
  return std::any_of(s.begin(), s.end(), [&](const KeyInfo& k) { return k.key == key; });
}

RunConfig::RunConfig() {
  for (const KeyInfo& k : schema()) values_[k.key] = k.default_value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!is_known_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = str(key);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& s = str(key);
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || *end != '\0' || errno == ERANGE) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t RunConfig::count(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool RunConfig::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream is(str(key));
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> RunConfig::real_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : list(key)) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (*end != '\0' || !std::isfinite(v)) throw ConfigError(key + ": bad number '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::size_t> RunConfig::count_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const std::string& item : list(key)) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (item[0] == '-' || *end != '\0') throw ConfigError(key + ": bad integer '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace rnet::cli
