#include "rnet/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rnet/error.hpp"

namespace rnet {
namespace {

struct LeNetDims {
  std::size_t pool1_h, pool1_w, pool2_h, pool2_w, flat;
};

std::size_t pooled(std::size_t n, bool pad_odd, const char* what) {
  if (n % 2 != 0 && !pad_odd) {
    throw ConfigError(std::string("lenet: odd spatial size ") + std::to_string(n) + " before " + what +
                      " (set pool_pad_odd to accept)");
  }
  return (n + 1) / 2;
}

LeNetDims lenet_dims(const ModelSpec& s) {
  if (s.kernel == 0 || s.kernel > s.in_height || s.kernel > s.in_width) {
    throw ConfigError("lenet: kernel " + std::to_string(s.kernel) + " does not fit input " +
                      std::to_string(s.in_height) + "x" + std::to_string(s.in_width));
  }
  LeNetDims d{};
  d.pool1_h = pooled(s.in_height - s.kernel + 1, s.pool_pad_odd, "pool1");
  d.pool1_w = pooled(s.in_width - s.kernel + 1, s.pool_pad_odd, "pool1");
  if (s.kernel > d.pool1_h || s.kernel > d.pool1_w) throw ConfigError("lenet: input too small for second convolution");
  d.pool2_h = pooled(d.pool1_h - s.kernel + 1, s.pool_pad_odd, "pool2");
  d.pool2_w = pooled(d.pool1_w - s.kernel + 1, s.pool_pad_odd, "pool2");
  d.flat = s.conv2_channels * d.pool2_h * d.pool2_w;
  return d;
}

std::string fc(std::size_t k, const char* what) { return "fc" + std::to_string(k) + "." + what; }

template <typename Handle, typename Params>
Handle forward_impl(const Params& params, const ModelSpec& spec, Handle x, Perturber* perturber) {
  const Tensor& in = value_of(x);
  const auto& p = [&](const std::string& id) -> const auto& {
    auto it = params.find(id);
    if (it == params.end()) throw ConfigError("missing parameter '" + id + "'");
    return it->second;
  };

  if (spec.architecture == Architecture::Mlp) {
    if (in.rank() < 2 || in.size() / in.dim(0) != spec.input_features()) {
      throw ShapeError("mlp forward: input " + shape_string(in.shape()) + " does not provide " +
                       std::to_string(spec.input_features()) + " features per sample");
    }
    Handle h = perturb_site(flatten(x), "input", perturber);
    const std::size_t layers = spec.layer_sizes.size() - 1;
    for (std::size_t k = 1; k <= layers; ++k) {
      h = affine(h, p(fc(k, "weight")), p(fc(k, "bias")));
      if (k < layers) h = perturb_site(relu(h), "post-fc" + std::to_string(k), perturber);
    }
    return h;
  }

  if (in.rank() != 4 || in.dim(1) != spec.in_channels || in.dim(2) != spec.in_height || in.dim(3) != spec.in_width) {
    throw ShapeError("lenet forward: input " + shape_string(in.shape()) + " does not match [N x " +
                     std::to_string(spec.in_channels) + " x " + std::to_string(spec.in_height) + " x " +
                     std::to_string(spec.in_width) + "]");
  }
  const PoolParams pool{spec.pool_pad_odd};
  Handle h = perturb_site(x, "input", perturber);
  h = max_pool2(relu(conv2d(h, p("conv1.weight"), p("conv1.bias"))), pool);
  h = perturb_site(h, "post-conv1", perturber);
  h = max_pool2(relu(conv2d(h, p("conv2.weight"), p("conv2.bias"))), pool);
  h = perturb_site(h, "post-conv2", perturber);
  h = relu(affine(flatten(h), p("fc1.weight"), p("fc1.bias")));
  h = perturb_site(h, "post-fc1", perturber);
  return affine(h, p("fc2.weight"), p("fc2.bias"));
}

// Little-endian primitives for the checkpoint container.
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n, const std::string& field) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(path_ + ": truncated checkpoint while reading " + field + " at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t u64(const std::string& field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32(const std::string& field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::uint64_t n, const std::string& field) {
    if (n > bytes_.size()) need(bytes_.size() + 1, field);
    need(std::size_t(n), field);
    std::string s = bytes_.substr(pos_, std::size_t(n));
    pos_ += std::size_t(n);
    return s;
  }
  double f64(const std::string& field) {
    const std::uint64_t bits = u64(field);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_string(Architecture a) { return a == Architecture::Mlp ? "mlp" : "lenet"; }

Architecture architecture_from_string(const std::string& name) {
  if (name == "mlp") return Architecture::Mlp;
  if (name == "lenet") return Architecture::LeNet;
  throw ConfigError("unknown architecture '" + name + "' (expected mlp or lenet)");
}

ModelSpec ModelSpec::mlp(std::vector<std::size_t> sizes) {
  ModelSpec s;
  s.architecture = Architecture::Mlp;
  s.layer_sizes = std::move(sizes);
  s.validate();
  return s;
}

ModelSpec ModelSpec::lenet() { return ModelSpec{}; }

void ModelSpec::validate() const {
  if (architecture == Architecture::Mlp) {
    if (layer_sizes.size() < 2) throw ConfigError("mlp: layer_sizes needs at least input and output sizes");
    for (std::size_t n : layer_sizes) {
      if (n == 0) throw ConfigError("mlp: layer sizes must be positive");
    }
    if (layer_sizes.back() < 2) throw ConfigError("mlp: at least two classes required");
    return;
  }
  if (in_channels == 0 || conv1_channels == 0 || conv2_channels == 0 || hidden == 0) {
    throw ConfigError("lenet: channel and hidden sizes must be positive");
  }
  if (classes < 2) throw ConfigError("lenet: at least two classes required");
  lenet_dims(*this);
}

std::vector<std::string> ModelSpec::sites() const {
  std::vector<std::string> s{"input"};
  if (architecture == Architecture::Mlp) {
    for (std::size_t k = 1; k + 1 < layer_sizes.size(); ++k) s.push_back("post-fc" + std::to_string(k));
  } else {
    s.insert(s.end(), {"post-conv1", "post-conv2", "post-fc1"});
  }
  return s;
}

std::size_t ModelSpec::num_classes() const {
  return architecture == Architecture::Mlp ? layer_sizes.back() : classes;
}

std::size_t ModelSpec::input_features() const {
  return architecture == Architecture::Mlp ? layer_sizes.front() : in_channels * in_height * in_width;
}

std::map<std::string, Shape> ModelSpec::parameter_shapes() const {
  validate();
  std::map<std::string, Shape> shapes;
  if (architecture == Architecture::Mlp) {
    for (std::size_t k = 1; k < layer_sizes.size(); ++k) {
      shapes[fc(k, "weight")] = {layer_sizes[k - 1], layer_sizes[k]};
      shapes[fc(k, "bias")] = {layer_sizes[k]};
    }
    return shapes;
  }
  const LeNetDims d = lenet_dims(*this);
  shapes["conv1.weight"] = {conv1_channels, in_channels, kernel, kernel};
  shapes["conv1.bias"] = {conv1_channels};
  shapes["conv2.weight"] = {conv2_channels, conv1_channels, kernel, kernel};
  shapes["conv2.bias"] = {conv2_channels};
  shapes["fc1.weight"] = {d.flat, hidden};
  shapes["fc1.bias"] = {hidden};
  shapes["fc2.weight"] = {hidden, classes};
  shapes["fc2.bias"] = {classes};
  return shapes;
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [id, shape] : parameter_shapes()) n += shape_size(shape);
  return n;
}

nlohmann::json ModelSpec::to_json() const {
  nlohmann::json j;
  j["architecture"] = to_string(architecture);
  if (architecture == Architecture::Mlp) {
    j["layer_sizes"] = layer_sizes;
  } else {
    j["input"] = {in_channels, in_height, in_width};
    j["conv1_channels"] = conv1_channels;
    j["conv2_channels"] = conv2_channels;
    j["kernel"] = kernel;
    j["hidden"] = hidden;
    j["classes"] = classes;
    j["pool_pad_odd"] = pool_pad_odd;
  }
  return j;
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    s.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    if (s.architecture == Architecture::Mlp) {
      s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    } else {
      const auto input = j.at("input").get<std::vector<std::size_t>>();
      if (input.size() != 3) throw FormatError("model spec: 'input' must have 3 entries");
      s.in_channels = input[0];
      s.in_height = input[1];
      s.in_width = input[2];
      s.conv1_channels = j.at("conv1_channels").get<std::size_t>();
      s.conv2_channels = j.at("conv2_channels").get<std::size_t>();
      s.kernel = j.at("kernel").get<std::size_t>();
      s.hidden = j.at("hidden").get<std::size_t>();
      s.classes = j.at("classes").get<std::size_t>();
      s.pool_pad_odd = j.at("pool_pad_odd").get<bool>();
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model spec: ") + e.what());
  }
}

ModelParams build_model(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams params;
  auto init = [&](const std::string& weight, const std::string& bias, const Shape& wshape, const Shape& bshape,
                  std::size_t fan_in, bool relu_follows) {
    Tensor w(wshape);
    const double stddev = std::sqrt((relu_follows ? 2.0 : 1.0) / double(fan_in));
    for (double& v : w.data()) v = rng.normal(0.0, stddev);
    params[weight] = std::move(w);
    params[bias] = Tensor(bshape);
  };
  const auto shapes = spec.parameter_shapes();
  if (spec.architecture == Architecture::Mlp) {
    const std::size_t layers = spec.layer_sizes.size() - 1;
    for (std::size_t k = 1; k <= layers; ++k) {
      init(fc(k, "weight"), fc(k, "bias"), shapes.at(fc(k, "weight")), shapes.at(fc(k, "bias")),
           spec.layer_sizes[k - 1], k < layers);
    }
    return params;
  }
  const std::size_t kk = spec.kernel * spec.kernel;
  init("conv1.weight", "conv1.bias", shapes.at("conv1.weight"), shapes.at("conv1.bias"), spec.in_channels * kk, true);
  init("conv2.weight", "conv2.bias", shapes.at("conv2.weight"), shapes.at("conv2.bias"), spec.conv1_channels * kk,
       true);
  init("fc1.weight", "fc1.bias", shapes.at("fc1.weight"), shapes.at("fc1.bias"), shapes.at("fc1.weight")[0], true);
  init("fc2.weight", "fc2.bias", shapes.at("fc2.weight"), shapes.at("fc2.bias"), spec.hidden, false);
  return params;
}

void check_params(const ModelParams& params, const ModelSpec& spec) {
  const auto shapes = spec.parameter_shapes();
  for (const auto& [id, shape] : shapes) {
    auto it = params.find(id);
    if (it == params.end()) throw ShapeError("parameter '" + id + "' missing for " + to_string(spec.architecture));
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + id + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                       shape_string(shape));
    }
    if (!it->second.all_finite()) throw NumericError("parameter '" + id + "' contains non-finite values");
  }
  for (const auto& [id, t] : params) {
    if (!shapes.count(id)) throw ShapeError("unexpected parameter '" + id + "' for " + to_string(spec.architecture));
  }
}

ParamVars bind_params(Graph& graph, const ModelParams& params, bool requires_grad) {
  ParamVars vars;
  for (const auto& [id, t] : params) vars.emplace(id, graph.leaf(t, requires_grad));
  return vars;
}

Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x, Perturber* perturber) {
  return forward_impl<Tensor>(params, spec, x, perturber);
}

Var forward(const ParamVars& params, const ModelSpec& spec, Var x, Perturber* perturber) {
  return forward_impl<Var>(params, spec, x, perturber);
}

Perturber make_perturber(const ModelSpec& spec, const PerturbConfig& cfg, Mode mode, Rng rng) {
  return Perturber(cfg, mode, std::move(rng), spec.sites());
}

Tensor forward(const ModelParams& params, const ModelSpec& spec, const Tensor& x, Mode mode,
               const PerturbConfig& cfg, Rng& rng) {
  Perturber perturber = make_perturber(spec, cfg, mode, Rng(rng.next_u64()));
  return forward(params, spec, x, &perturber);
}

void save_checkpoint(const ModelParams& params, const ModelSpec& spec, const std::filesystem::path& path) {
  check_params(params, spec);
  std::string out = "RNET";
  put_u32(out, kCheckpointVersion);
  const std::string meta = spec.to_json().dump();
  put_u64(out, meta.size());
  out += meta;
  put_u64(out, params.size());
  for (const auto& [id, t] : params) {
    put_u64(out, id.size());
    out += id;
    put_u64(out, t.rank());
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_u64(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open checkpoint for writing: " + path.string());
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw FormatError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open checkpoint: " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}), path.string());

  if (r.bytes(4, "magic") != "RNET") throw FormatError(r.path() + ": bad magic (expected \"RNET\")");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(r.path() + ": unsupported version " + std::to_string(version));
  }
  const std::string meta = r.bytes(r.u64("metadata length"), "metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(r.path() + ": metadata is not valid JSON: " + e.what());
  }
  Checkpoint ck;
  ck.spec = ModelSpec::from_json(j);
  const auto expected = ck.spec.parameter_shapes();

  const std::uint64_t count = r.u64("parameter count");
  if (count != expected.size()) {
    throw FormatError(r.path() + ": parameter count " + std::to_string(count) + " does not match spec (" +
                      std::to_string(expected.size()) + ")");
  }
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string id = r.bytes(r.u64("parameter id length"), "parameter id");
    auto it = expected.find(id);
    if (it == expected.end()) throw FormatError(r.path() + ": unexpected parameter '" + id + "'");
    const std::uint64_t rank = r.u64(id + " rank");
    if (rank != it->second.size()) throw FormatError(r.path() + ": parameter '" + id + "' has wrong rank");
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(r.u64(id + " dims"));
    if (shape != it->second) {
      throw FormatError(r.path() + ": parameter '" + id + "' has shape " + shape_string(shape) + ", spec expects " +
                        shape_string(it->second));
    }
    const std::size_t n = shape_size(shape);
    r.need(n * 8, id + " values");
    std::vector<double> values(n);
    for (double& v : values) v = r.f64(id + " values");
    ck.params.emplace(id, Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError(r.path() + ": trailing bytes after last parameter");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.spec == expected)) {
    try {
      check_params(ck.params, expected);
    } catch (const Error& e) {
      throw FormatError(path.string() + ": checkpoint (" + to_string(ck.spec.architecture) +
                        ") does not match requested model: " + e.what());
    }
    throw FormatError(path.string() + ": checkpoint spec " + ck.spec.to_json().dump() + " differs from requested " +
                      expected.to_json().dump());
  }
  return ck;
}

}  // namespace rnet
