#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rnet/error.hpp"
#include "rnet/models.hpp"

using namespace rnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rnet-unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ModelSpec, SitesAndShapes) {
  const ModelSpec lenet = ModelSpec::lenet();
  EXPECT_EQ(lenet.sites(), (std::vector<std::string>{"input", "post-conv1", "post-conv2", "post-fc1"}));
  const auto shapes = lenet.parameter_shapes();
  EXPECT_EQ(shapes.at("conv1.weight"), (Shape{8, 1, 5, 5}));
  EXPECT_EQ(shapes.at("fc1.weight"), (Shape{256, 120}));
  EXPECT_EQ(shapes.at("fc2.bias"), (Shape{10}));
  EXPECT_EQ(ModelSpec::mlp({16, 8, 8, 4}).sites(), (std::vector<std::string>{"input", "post-fc1", "post-fc2"}));
  EXPECT_THROW(ModelSpec::mlp({16}).validate(), ConfigError);
}

TEST(BuildModel, DeterministicPerSeed) {
  const ModelSpec spec = ModelSpec::mlp({784, 128, 10});
  Rng a(7), b(7), c(0), d(1);
  EXPECT_EQ(build_model(spec, a), build_model(spec, b));
  EXPECT_NE(build_model(spec, c), build_model(spec, d));
}

TEST(BuildModel, HeScaleAndZeroBias) {
  Rng rng(3);
  const ModelParams p = build_model(ModelSpec::mlp({400, 300, 10}), rng);
  const Tensor& w = p.at("fc1.weight");
  double ss = 0.0;
  for (double v : w.values()) ss += v * v;
  const double var = ss / double(w.size());
  EXPECT_NEAR(var, 2.0 / 400.0, 0.05 * 2.0 / 400.0);
  for (double v : p.at("fc1.bias").values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, LeNetOutputShapeAndFinite) {
  Rng rng(1);
  const ModelSpec spec = ModelSpec::lenet();
  const ModelParams p = build_model(spec, rng);
  const Tensor x = oracle::random_tensor({3, 1, 28, 28}, rng, 0.0, 1.0);
  const Tensor y = forward(p, spec, x);
  EXPECT_EQ(y.shape(), (Shape{3, 10}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_THROW(forward(p, spec, Tensor({3, 1, 27, 27})), ShapeError);
}

TEST(Forward, PlacementAndEpsilonNoOps) {
  Rng rng(2);
  const ModelSpec spec = ModelSpec::lenet();
  const ModelParams p = build_model(spec, rng);
  const Tensor x = oracle::random_tensor({2, 1, 28, 28}, rng, 0.0, 1.0);
  const Tensor clean = forward(p, spec, x);
  Rng r1(5), r2(5);
  EXPECT_EQ(forward(p, spec, x, Mode::Train, PerturbConfig{.placement = {}}, r1), clean);
  EXPECT_EQ(forward(p, spec, x, Mode::Train, PerturbConfig{.epsilon = 0.0}, r2), clean);
  EXPECT_EQ(forward(p, spec, x, Mode::Eval, PerturbConfig{}, r2), clean);
}

TEST(Forward, PerturbedForwardReproducible) {
  Rng rng(2);
  const ModelSpec spec = ModelSpec::lenet();
  const ModelParams p = build_model(spec, rng);
  const Tensor x = oracle::random_tensor({2, 1, 28, 28}, rng, 0.0, 1.0);
  Rng a(11), b(11);
  const Tensor ya = forward(p, spec, x, Mode::Train, PerturbConfig{}, a);
  EXPECT_EQ(ya, forward(p, spec, x, Mode::Train, PerturbConfig{}, b));
  EXPECT_NE(ya, forward(p, spec, x));
}

TEST(Forward, EagerAndTracedAgree) {
  Rng rng(4);
  const ModelSpec spec = ModelSpec::lenet();
  const ModelParams p = build_model(spec, rng);
  const Tensor x = oracle::random_tensor({2, 1, 28, 28}, rng, 0.0, 1.0);
  Graph g;
  const Var y = forward(bind_params(g, p), spec, g.constant(x));
  EXPECT_EQ(y.value(), forward(p, spec, x));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (const ModelSpec& spec : {ModelSpec::lenet(), ModelSpec::mlp({20, 7, 3})}) {
    Rng rng(9);
    const ModelParams p = build_model(spec, rng);
    const fs::path path = temp_file("roundtrip.ckpt");
    save_checkpoint(p, spec, path);
    const Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.params, p);
    EXPECT_EQ(ck.spec, spec);
  }
}

TEST(Checkpoint, HeaderLayout) {
  Rng rng(9);
  const ModelSpec spec = ModelSpec::mlp({4, 2});
  const fs::path path = temp_file("layout.ckpt");
  save_checkpoint(build_model(spec, rng), spec, path);
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "RNET");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  Rng rng(9);
  const ModelSpec spec = ModelSpec::mlp({10, 5, 3});
  const fs::path path = temp_file("trunc.ckpt");
  save_checkpoint(build_model(spec, rng), spec, path);
  const auto size = fs::file_size(path);
  for (auto cut : {std::uintmax_t{2}, std::uintmax_t{10}, size / 2, size - 1}) {
    fs::resize_file(path, cut);
    EXPECT_THROW(load_checkpoint(path), FormatError) << "cut at " << cut;
    save_checkpoint(build_model(spec, rng), spec, path);
  }
}

TEST(Checkpoint, BadMagicAndSpecMismatch) {
  const fs::path path = temp_file("bad.ckpt");
  std::ofstream(path, std::ios::binary) << "NOPE0000";
  EXPECT_THROW(load_checkpoint(path), FormatError);
  Rng rng(1);
  save_checkpoint(build_model(ModelSpec::lenet(), rng), ModelSpec::lenet(), path);
  EXPECT_THROW(load_checkpoint(path, ModelSpec::mlp({784, 128, 10})), FormatError);
}
