#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rnet/corruptions.hpp"
#include "rnet/error.hpp"

using namespace rnet;

namespace {

Tensor ramp(std::size_t c, std::size_t h, std::size_t w) {
  Tensor t({c, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = double(i) / double(t.size() - 1);
  return t;
}

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  return oracle::random_tensor({c, h, w}, rng, 0.0, 1.0);
}

}  // namespace

TEST(RanCrop, FullFrameIsIdentity) {
  Rng rng(1);
  const Tensor x = random_image(3, 9, 7, 4);
  EXPECT_EQ(ran_crop(x, 1.0, rng), x);
}

TEST(RanCrop, ConstantStaysConstant) {
  Rng rng(1);
  for (double frac : {0.3, 0.5, 0.875}) {
    const Tensor y = ran_crop(Tensor::full({1, 10, 10}, 0.37), frac, rng);
    for (double v : y.values()) EXPECT_EQ(v, 0.37);
  }
}

// A bilinear resize of a linear ramp samples the ramp exactly.
TEST(RanCrop, RampMatchesBilinearOracle) {
  const Tensor x = ramp(1, 4, 4);
  Rng a(42), b(42);
  const Window win = random_crop_window(4, 4, 0.5, a);
  ASSERT_EQ(win.height, 2u);
  const Tensor y = ran_crop(x, 0.5, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double sy = double(win.top) + double(i) / 3.0;
      const double sx = double(win.left) + double(j) / 3.0;
      EXPECT_NEAR(y[i * 4 + j], (4.0 * sy + sx) / 15.0, 1e-15);
    }
}

TEST(RanCrop, CeilWindowAndBadFraction) {
  Rng rng(3);
  const Window w = random_crop_window(28, 28, 0.875, rng);
  EXPECT_EQ(w.height, 25u);
  EXPECT_EQ(w.width, 25u);
  EXPECT_THROW(ran_crop(random_image(1, 4, 4, 1), 0.0, rng), ConfigError);
}

TEST(HFlip, HandValuesAndInvolution) {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(hflip(x).values(), (std::vector<double>{2, 1, 4, 3}));
  const Tensor r = random_image(3, 5, 6, 2);
  EXPECT_EQ(hflip(hflip(r)), r);
  Rng rng(1);
  EXPECT_EQ(ran_hflip(r, 0.0, rng), r);
  EXPECT_EQ(ran_hflip(r, 1.0, rng), hflip(r));
}

TEST(Grayscale, ChannelRules) {
  Rng rng(1);
  const Tensor mono = random_image(1, 4, 4, 3);
  EXPECT_EQ(ran_grayscale(mono, 1.0, rng), mono);
  const Tensor rgb = random_image(3, 4, 4, 5);
  const Tensor g = grayscale(rgb);
  for (std::size_t p = 0; p < 16; ++p) {
    EXPECT_EQ(g[p], g[16 + p]);
    EXPECT_EQ(g[p], g[32 + p]);
    EXPECT_NEAR(g[p], 0.299 * rgb[p] + 0.587 * rgb[16 + p] + 0.114 * rgb[32 + p], 1e-15);
  }
  EXPECT_NEAR(oracle::max_abs(grayscale(g), g), 0.0, 1e-15);
  EXPECT_THROW(grayscale(random_image(2, 4, 4, 1)), ConfigError);
}

TEST(RanColor, IdentityClampAndZero) {
  Rng rng(1);
  const Tensor x = random_image(3, 6, 6, 8);
  EXPECT_EQ(ran_color(x, 0.0, rng), x);
  for (int k = 0; k < 20; ++k) {
    const Tensor y = ran_color(x, 0.9, rng);
    for (double v : y.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  const Tensor zero({3, 6, 6});
  EXPECT_EQ(ran_color(zero, 0.5, rng), zero);
  EXPECT_THROW(ran_color(x, 1.0, rng), ConfigError);
}

TEST(FiveCrop, WindowsMatchIndexOracle) {
  const auto w = five_crop_windows(6, 6, 0.5);
  const std::size_t expect[5][2] = {{0, 0}, {0, 3}, {3, 0}, {3, 3}, {1, 1}};
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(w[k].top, expect[k][0]);
    EXPECT_EQ(w[k].left, expect[k][1]);
    EXPECT_EQ(w[k].height, 3u);
    EXPECT_EQ(w[k].width, 3u);
  }
  Tensor idx({1, 6, 6});
  for (std::size_t i = 0; i < 36; ++i) idx[i] = double(i) / 35.0;
  const auto views = five_crop(idx, 0.5);
  ASSERT_EQ(views.size(), 5u);
  for (int k = 0; k < 5; ++k) {
    // Corner-aligned sampling hits the window corners exactly.
    EXPECT_EQ(views[k][0], idx[expect[k][0] * 6 + expect[k][1]]);
    EXPECT_EQ(views[k][35], idx[(expect[k][0] + 2) * 6 + expect[k][1] + 2]);
  }
}

TEST(FiveCrop, FullFrameCopies) {
  const Tensor x = random_image(2, 5, 5, 9);
  for (const Tensor& v : five_crop(x, 1.0)) EXPECT_EQ(v, x);
}

TEST(Corruptions, ShapeRangeAndDeterminism) {
  Dataset ds;
  ds.images = Tensor({6, 3, 8, 8});
  Rng rng(5);
  for (double& v : ds.images.data()) v = rng.uniform();
  ds.labels = {0, 1, 2, 3, 4, 5};
  for (CorruptionKind k : kAllCorruptions) {
    CorruptionSpec spec;
    spec.kind = k;
    const Dataset a = corrupt_dataset(ds, spec, 11);
    const Dataset b = corrupt_dataset(ds, spec, 11);
    EXPECT_EQ(a.images, b.images) << to_string(k);
    EXPECT_EQ(a.images.shape(), ds.images.shape());
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(corruption_from_string(to_string(k)), k);
  }
  EXPECT_THROW(corruption_from_string("blur"), ConfigError);
}
