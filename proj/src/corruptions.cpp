#include "rnet/corruptions.hpp"

#include <algorithm>
#include <cmath>

#include "rnet/error.hpp"

namespace rnet {
namespace {

void require_chw(const Tensor& image, const char* op) {
  if (image.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected C x H x W image, got " + shape_string(image.shape()));
  }
}

std::size_t crop_extent(std::size_t n, double frac) {
  if (!(frac > 0.0 && frac <= 1.0)) {
    throw ConfigError("crop fraction must lie in (0, 1], got " + std::to_string(frac));
  }
  const auto e = static_cast<std::size_t>(std::ceil(frac * double(n)));
  if (e < 1) throw ConfigError("crop window smaller than 1x1");
  return std::min(e, n);
}

// Source coordinate of output index i for corner-aligned resampling.
double source_coord(std::size_t i, std::size_t out_n, std::size_t src_n) {
  if (out_n <= 1 || src_n <= 1) return 0.0;
  return double(i) * (double(src_n - 1) / double(out_n - 1));
}

}  // namespace

std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::RanCrop: return "ran_crop";
    case CorruptionKind::RanHflip: return "ran_hflip";
    case CorruptionKind::RanGrayscale: return "ran_grayscale";
    case CorruptionKind::RanColor: return "ran_color";
    case CorruptionKind::FiveCrop: return "five_crop";
  }
  return "?";
}

CorruptionKind corruption_from_string(const std::string& name) {
  for (CorruptionKind k : kAllCorruptions) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown corruption kind '" + name +
                    "' (expected ran_crop, ran_hflip, ran_grayscale, ran_color or five_crop)");
}

void CorruptionSpec::validate() const {
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ConfigError("crop fraction must lie in (0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  if (!(gray_prob >= 0.0 && gray_prob <= 1.0)) throw ConfigError("grayscale probability must lie in [0, 1]");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("color jitter must lie in [0, 1)");
}

double& CorruptionSpec::primary_param() {
  switch (kind) {
    case CorruptionKind::RanCrop:
    case CorruptionKind::FiveCrop: return crop_fraction;
    case CorruptionKind::RanHflip: return flip_prob;
    case CorruptionKind::RanGrayscale: return gray_prob;
    case CorruptionKind::RanColor: return jitter;
  }
  return crop_fraction;
}

Window random_crop_window(std::size_t height, std::size_t width, double frac, Rng& rng) {
  const std::size_t h = crop_extent(height, frac), w = crop_extent(width, frac);
  const std::size_t top = rng.uniform_index(height - h + 1);
  const std::size_t left = rng.uniform_index(width - w + 1);
  return {top, left, h, w};
}

Tensor crop_and_resize(const Tensor& image, const Window& win) {
  require_chw(image, "crop_and_resize");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (win.height < 1 || win.width < 1 || win.top + win.height > h || win.left + win.width > w) {
    throw ConfigError("crop window outside the image");
  }
  Tensor out(image.shape());
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t plane = ch * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      const double sy = source_coord(i, h, win.height);
      const std::size_t y0 = std::size_t(std::floor(sy));
      const std::size_t y1 = std::min(y0 + 1, win.height - 1);
      const double fy = sy - double(y0);
      for (std::size_t j = 0; j < w; ++j) {
        const double sx = source_coord(j, w, win.width);
        const std::size_t x0 = std::size_t(std::floor(sx));
        const std::size_t x1 = std::min(x0 + 1, win.width - 1);
        const double fx = sx - double(x0);
        auto at = [&](std::size_t y, std::size_t x) { return src[plane + (win.top + y) * w + (win.left + x)]; };
        double v = at(y0, x0);
        if (fx != 0.0 || fy != 0.0) {
          // a + t*(b-a) reproduces constant regions exactly.
          const double top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
          const double bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
          v = top + fy * (bottom - top);
        }
        dst[plane + i * w + j] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor ran_crop(const Tensor& image, double frac, Rng& rng) {
  require_chw(image, "ran_crop");
  return crop_and_resize(image, random_crop_window(image.dim(1), image.dim(2), frac, rng));
}

Tensor hflip(const Tensor& image) {
  require_chw(image, "hflip");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      const std::size_t row = (ch * h + i) * w;
      for (std::size_t j = 0; j < w; ++j) out[row + j] = image[row + (w - 1 - j)];
    }
  }
  return out;
}

Tensor ran_hflip(const Tensor& image, double flip_prob, Rng& rng) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  return rng.bernoulli(flip_prob) ? hflip(image) : image;
}

Tensor grayscale(const Tensor& image) {
  require_chw(image, "grayscale");
  const std::size_t c = image.dim(0);
  if (c == 1) return image;
  if (c != 3) throw ConfigError("grayscale needs 1 or 3 channels, got " + std::to_string(c));
  const std::size_t plane = image.dim(1) * image.dim(2);
  Tensor out(image.shape());
  for (std::size_t k = 0; k < plane; ++k) {
    const double y = 0.299 * image[k] + 0.587 * image[plane + k] + 0.114 * image[2 * plane + k];
    const double v = std::clamp(y, 0.0, 1.0);
    out[k] = out[plane + k] = out[2 * plane + k] = v;
  }
  return out;
}

Tensor ran_grayscale(const Tensor& image, double gray_prob, Rng& rng) {
  require_chw(image, "ran_grayscale");
  if (image.dim(0) != 1 && image.dim(0) != 3) {
    throw ConfigError("grayscale needs 1 or 3 channels, got " + std::to_string(image.dim(0)));
  }
  if (!(gray_prob >= 0.0 && gray_prob <= 1.0)) throw ConfigError("grayscale probability must lie in [0, 1]");
  return rng.bernoulli(gray_prob) ? grayscale(image) : image;
}

Tensor ran_color(const Tensor& image, double jitter, Rng& rng) {
  require_chw(image, "ran_color");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("color jitter must lie in [0, 1), got " + std::to_string(jitter));
  const std::size_t c = image.dim(0), plane = image.dim(1) * image.dim(2);
  Tensor out = image;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double scale = rng.uniform(1.0 - jitter, 1.0 + jitter);
    if (jitter == 0.0) continue;
    for (std::size_t k = 0; k < plane; ++k) {
      double& v = out[ch * plane + k];
      v = std::clamp(v * scale, 0.0, 1.0);
    }
  }
  return out;
}

std::array<Window, 5> five_crop_windows(std::size_t height, std::size_t width, double frac) {
  const std::size_t h = crop_extent(height, frac), w = crop_extent(width, frac);
  return {Window{0, 0, h, w}, Window{0, width - w, h, w}, Window{height - h, 0, h, w},
          Window{height - h, width - w, h, w}, Window{(height - h) / 2, (width - w) / 2, h, w}};
}

std::vector<Tensor> five_crop(const Tensor& image, double frac) {
  require_chw(image, "five_crop");
  std::vector<Tensor> out;
  for (const Window& win : five_crop_windows(image.dim(1), image.dim(2), frac)) {
    out.push_back(crop_and_resize(image, win));
  }
  return out;
}

Tensor apply_corruption(const Tensor& image, const CorruptionSpec& spec, Rng& rng) {
  switch (spec.kind) {
    case CorruptionKind::RanCrop: return ran_crop(image, spec.crop_fraction, rng);
    case CorruptionKind::RanHflip: return ran_hflip(image, spec.flip_prob, rng);
    case CorruptionKind::RanGrayscale: return ran_grayscale(image, spec.gray_prob, rng);
    case CorruptionKind::RanColor: return ran_color(image, spec.jitter, rng);
    case CorruptionKind::FiveCrop: {
      require_chw(image, "five_crop");
      const auto windows = five_crop_windows(image.dim(1), image.dim(2), spec.crop_fraction);
      return crop_and_resize(image, windows[rng.uniform_index(5)]);
    }
  }
  throw ConfigError("unknown corruption kind");
}

Dataset corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset out = ds;
  const Shape sample = ds.sample_shape();
  const std::size_t stride = shape_size(sample);
  auto dst = out.images.data();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor image(sample, std::vector<double>(ds.images.data().begin() + std::ptrdiff_t(i * stride),
                                             ds.images.data().begin() + std::ptrdiff_t((i + 1) * stride)));
    Rng rng = Rng::derive(seed, {0xc0de, i});
    const Tensor corrupted = apply_corruption(image, spec, rng);
    std::copy(corrupted.data().begin(), corrupted.data().end(), dst.begin() + std::ptrdiff_t(i * stride));
  }
  out.name = ds.name + "+" + to_string(spec.kind);
  return out;
}

}  // namespace rnet
