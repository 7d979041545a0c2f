#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rnet/data.hpp"
#include "rnet/random.hpp"
#include "rnet/tensor.hpp"

namespace rnet {

enum class CorruptionKind { RanCrop, RanHflip, RanGrayscale, RanColor, FiveCrop };

inline constexpr std::array<CorruptionKind, 5> kAllCorruptions = {
    CorruptionKind::RanCrop, CorruptionKind::RanHflip, CorruptionKind::RanGrayscale, CorruptionKind::RanColor,
    CorruptionKind::FiveCrop};

std::string to_string(CorruptionKind k);
CorruptionKind corruption_from_string(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::RanCrop;
  double crop_fraction = 0.875;  // (0, 1]
  double flip_prob = 0.5;        // [0, 1]
  double gray_prob = 1.0;        // [0, 1]
  double jitter = 0.2;           // [0, 1)

  void validate() const;
  /// The parameter that `--param` sets on the command line for this kind.
  double& primary_param();
};

/// Rectangle inside an H x W image.
struct Window {
  std::size_t top, left, height, width;
};

/// ceil(frac*H) x ceil(frac*W) window at a uniformly random position.
Window random_crop_window(std::size_t height, std::size_t width, double frac, Rng& rng);

/// Bilinear resize of `window` of a C x H x W image back to H x W with
/// corner-aligned sampling: output row i samples source row
/// top + i*(window.height-1)/(H-1).
Tensor crop_and_resize(const Tensor& image, const Window& window);

Tensor ran_crop(const Tensor& image, double frac, Rng& rng);
Tensor hflip(const Tensor& image);
Tensor ran_hflip(const Tensor& image, double flip_prob, Rng& rng);
/// Luminance 0.299 R + 0.587 G + 0.114 B broadcast to all channels.
Tensor grayscale(const Tensor& image);
Tensor ran_grayscale(const Tensor& image, double gray_prob, Rng& rng);
Tensor ran_color(const Tensor& image, double jitter, Rng& rng);
/// Top-left, top-right, bottom-left, bottom-right and centre crops, each resized to H x W.
std::vector<Tensor> five_crop(const Tensor& image, double frac);
std::array<Window, 5> five_crop_windows(std::size_t height, std::size_t width, double frac);

/// Applies the corruption to one C x H x W image. five_crop returns one of
/// its five views chosen uniformly at random.
Tensor apply_corruption(const Tensor& image, const CorruptionSpec& spec, Rng& rng);

/// Corrupts every image with a per-image stream derived from (seed, index).
Dataset corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec, std::uint64_t seed);

}  // namespace rnet
