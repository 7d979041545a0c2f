#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rnet/tensor.hpp"

namespace rnet {

/// Labelled images, N x C x H x W with pixels in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;
  std::size_t num_classes = 10;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  /// Throws FormatError unless sizes agree, labels are in range and pixels in [0, 1].
  void validate() const;
  /// Copy of the first `n` samples (all when n >= size()).
  Dataset head(std::size_t n) const;
  /// Copy of samples at the given indices, in order.
  Dataset gather(const std::vector<std::size_t>& indices) const;
};

inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImages3Magic = 0x00000803;
inline constexpr std::uint32_t kIdxImages4Magic = 0x00000804;

/// Parses an IDX image/label pair. Images are u8 with dims (N, H, W) under
/// magic 0x803 or (N, C, H, W) under 0x804; labels are u8 with dim N under 0x801.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes = 10);

/// Writes the dataset as an IDX pair, quantizing pixels to round(255 * v).
/// Single-channel data uses the 3-dim image header.
void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// File names of a dataset stored under a common prefix, e.g. ".../t10k" ->
/// ".../t10k-images-idx3-ubyte" and ".../t10k-labels-idx1-ubyte". The 4-dim
/// image file name is used when only that one exists.
struct IdxPair {
  std::filesystem::path images;
  std::filesystem::path labels;
};
IdxPair idx_paths(const std::filesystem::path& prefix, std::size_t channels = 1);
IdxPair find_idx_pair(const std::filesystem::path& prefix);

Dataset load_idx_prefix(const std::filesystem::path& prefix, std::size_t num_classes = 10);
void write_idx_prefix(const Dataset& ds, const std::filesystem::path& prefix);

/// Two classes drawn from unit-variance isotropic Gaussians centred at
/// -separation/2 and +separation/2 on the first axis, mapped into [0, 1] by
/// v -> clamp(0.5 + v / (separation + 8), 0, 1). Shape N x 1 x 1 x dim.
Dataset synth_gaussians(std::size_t n_per_class, std::size_t dim, double separation, std::uint64_t seed);

struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

/// Shuffled partition of [0, n) into batches of `batch_size`; the last
/// partial batch is kept. Deterministic per (seed, epoch).
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch);

/// Iterates the batches of one epoch.
class BatchIter {
 public:
  BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch = 0);

  bool next(Batch& out);
  std::size_t batch_count() const { return order_.size(); }

 private:
  const Dataset& ds_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t cursor_ = 0;
};

/// All batches of one epoch at once; convenient for small datasets.
std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch = 0);

}  // namespace rnet
