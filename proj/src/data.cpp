#include "rnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "rnet/error.hpp"
#include "rnet/random.hpp"

namespace rnet {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

std::uint32_t be32(const std::string& bytes, std::size_t offset, const std::string& file, const char* field) {
  if (bytes.size() < offset + 4) throw FormatError(file + ": truncated header while reading " + field);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw FormatError("failed writing " + path.string());
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw FormatError(name + ": images must be N x C x H x W, got " + shape_string(images.shape()));
  if (images.dim(0) != labels.size()) {
    throw FormatError(name + ": image count " + std::to_string(images.dim(0)) + " != label count " +
                      std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= num_classes) {
      throw FormatError(name + ": label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                        " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError(name + ": pixel value outside [0, 1]");
  }
}

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset d{images.slice(0, n), std::vector<int>(labels.begin(), labels.begin() + std::ptrdiff_t(n)), name,
            num_classes};
  return d;
}

Dataset Dataset::gather(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ShapeError(name + ": gather of zero samples");
  Shape s = images.shape();
  s[0] = indices.size();
  Tensor out(s);
  const std::size_t stride = images.size() / images.dim(0);
  std::vector<int> l;
  l.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= size()) throw IndexError(name + ": sample index " + std::to_string(i) + " out of range");
    std::copy_n(images.data().begin() + std::ptrdiff_t(i * stride), stride,
                out.data().begin() + std::ptrdiff_t(k * stride));
    l.push_back(labels[i]);
  }
  return Dataset{std::move(out), std::move(l), name, num_classes};
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t num_classes) {
  const std::string img = read_file(images_path), lab = read_file(labels_path);
  const std::string ifile = images_path.string(), lfile = labels_path.string();

  const std::uint32_t imagic = be32(img, 0, ifile, "magic");
  if (imagic != kIdxImages3Magic && imagic != kIdxImages4Magic) {
    throw FormatError(ifile + ": bad magic " + hex(imagic) + " (expected 0x00000803 or 0x00000804 for u8 images)");
  }
  const std::size_t ndims = imagic == kIdxImages3Magic ? 3 : 4;
  std::vector<std::size_t> dims(ndims);
  for (std::size_t k = 0; k < ndims; ++k) dims[k] = be32(img, 4 + 4 * k, ifile, "dimension");
  for (std::size_t d : dims) {
    if (d == 0) throw FormatError(ifile + ": zero dimension in header");
  }
  const Shape shape = ndims == 3 ? Shape{dims[0], 1, dims[1], dims[2]} : Shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t header = 4 + 4 * ndims, count = shape_size(shape);
  if (img.size() != header + count) {
    throw FormatError(ifile + ": payload is " + std::to_string(img.size() - header) + " bytes, header declares " +
                      std::to_string(count) + (img.size() < header + count ? " (truncated)" : ""));
  }

  const std::uint32_t lmagic = be32(lab, 0, lfile, "magic");
  if (lmagic != kIdxLabelsMagic) {
    throw FormatError(lfile + ": bad magic " + hex(lmagic) + " (expected 0x00000801 for u8 labels)");
  }
  const std::size_t nlabels = be32(lab, 4, lfile, "label count");
  if (lab.size() != 8 + nlabels) {
    throw FormatError(lfile + ": payload is " + std::to_string(lab.size() - 8) + " bytes, header declares " +
                      std::to_string(nlabels));
  }
  if (nlabels != shape[0]) {
    throw FormatError("sample count mismatch: " + ifile + " has N=" + std::to_string(shape[0]) + ", " + lfile +
                      " has N=" + std::to_string(nlabels));
  }

  Dataset ds;
  ds.name = images_path.filename().string();
  ds.num_classes = num_classes;
  ds.images = Tensor(shape);
  auto px = ds.images.data();
  for (std::size_t i = 0; i < count; ++i) px[i] = static_cast<unsigned char>(img[header + i]) / 255.0;
  ds.labels.resize(nlabels);
  for (std::size_t i = 0; i < nlabels; ++i) ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
  ds.validate();
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  ds.validate();
  const Shape& s = ds.images.shape();
  std::string img;
  img.reserve(32 + ds.images.size());
  if (s[1] == 1) {
    put_be32(img, kIdxImages3Magic);
    for (std::size_t d : {s[0], s[2], s[3]}) put_be32(img, std::uint32_t(d));
  } else {
    put_be32(img, kIdxImages4Magic);
    for (std::size_t d : s) put_be32(img, std::uint32_t(d));
  }
  for (double v : ds.images.data()) img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));

  std::string lab;
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, std::uint32_t(ds.labels.size()));
  for (int l : ds.labels) {
    if (l > 255) throw FormatError("label " + std::to_string(l) + " does not fit in u8");
    lab.push_back(static_cast<char>(static_cast<unsigned char>(l)));
  }
  write_file(images_path, img);
  write_file(labels_path, lab);
}

IdxPair idx_paths(const std::filesystem::path& prefix, std::size_t channels) {
  const std::string p = prefix.string();
  return {p + (channels == 1 ? "-images-idx3-ubyte" : "-images-idx4-ubyte"), p + "-labels-idx1-ubyte"};
}

IdxPair find_idx_pair(const std::filesystem::path& prefix) {
  IdxPair p = idx_paths(prefix, 1);
  if (!std::filesystem::exists(p.images)) {
    IdxPair p4 = idx_paths(prefix, 3);
    if (std::filesystem::exists(p4.images)) return p4;
  }
  return p;
}

Dataset load_idx_prefix(const std::filesystem::path& prefix, std::size_t num_classes) {
  const IdxPair p = find_idx_pair(prefix);
  Dataset ds = load_idx(p.images, p.labels, num_classes);
  ds.name = prefix.filename().string();
  return ds;
}

void write_idx_prefix(const Dataset& ds, const std::filesystem::path& prefix) {
  const IdxPair p = idx_paths(prefix, ds.images.dim(1));
  write_idx(ds, p.images, p.labels);
}

Dataset synth_gaussians(std::size_t n_per_class, std::size_t dim, double separation, std::uint64_t seed) {
  if (dim < 1 || n_per_class < 1) throw ConfigError("synth_gaussians: dim and n_per_class must be positive");
  Rng rng = Rng::derive(seed, {0x5e7});
  Dataset ds;
  ds.name = "synth-gaussians";
  ds.num_classes = 2;
  ds.images = Tensor({2 * n_per_class, 1, 1, dim});
  ds.labels.resize(2 * n_per_class);
  const double scale = separation + 8.0;
  auto px = ds.images.data();
  // Classes interleaved so any prefix is balanced.
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const int label = int(i % 2);
    ds.labels[i] = label;
    for (std::size_t d = 0; d < dim; ++d) {
      double v = rng.normal();
      if (d == 0) v += label == 1 ? separation / 2 : -separation / 2;
      px[i * dim + d] = std::clamp(0.5 + v / scale, 0.0, 1.0);
    }
  }
  return ds;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng::derive(seed, {0xba7c4, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(perm.begin() + std::ptrdiff_t(start), perm.begin() + std::ptrdiff_t(std::min(n, start + batch_size)));
  }
  return out;
}

BatchIter::BatchIter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch)
    : ds_(ds), order_(batch_indices(ds.size(), batch_size, seed, epoch)) {}

bool BatchIter::next(Batch& out) {
  if (cursor_ >= order_.size()) return false;
  Dataset d = ds_.gather(order_[cursor_]);
  out.images = std::move(d.images);
  out.labels = std::move(d.labels);
  out.indices = order_[cursor_];
  ++cursor_;
  return true;
}

std::vector<Batch> batch_iter(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Batch> out;
  BatchIter it(ds, batch_size, seed, epoch);
  Batch b;
  while (it.next(b)) out.push_back(std::move(b));
  return out;
}

}  // namespace rnet
