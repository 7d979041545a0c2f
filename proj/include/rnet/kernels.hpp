#pragma once

// Forward and backward kernels of the differentiable operation set.
//
// Everything here is a pure function of its arguments, templated on the
// scalar type and expressed over Eigen maps of row-major tensor storage.
// The tracing layer in graph.hpp/ops.hpp composes these into autodiff nodes.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rnet/error.hpp"
#include "rnet/tensor.hpp"

namespace rnet::kernels {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

struct PoolParams {
  /// Accept odd spatial sizes by pooling partial windows at the border.
  bool pad_odd = false;
};

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

// ---------------------------------------------------------------- matmul

template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  BasicTensor<Scalar> out({a.dim(0), b.dim(1)});
  out.matrix().noalias() = a.matrix() * b.matrix();
  return out;
}

/// Gradients of `a * b` given the upstream gradient.
template <typename Scalar>
void matmul_backward(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const BasicTensor<Scalar>& gout,
                     BasicTensor<Scalar>* ga, BasicTensor<Scalar>* gb) {
  if (ga) {
    *ga = BasicTensor<Scalar>(a.shape());
    ga->matrix().noalias() = gout.matrix() * b.matrix().transpose();
  }
  if (gb) {
    *gb = BasicTensor<Scalar>(b.shape());
    gb->matrix().noalias() = a.matrix().transpose() * gout.matrix();
  }
}

// ---------------------------------------------------------------- affine

/// x[N x in] * w[in x out] + b[out].
template <typename Scalar>
BasicTensor<Scalar> affine(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0)) {
    throw ShapeError("affine: incompatible shapes x" + shape_string(x.shape()) + " w" + shape_string(w.shape()) +
                     " b" + shape_string(b.shape()));
  }
  BasicTensor<Scalar> out({x.dim(0), w.dim(1)});
  auto o = out.matrix();
  o.noalias() = x.matrix() * w.matrix();
  o.rowwise() += b.matrix(1).row(0);
  return out;
}

template <typename Scalar>
void affine_backward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& gout,
                     BasicTensor<Scalar>* gx, BasicTensor<Scalar>* gw, BasicTensor<Scalar>* gb) {
  matmul_backward(x, w, gout, gx, gw);
  if (gb) {
    *gb = BasicTensor<Scalar>(Shape{w.dim(1)});
    gb->matrix(1) = gout.matrix().colwise().sum();
  }
}

// ---------------------------------------------------------------- conv2d

struct ConvGeometry {
  std::size_t n, c, h, w;      // input
  std::size_t f, kh, kw;       // kernel
  std::size_t oh, ow;          // output
  std::size_t stride, pad;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, const Shape& b, const Conv2dParams& p) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d kernel");
  require_rank(b, 1, "conv2d bias");
  if (w[1] != x[1] || b[0] != w[0]) {
    throw ShapeError("conv2d: channel mismatch between input " + shape_string(x) + ", kernel " + shape_string(w) +
                     " and bias " + shape_string(b));
  }
  if (p.stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const std::size_t ph = x[2] + 2 * p.pad, pw = x[3] + 2 * p.pad;
  if (w[2] > ph || w[3] > pw) {
    throw ShapeError("conv2d: kernel " + shape_string(w) + " larger than padded input " + shape_string(x) +
                     " (pad " + std::to_string(p.pad) + "), output dimension would be non-positive");
  }
  return {x[0], x[1], x[2], x[3], w[0], w[2], w[3], (ph - w[2]) / p.stride + 1, (pw - w[3]) / p.stride + 1,
          p.stride, p.pad};
}

/// Unfolds sample `n` into a (C*kh*kw) x (oh*ow) patch matrix.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(Eigen::Index(g.patch()), Eigen::Index(g.out_pixels()));
  for (std::size_t c = 0; c < g.c; ++c) {
    const Scalar* plane = x + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Scalar* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * g.stride + i) - std::ptrdiff_t(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t xx = std::ptrdiff_t(ox * g.stride + j) - std::ptrdiff_t(g.pad);
            const bool inside = y >= 0 && y < std::ptrdiff_t(g.h) && xx >= 0 && xx < std::ptrdiff_t(g.w);
            row[oy * g.ow + ox] = inside ? plane[std::size_t(y) * g.w + std::size_t(xx)] : Scalar(0);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters patch-gradients back onto the image.
template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (std::size_t c = 0; c < g.c; ++c) {
    Scalar* plane = dx + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Scalar* row = cols.data() + ((c * g.kh + i) * g.kw + j) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = std::ptrdiff_t(oy * g.stride + i) - std::ptrdiff_t(g.pad);
          if (y < 0 || y >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const std::ptrdiff_t xx = std::ptrdiff_t(ox * g.stride + j) - std::ptrdiff_t(g.pad);
            if (xx < 0 || xx >= std::ptrdiff_t(g.w)) continue;
            plane[std::size_t(y) * g.w + std::size_t(xx)] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

/// Cross-correlation with zero padding. When `saved_cols` is non-null the
/// per-sample patch matrices are kept for the backward pass.
template <typename Scalar>
BasicTensor<Scalar> conv2d(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& b,
                           const Conv2dParams& p = {}, std::vector<RowMatrix<Scalar>>* saved_cols = nullptr) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), b.shape(), p);
  BasicTensor<Scalar> out({g.n, g.f, g.oh, g.ow});
  const auto wm = w.matrix(g.f);
  const auto bias = b.matrix(g.f);  // f x 1
  RowMatrix<Scalar> cols;
  if (saved_cols) saved_cols->resize(g.n);
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.f * g.out_pixels();
  for (std::size_t n = 0; n < g.n; ++n) {
    RowMatrix<Scalar>& c = saved_cols ? (*saved_cols)[n] : cols;
    im2col(x.data().data() + n * in_stride, g, c);
    MatrixMap<Scalar> o(out.data().data() + n * out_stride, Eigen::Index(g.f), Eigen::Index(g.out_pixels()));
    o.noalias() = wm * c;
    o.colwise() += bias.col(0);
  }
  return out;
}

template <typename Scalar>
void conv2d_backward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& w, const BasicTensor<Scalar>& b,
                     const Conv2dParams& p, const BasicTensor<Scalar>& gout,
                     const std::vector<RowMatrix<Scalar>>* saved_cols, BasicTensor<Scalar>* gx,
                     BasicTensor<Scalar>* gw, BasicTensor<Scalar>* gb) {
  const ConvGeometry g = conv_geometry(x.shape(), w.shape(), b.shape(), p);
  if (gout.shape() != Shape{g.n, g.f, g.oh, g.ow}) {
    throw ShapeError("conv2d backward: upstream gradient shape " + shape_string(gout.shape()));
  }
  if (gx) *gx = BasicTensor<Scalar>(x.shape());
  if (gw) *gw = BasicTensor<Scalar>(w.shape());
  if (gb) *gb = BasicTensor<Scalar>(b.shape());
  const auto wm = w.matrix(g.f);
  RowMatrix<Scalar> cols, dcols;
  const std::size_t in_stride = g.c * g.h * g.w, out_stride = g.f * g.out_pixels();
  for (std::size_t n = 0; n < g.n; ++n) {
    ConstMatrixMap<Scalar> go(gout.data().data() + n * out_stride, Eigen::Index(g.f), Eigen::Index(g.out_pixels()));
    if (gw) {
      const RowMatrix<Scalar>* c = saved_cols ? &(*saved_cols)[n] : nullptr;
      if (!c) {
        im2col(x.data().data() + n * in_stride, g, cols);
        c = &cols;
      }
      gw->matrix(g.f).noalias() += go * c->transpose();
    }
    if (gb) gb->matrix(g.f).col(0) += go.rowwise().sum();
    if (gx) {
      dcols.noalias() = wm.transpose() * go;
      col2im(dcols, g, gx->data().data() + n * in_stride);
    }
  }
}

// ---------------------------------------------------------------- relu

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& x) {
  BasicTensor<Scalar> out = x;
  out.array() = x.array().max(Scalar(0));
  return out;
}

/// Subgradient 0 at exactly 0.
template <typename Scalar>
BasicTensor<Scalar> relu_backward(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gout) {
  BasicTensor<Scalar> gx(x.shape());
  gx.array() = (x.array() > Scalar(0)).select(gout.array(), Scalar(0));
  return gx;
}

// ---------------------------------------------------------------- max_pool2

/// 2x2 stride-2 max pooling. `argmax` receives the flat input index chosen
/// for every output element; ties go to the first element in row-major order.
template <typename Scalar>
BasicTensor<Scalar> max_pool2(const BasicTensor<Scalar>& x, const PoolParams& p = {},
                              std::vector<std::size_t>* argmax = nullptr) {
  require_rank(x.shape(), 4, "max_pool2 input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (!p.pad_odd && (h % 2 != 0 || w % 2 != 0)) {
    throw ShapeError("max_pool2: odd spatial size " + shape_string(x.shape()) + " (enable pad_odd to accept)");
  }
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  BasicTensor<Scalar> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  const auto in = x.data();
  auto o = out.data();
  std::size_t k = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
        std::size_t best = base + 2 * oy * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          const std::size_t y = 2 * oy + dy;
          if (y >= h) continue;
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t xx = 2 * ox + dx;
            if (xx >= w) continue;
            const std::size_t idx = base + y * w + xx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        o[k] = in[best];
        if (argmax) (*argmax)[k] = best;
      }
    }
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> max_pool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                       const BasicTensor<Scalar>& gout) {
  BasicTensor<Scalar> gx(input_shape);
  auto d = gx.data();
  const auto g = gout.data();
  for (std::size_t k = 0; k < argmax.size(); ++k) d[argmax[k]] += g[k];
  return gx;
}

// ---------------------------------------------------------------- softmax / cross-entropy

/// Row-wise softmax of an N x C logit matrix, stabilized by max-subtraction.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  BasicTensor<Scalar> p(logits.shape());
  auto pm = p.matrix();
  const auto lm = logits.matrix();
  for (Eigen::Index r = 0; r < lm.rows(); ++r) {
    const Scalar m = lm.row(r).maxCoeff();
    pm.row(r) = (lm.row(r).array() - m).exp().matrix();
    pm.row(r) /= pm.row(r).sum();
  }
  return p;
}

inline void check_labels(std::span<const int> labels, std::size_t n, std::size_t classes) {
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || std::size_t(labels[i]) >= classes) {
      throw IndexError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

/// Per-row negative log-likelihood of the true label.
template <typename Scalar>
std::vector<Scalar> per_sample_cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (n < 1) throw ShapeError("softmax_cross_entropy: empty batch");
  check_labels(labels, n, c);
  const auto lm = logits.matrix();
  std::vector<Scalar> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Scalar m = lm.row(Eigen::Index(r)).maxCoeff();
    const Scalar lse = m + std::log((lm.row(Eigen::Index(r)).array() - m).exp().sum());
    out[r] = lse - lm(Eigen::Index(r), labels[r]);
  }
  return out;
}

template <typename Scalar>
Scalar softmax_cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  const std::vector<Scalar> losses = per_sample_cross_entropy(logits, labels);
  Scalar total = 0;
  for (Scalar v : losses) total += v;
  return total / Scalar(losses.size());
}

/// d(mean loss)/d(logits) = (softmax - onehot) / N.
template <typename Scalar>
BasicTensor<Scalar> softmax_cross_entropy_backward(const BasicTensor<Scalar>& logits, std::span<const int> labels,
                                                   Scalar gout) {
  BasicTensor<Scalar> g = softmax(logits);
  auto gm = g.matrix();
  const Scalar scale = gout / Scalar(logits.dim(0));
  for (std::size_t r = 0; r < logits.dim(0); ++r) gm(Eigen::Index(r), labels[r]) -= Scalar(1);
  gm *= scale;
  return g;
}

}  // namespace rnet::kernels
