#pragma once

// Differentiable operations. Every operation exists in two forms that share
// one kernel: an eager form on Tensor (no graph is allocated) and a traced
// form on Var that records a node for reverse-mode differentiation.

#include <span>
#include <vector>

#include "rnet/graph.hpp"
#include "rnet/kernels.hpp"
#include "rnet/tensor.hpp"

namespace rnet {

using kernels::Conv2dParams;
using kernels::PoolParams;

// Eager forms.
using kernels::affine;
using kernels::conv2d;
using kernels::matmul;
using kernels::max_pool2;
using kernels::relu;
using kernels::softmax;

template <typename Scalar>
BasicTensor<Scalar> flatten(const BasicTensor<Scalar>& x) {
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

/// Mean cross-entropy of a batch as a rank-0 tensor.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  return Tensor::scalar(kernels::softmax_cross_entropy(logits, labels));
}

// Traced forms.
Var matmul(Var a, Var b);
Var affine(Var x, Var w, Var b);
Var conv2d(Var x, Var w, Var b, const Conv2dParams& p = {});
Var relu(Var x);
Var max_pool2(Var x, const PoolParams& p = {});
Var reshape(Var x, Shape shape);
Var flatten(Var x);
Var add(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var sum(Var x);
/// c * x for a constant c.
Var scale(Var x, double c);
/// x + c for a constant c.
Var add_scalar(Var x, double c);
Var sin(Var x);
Var tanh(Var x);
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace rnet
