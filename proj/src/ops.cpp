#include "rnet/ops.hpp"

#include <memory>
#include <string>
#include <utility>

namespace rnet {
namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw ContractError("operation on a detached Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  return g.record("matmul", kernels::matmul(a.value(), b.value()), {a, b}, [](const BackwardContext& c) {
    std::vector<Tensor> out(2);
    kernels::matmul_backward(c.input(0), c.input(1), c.grad_output, c.needs[0] ? &out[0] : nullptr,
                             c.needs[1] ? &out[1] : nullptr);
    return out;
  });
}

Var affine(Var x, Var w, Var b) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  return g.record("affine", kernels::affine(x.value(), w.value(), b.value()), {x, w, b},
                  [](const BackwardContext& c) {
                    std::vector<Tensor> out(3);
                    kernels::affine_backward(c.input(0), c.input(1), c.grad_output, c.needs[0] ? &out[0] : nullptr,
                                             c.needs[1] ? &out[1] : nullptr, c.needs[2] ? &out[2] : nullptr);
                    return out;
                  });
}

Var conv2d(Var x, Var w, Var b, const Conv2dParams& p) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  auto cols = std::make_shared<std::vector<RowMatrix<double>>>();
  Tensor y = kernels::conv2d(x.value(), w.value(), b.value(), p, cols.get());
  return g.record("conv2d", std::move(y), {x, w, b}, [p, cols](const BackwardContext& c) {
    std::vector<Tensor> out(3);
    kernels::conv2d_backward(c.input(0), c.input(1), c.input(2), p, c.grad_output, cols.get(),
                             c.needs[0] ? &out[0] : nullptr, c.needs[1] ? &out[1] : nullptr,
                             c.needs[2] ? &out[2] : nullptr);
    return out;
  });
}

Var relu(Var x) {
  return graph_of(x).record("relu", kernels::relu(x.value()), {x}, [](const BackwardContext& c) {
    return std::vector<Tensor>{kernels::relu_backward(c.input(0), c.grad_output)};
  });
}

Var max_pool2(Var x, const PoolParams& p) {
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  Tensor y = kernels::max_pool2(x.value(), p, argmax.get());
  return graph_of(x).record("max_pool2", std::move(y), {x}, [argmax](const BackwardContext& c) {
    return std::vector<Tensor>{kernels::max_pool2_backward(c.input(0).shape(), *argmax, c.grad_output)};
  });
}

Var reshape(Var x, Shape shape) {
  Tensor y = x.value().reshaped(std::move(shape));
  return graph_of(x).record("reshape", std::move(y), {x}, [](const BackwardContext& c) {
    return std::vector<Tensor>{c.grad_output.reshaped(c.input(0).shape())};
  });
}

Var flatten(Var x) {
  const Tensor& v = x.value();
  if (v.rank() < 1) throw ShapeError("flatten: rank-0 tensor");
  return reshape(x, {v.dim(0), v.size() / v.dim(0)});
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor y = a.value();
  y.array() += b.value().array();
  return g.record("add", std::move(y), {a, b}, [](const BackwardContext& c) {
    return std::vector<Tensor>{c.grad_output, c.grad_output};
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor y = a.value();
  y.array() *= b.value().array();
  return g.record("mul", std::move(y), {a, b}, [](const BackwardContext& c) {
    std::vector<Tensor> out(2);
    if (c.needs[0]) {
      out[0] = c.grad_output;
      out[0].array() *= c.input(1).array();
    }
    if (c.needs[1]) {
      out[1] = c.grad_output;
      out[1].array() *= c.input(0).array();
    }
    return out;
  });
}

Var sum(Var x) {
  return graph_of(x).record("sum", Tensor::scalar(x.value().array().sum()), {x}, [](const BackwardContext& c) {
    return std::vector<Tensor>{Tensor::full(c.input(0).shape(), c.grad_output.item())};
  });
}

Var scale(Var x, double c) {
  Tensor y = x.value();
  y.array() *= c;
  return graph_of(x).record("scale", std::move(y), {x}, [c](const BackwardContext& ctx) {
    Tensor g = ctx.grad_output;
    g.array() *= c;
    return std::vector<Tensor>{std::move(g)};
  });
}

Var add_scalar(Var x, double c) {
  Tensor y = x.value();
  y.array() += c;
  return graph_of(x).record("add_scalar", std::move(y), {x},
                            [](const BackwardContext& ctx) { return std::vector<Tensor>{ctx.grad_output}; });
}

Var sin(Var x) {
  Tensor y = x.value();
  y.array() = y.array().sin();
  return graph_of(x).record("sin", std::move(y), {x}, [](const BackwardContext& c) {
    Tensor g = c.grad_output;
    g.array() *= c.input(0).array().cos();
    return std::vector<Tensor>{std::move(g)};
  });
}

Var tanh(Var x) {
  Tensor y = x.value();
  y.array() = y.array().tanh();
  return graph_of(x).record("tanh", std::move(y), {x}, [](const BackwardContext& c) {
    Tensor g = c.grad_output;
    g.array() *= 1.0 - c.output.array().square();
    return std::vector<Tensor>{std::move(g)};
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  std::vector<int> saved(labels.begin(), labels.end());
  const double loss = kernels::softmax_cross_entropy(logits.value(), labels);
  return graph_of(logits).record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits}, [saved = std::move(saved)](const BackwardContext& c) {
        return std::vector<Tensor>{kernels::softmax_cross_entropy_backward(c.input(0), std::span<const int>(saved),
                                                                           c.grad_output.item())};
      });
}

}  // namespace rnet
