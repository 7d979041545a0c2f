#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnet/tensor.hpp"

namespace rnet {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// What a node's backward function sees.
struct BackwardContext {
  const Graph& graph;
  std::span<const std::size_t> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  /// needs[k] is true when input k requires a gradient.
  std::span<const bool> needs;

  const Tensor& input(std::size_t k) const;
};

/// Returns one gradient per input; entries for inputs with needs[k] == false
/// may be left default-constructed.
using BackwardFn = std::function<std::vector<Tensor>(const BackwardContext&)>;

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is a topological
/// order by construction. A graph is confined to a single thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf node. Leaves with `requires_grad` receive dL/dleaf on backward.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an operation node. The node requires a gradient when any input does.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Populates gradient slots of every node the scalar `root` depends on.
  void backward(Var root);

  const Tensor& value(Var v) const { return node(v).value; }
  bool has_grad(Var v) const { return node(v).grad.has_value(); }
  const Tensor& grad(Var v) const;
  const std::string& op(Var v) const { return node(v).op; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::span<const std::size_t> inputs(Var v) const { return node(v).inputs; }
  std::size_t size() const { return nodes_.size(); }

  void clear_grads();

 private:
  friend struct BackwardContext;

  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace rnet
