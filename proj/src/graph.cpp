#include "rnet/graph.hpp"

#include <memory>

#include "rnet/error.hpp"

namespace rnet {

const Tensor& Var::value() const {
  if (!graph) throw ContractError("Var is not attached to a graph");
  return graph->value(*this);
}

const Tensor& BackwardContext::input(std::size_t k) const { return graph.nodes_.at(inputs[k]).value; }

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw ContractError("Var does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad, std::nullopt});
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.backward = std::move(backward);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    const Node& src = node(in);
    n.requires_grad = n.requires_grad || src.requires_grad;
    n.inputs.push_back(in.id);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad) throw ContractError("node " + std::to_string(v.id) + " (" + n.op + ") has no gradient; call backward first");
  return *n.grad;
}

void Graph::clear_grads() {
  for (Node& n : nodes_) n.grad.reset();
}

void Graph::backward(Var root) {
  const Node& r = node(root);
  if (r.value.size() != 1) {
    throw ContractError("backward requires a scalar root, got shape " + shape_string(r.value.shape()));
  }
  std::vector<bool> reachable(root.id + 1, false);
  reachable[root.id] = true;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    for (std::size_t in : nodes_[i].inputs) reachable[in] = true;
  }
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (reachable[i]) nodes_[i].grad = Tensor(nodes_[i].value.shape());
  }
  (*nodes_[root.id].grad)[0] = 1.0;

  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!reachable[i] || !n.requires_grad || !n.backward) continue;
    const std::size_t arity = n.inputs.size();
    std::unique_ptr<bool[]> needs(new bool[arity]);
    for (std::size_t k = 0; k < arity; ++k) needs[k] = nodes_[n.inputs[k]].requires_grad;
    const BackwardContext ctx{*this, n.inputs, n.value, *n.grad, std::span<const bool>(needs.get(), arity)};
    std::vector<Tensor> grads = n.backward(ctx);
    for (std::size_t k = 0; k < arity; ++k) {
      if (!needs[k]) continue;
      Node& src = nodes_[n.inputs[k]];
      if (k >= grads.size() || grads[k].shape() != src.value.shape()) {
        throw ContractError("backward of " + n.op + " produced a gradient of the wrong shape for input " +
                            std::to_string(k));
      }
      src.grad->array() += grads[k].array();
    }
  }
}

}  // namespace rnet
