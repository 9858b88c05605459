#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <vector>

#include "cadgd/params.hpp"
#include "cadgd/tensor.hpp"

namespace cadgd {

class Graph;

// Handle to a node recorded on a Graph. Cheap to copy; valid while the
// graph is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Gradient after Graph::backward; zeros if the node received none.
  Tensor grad() const;
  bool requires_grad() const;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Every op appends a node holding its forward value and a
// closure that pushes the incoming gradient to its parents.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to a parameter; repeated calls for one path return the same node.
  Var parameter(const ParamStore& store, const std::string& path);

  // Appends an op node. Its output must be finite. `backward` is dropped when
  // no parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  Tensor grad(Var v) const;

  // Adds `g` into the gradient slot of `v` (no-op if v needs no gradient).
  void accumulate_grad(Var v, const Tensor& g);

  // Seeds d(loss)/d(loss) = 1 and propagates to every node. Loss must hold
  // exactly one element.
  void backward(Var loss);

  // Adds parameter-leaf gradients into the store's accumulators.
  void accumulate_into(ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

  // Piecewise ops (relu, abs, clamp, max) fold the branch each element took
  // into this hash, so two evaluations can tell whether they ran the same
  // smooth piece.
  void mix_branch(std::uint64_t choice);
  std::uint64_t branch_signature() const { return branch_signature_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_path;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::map<std::string, std::size_t> param_nodes_;
  std::uint64_t branch_signature_ = 0xcbf29ce484222325ull;
};

}  // namespace cadgd
