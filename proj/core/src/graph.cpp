#include "cadgd/graph.hpp"

#include <stdexcept>

namespace cadgd {

const Tensor& Var::value() const { return graph_->value(*this); }
Tensor Var::grad() const { return graph_->grad(*this); }
bool Var::requires_grad() const { return graph_->requires_grad(*this); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  require_finite(value, "graph constant");
  return push(Node{std::move(value), {}, {}, false, {}});
}

Var Graph::variable(Tensor value) {
  require_finite(value, "graph variable");
  return push(Node{std::move(value), {}, {}, true, {}});
}

Var Graph::parameter(const ParamStore& store, const std::string& path) {
  if (auto it = param_nodes_.find(path); it != param_nodes_.end()) {
    return Var(this, it->second);
  }
  const Tensor& value = store.value(path);
  require_finite(value, path.c_str());
  Var v = push(Node{value, {}, {}, true, path});
  param_nodes_.emplace(path, v.id_);
  return v;
}

Var Graph::record(Tensor value, std::initializer_list<Var> parents,
                  BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph_ != this) throw std::logic_error("op mixes vars from different graphs");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  require_finite(value, "graph op output");
  return push(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{},
                   needs, {}});
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.graph_ != this) throw std::logic_error("op mixes vars from different graphs");
    needs = needs || nodes_[p.id_].requires_grad;
  }
  require_finite(value, "graph op output");
  return push(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{},
                   needs, {}});
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Graph::accumulate_grad(Var v, const Tensor& g) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw std::logic_error("gradient shape " + shape_string(g.shape()) +
                           " does not match value shape " +
                           shape_string(n.value.shape()));
  }
  if (n.grad.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var loss) {
  if (loss.graph_ != this) throw std::logic_error("loss belongs to another graph");
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                shape_string(value(loss).shape()));
  }
  accumulate_grad(loss, Tensor(value(loss).shape(), 1.0));
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

void Graph::mix_branch(std::uint64_t choice) {
  // FNV-1a over the bytes of `choice`.
  for (int b = 0; b < 8; ++b) {
    branch_signature_ ^= (choice >> (8 * b)) & 0xff;
    branch_signature_ *= 0x100000001b3ull;
  }
}

void Graph::accumulate_into(ParamStore& store) const {
  for (const auto& [path, id] : param_nodes_) {
    const Node& n = nodes_[id];
    if (!n.grad.empty()) store.grad(path) += n.grad;
  }
}

}  // namespace cadgd
