#include "dkd/autograd.hpp"

#include <algorithm>
#include <string>

namespace dkd {

template <typename T>
const Tensor<T>& Gradients<T>::operator[](const Var<T>& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) {
    throw ContractError("no gradient retained for node " + std::to_string(v.id()));
  }
  return it->second;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, {}, grad_enabled_, true});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward) {
  const NodeId id = nodes_.size();
  bool needs = false;
  for (NodeId in : inputs) {
    if (in >= id) throw ContractError("tape input " + std::to_string(in) + " does not precede node " + std::to_string(id));
    needs = needs || nodes_[in].requires_grad;
  }
  needs = needs && grad_enabled_;
  Node node{std::move(value), std::move(inputs), {}, needs, false};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, id);
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss, std::span<const Var<T>> keep) {
  if (&loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(root.value.shape()));
  }

  std::vector<bool> retain(nodes_.size(), false);
  for (const auto& v : keep) {
    if (&v.tape() != this) throw ContractError("kept node belongs to a different tape");
    retain.at(v.id()) = true;
  }

  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  if (root.requires_grad) grads[loss.id()] = Tensor<T>(root.value.shape(), T(1));

  std::vector<Tensor<T>*> sinks;
  for (NodeId id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads[id] || !node.backward) continue;
    sinks.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const NodeId in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!grads[in]) grads[in] = Tensor<T>(nodes_[in].value.shape(), T(0));
      sinks[k] = &*grads[in];
    }
    node.backward(*grads[id], sinks);
    if (!retain[id]) grads[id].reset();
  }

  Gradients<T> out;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!(node.is_parameter || retain[id])) continue;
    if (grads[id]) {
      out.grads_.emplace(id, std::move(*grads[id]));
    } else {
      out.grads_.emplace(id, Tensor<T>(node.value.shape(), T(0)));
    }
  }
  return out;
}

template class Gradients<float>;
template class Gradients<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace dkd
