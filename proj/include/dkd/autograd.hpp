#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dkd/tensor.hpp"

namespace dkd {

using NodeId = std::size_t;

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the lifetime
// of the tape that produced it.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const;
  NodeId id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

// Gradients produced by one backward pass, keyed by node.
template <typename T>
class Gradients {
 public:
  // Throws ContractError if the node was neither a parameter nor requested.
  const Tensor<T>& operator[](const Var<T>& v) const;
  bool contains(const Var<T>& v) const { return grads_.contains(v.id()); }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

// Records operations eagerly during forward evaluation so a scalar loss can be
// differentiated in reverse. Nodes are appended in evaluation order, so every
// input id is smaller than the id of the node consuming it.
//
// A tape belongs to a single thread and usually to a single training step.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output and one accumulator per input;
  // accumulators are null for inputs that do not need a gradient.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  // Leaf that receives a gradient whenever the tape records.
  Var<T> parameter(Tensor<T> value);

  // Appends an op result. The backward rule is dropped when no input needs a
  // gradient or the tape is not recording.
  Var<T> record(Tensor<T> value, std::vector<NodeId> inputs, BackwardFn backward);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  // Reverse pass from a scalar loss. Every parameter leaf gets an entry (zeros
  // when it did not contribute); nodes listed in `keep` are retained too.
  Gradients<T> backward(const Var<T>& loss, std::span<const Var<T>> keep = {});

 private:
  struct Node {
    Tensor<T> value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_parameter = false;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

template <typename T>
Gradients<T> backward(Tape<T>& tape, const Var<T>& loss, std::span<const Var<T>> keep = {}) {
  return tape.backward(loss, keep);
}

template <typename T>
Tape<T>& Var<T>::tape() const {
  if (!tape_) throw ContractError("Var is not attached to a tape");
  return *tape_;
}

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape().value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape().requires_grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace dkd
