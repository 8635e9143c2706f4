#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "al/tensor.hpp"

namespace al {

template <typename T>
class BasicTape;

/// Handle to a value recorded on a tape.
template <typename T>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicTape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  BasicTape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const BasicTensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  BasicTape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order, so the
/// vector order is already topological; backward walks it once in reverse.
template <typename T>
class BasicTape {
 public:
  using Var = BasicVar<T>;
  /// Called with the tape and the node id whose gradient is complete; it
  /// must accumulate into the gradients of that node's inputs.
  using BackwardFn = std::function<void(BasicTape&, std::size_t)>;
  using GradMap = std::map<std::string, BasicTensor<T>>;

  BasicTape() = default;
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  Var leaf(BasicTensor<T> value, bool requires_grad, std::string name = {}) {
    Node n;
    n.value = std::move(value);
    n.value.set_requires_grad(requires_grad);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    n.is_leaf = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op result. The backward closure is dropped when no input
  /// requires a gradient, so inference-only graphs carry no closures.
  Var record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = false;
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw Error("tape input id out of range");
      needs = needs || nodes_[in].requires_grad;
    }
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) {
      n.inputs = std::move(inputs);
      n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const BasicTensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, zero-allocated on first access.
  std::vector<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.numel(), T{0});
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  /// Runs reverse accumulation from a scalar loss. Returns gradients of
  /// every named leaf that requires them; also stores them on the leaves.
  GradMap backward(Var loss) {
    if (loss.valid() && &loss.tape() != this) throw Error("loss belongs to a different tape");
    if (backward_done_) throw Error("backward already ran on this tape; record a new forward pass");
    const Node& root = nodes_.at(loss.id());
    if (root.value.numel() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
    }
    backward_done_ = true;
    GradMap out;
    if (!root.requires_grad) return out;
    grad(loss.id())[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
    }
    for (Node& n : nodes_) {
      if (!n.is_leaf || !n.requires_grad) continue;
      if (n.grad.empty()) n.grad.assign(n.value.numel(), T{0});
      n.value.set_grad(n.grad);
      if (!n.name.empty()) out.emplace(n.name, BasicTensor<T>(n.value.shape(), n.grad));
    }
    return out;
  }

  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<T> grad;
    std::string name;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;
using GradMap = Tape::GradMap;

}  // namespace al
