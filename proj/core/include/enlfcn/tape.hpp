#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "enlfcn/error.hpp"
#include "enlfcn/tensor.hpp"

namespace enlfcn {

using NodeId = std::size_t;

/// Parameter gradients keyed by the address of the parameter tensor.
template <typename T>
class Gradients {
 public:
  void set(const Tensor<T>* param, Tensor<T> grad) { grads_.insert_or_assign(param, std::move(grad)); }

  bool contains(const Tensor<T>& param) const { return grads_.count(&param) != 0; }

  /// Gradient of `param`, or zeros when the parameter never entered the tape.
  Tensor<T> of(const Tensor<T>& param) const {
    auto it = grads_.find(&param);
    return it == grads_.end() ? Tensor<T>(param.shape()) : it->second;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::map<const Tensor<T>*, Tensor<T>> grads_;
};

/// Records primitive applications for one forward evaluation and replays
/// them in reverse to accumulate gradients.
///
/// Node ids are assigned in recording order, which is a topological order,
/// so the reverse pass simply walks ids downward. Parameters are leaves
/// keyed by tensor address; registering the same tensor twice yields the
/// same node, which is how shared weights accumulate gradient from every use.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, NodeId)>;

  /// With recording disabled no backward closures are kept (inference mode).
  explicit Tape(bool record_backward = true) : record_backward_(record_backward) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  NodeId constant(Tensor<T> value) { return push(std::move(value), nullptr, {}); }

  NodeId parameter(const Tensor<T>& param) {
    auto it = param_nodes_.find(&param);
    if (it != param_nodes_.end()) return it->second;
    const NodeId id = push(Tensor<T>{}, &param, {});
    param_nodes_.emplace(&param, id);
    return id;
  }

  NodeId record(Tensor<T> value, BackwardFn backward) {
    return push(std::move(value), nullptr, record_backward_ ? std::move(backward) : BackwardFn{});
  }

  bool recording() const noexcept { return record_backward_; }

  const Tensor<T>& value(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.external != nullptr ? *n.external : n.value;
  }

  /// Mutable gradient accumulator for `id`, zero-initialised on first use.
  Tensor<T>& grad_buffer(NodeId id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(value(id).shape());
    return *n.grad;
  }

  /// Gradient reaching `id` during the last backward pass, if any.
  const Tensor<T>* grad(NodeId id) const {
    const Node& n = nodes_.at(id);
    return n.grad ? &*n.grad : nullptr;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Seeds d(loss)/d(output) = seed and runs the reverse pass once.
  Gradients<T> backward(NodeId output, const Tensor<T>& seed) {
    if (consumed_) throw UsageError("gradient tape already consumed by a previous backward pass");
    if (!record_backward_) throw UsageError("backward on a tape recorded without gradients");
    if (seed.shape() != value(output).shape()) {
      throw ConfigError("backward seed shape " + shape_to_string(seed.shape()) + " does not match output " +
                        shape_to_string(value(output).shape()));
    }
    consumed_ = true;
    grad_buffer(output) = seed;
    for (NodeId id = output + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad && n.backward) n.backward(*this, id);
    }
    Gradients<T> out;
    for (const auto& [param, id] : param_nodes_) {
      if (nodes_[id].grad) out.set(param, *nodes_[id].grad);
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    BackwardFn backward;
    std::optional<Tensor<T>> grad;
  };

  NodeId push(Tensor<T> value, const Tensor<T>* external, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), external, std::move(backward), std::nullopt});
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
  std::map<const Tensor<T>*, NodeId> param_nodes_;
  bool record_backward_ = true;
  bool consumed_ = false;
};

}  // namespace enlfcn
