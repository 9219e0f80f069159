#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "swinlip/tensor.hpp"

namespace swinlip {

/// Reverse-mode differentiation record. Nodes are appended in creation order,
/// which is a topological order because every op records after its inputs.
/// Tensors keep a raw pointer to their tape, so the tape must outlive them
/// and is neither copyable nor movable.
template <class T>
class Tape {
 public:
  // Receives the gradient of the node's output; pushes gradients into inputs
  // via accumulate().
  using Backward = std::function<void(const Tensor<T>& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers x as a leaf. The returned tensor shares x's buffer.
  Tensor<T> watch(const Tensor<T>& x, bool trainable = true) {
    if (x.on_tape())
      throw TapeError("tensor already participates in a tape");
    Tensor<T> out = x;
    attach(out, Node{"leaf", x.shape(), {}, {}, true, trainable});
    return out;
  }

  Tensor<T> record(Tensor<T> out, std::string op,
                   std::vector<std::size_t> inputs, Backward fn) {
    if (backward_done_)
      throw TapeError("cannot record '" + op + "' after backward()");
    out.tape_ = nullptr;
    attach(out, Node{std::move(op), out.shape(), std::move(inputs),
                     std::move(fn), false, false});
    return out;
  }

  // Adds g into the gradient slot of x. Tensors not on this tape are ignored
  // (constants).
  void accumulate(const Tensor<T>& x, const Tensor<T>& g) {
    if (x.tape() != this) return;
    if (g.shape() != x.shape())
      throw DimensionError("gradient shape " + to_string(g.shape()) +
                           " does not match " + to_string(x.shape()) +
                           " for op '" + nodes_[x.node()].op + "'");
    auto& slot = grads_[x.node()];
    if (!slot) {
      slot = g.detached();
      return;
    }
    if (slot->same_buffer(g) || !owned_[x.node()]) {
      slot = slot->clone();
      owned_[x.node()] = true;
    }
    auto dst = slot->mutable_data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(const Tensor<T>& loss) {
    if (backward_done_)
      throw TapeError("backward() called twice without reset()");
    if (loss.tape() != this)
      throw TapeError("loss is not on this tape");
    if (loss.size() != 1)
      throw TapeError("backward() needs a scalar loss, got shape " +
                      to_string(loss.shape()));
    backward_done_ = true;
    grads_[loss.node()] = Tensor<T>(loss.shape(), T(1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (!grads_[i] || nodes_[i].leaf) continue;
      nodes_[i].fn(*grads_[i], *this);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].trainable && !grads_[i])
        grads_[i] = Tensor<T>(nodes_[i].shape, T(0));
  }

  bool has_grad(const Tensor<T>& x) const {
    return x.tape() == this && grads_[x.node()].has_value();
  }

  const Tensor<T>& grad(const Tensor<T>& x) const {
    if (x.tape() != this) throw TapeError("tensor not on this tape");
    if (!grads_[x.node()])
      throw TapeError("no gradient for node '" + nodes_[x.node()].op + "'");
    return *grads_[x.node()];
  }

  // Drops all gradients so backward() may run again on the same graph.
  void reset() {
    for (auto& g : grads_) g.reset();
    std::fill(owned_.begin(), owned_.end(), false);
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t node) const { return nodes_[node].op; }

 private:
  struct Node {
    std::string op;
    Shape shape;
    std::vector<std::size_t> inputs;
    Backward fn;
    bool leaf;
    bool trainable;
  };

  void attach(Tensor<T>& t, Node node) {
    t.tape_ = this;
    t.node_ = nodes_.size();
    nodes_.push_back(std::move(node));
    grads_.emplace_back();
    owned_.push_back(false);
  }

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
  std::vector<bool> owned_;
  bool backward_done_ = false;
};

namespace detail {

// The tape shared by the given inputs, or nullptr when none is taped.
template <class T, class... Ts>
Tape<T>* common_tape(const Tensor<T>& first, const Ts&... rest) {
  Tape<T>* tape = first.tape();
  auto merge = [&](const Tensor<T>& t) {
    if (!t.tape()) return;
    if (tape && tape != t.tape())
      throw TapeError("inputs belong to different tapes");
    tape = t.tape();
  };
  (merge(rest), ...);
  return tape;
}

}  // namespace detail
}  // namespace swinlip
