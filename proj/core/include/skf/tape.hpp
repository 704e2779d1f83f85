#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "skf/tensor.hpp"

namespace skf {

/// Reverse-mode gradient tape. Operations append a node per output while a
/// tape is active on the current thread; backward() replays the nodes in
/// reverse and accumulates gradients into every node, including the watched
/// leaves. A tape has a single writer; run one tape per batch shard.
template <class T>
class Tape {
public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  ~Tape() {
    for (Tensor<T>* leaf : watched_) {
      if (leaf) leaf->grad_id = -1;
    }
    if (current_ == this) current_ = nullptr;
  }

  /// Marks a tensor as a trainable leaf. The tensor must outlive the tape;
  /// its grad_id is reset when the tape is destroyed.
  int watch(Tensor<T>& leaf) {
    leaf.grad_id = record(leaf.shape(), {}, BackwardFn{});
    watched_.push_back(&leaf);
    return leaf.grad_id;
  }

  int record(Shape out_shape, std::vector<int> parents, BackwardFn fn) {
    nodes_.push_back(Node{std::move(out_shape), std::move(parents), std::move(fn)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  void accumulate(int node, const Tensor<T>& g) {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) {
      throw Error("tape node id out of range");
    }
    if (g.shape() != nodes_[node].shape) {
      throw Error("gradient shape " + shape_str(g.shape()) +
                  " does not match node shape " +
                  shape_str(nodes_[node].shape));
    }
    auto& slot = grads_[node];
    if (!slot) {
      slot = g.clone();
      return;
    }
    T* acc = slot->mutable_data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += src[i];
  }

  std::size_t node_count() const { return nodes_.size(); }

  static Tape* current() { return current_; }

  /// Runs the reverse sweep from a scalar loss. Recording is suspended while
  /// the node closures execute so their internal tensor math stays off tape.
  void backward_from(const Tensor<T>& loss) {
    if (loss.grad_id < 0) {
      throw Error("backward: loss is not connected to this tape");
    }
    if (loss.size() != 1) {
      throw Error("backward: loss must be scalar, shape is " +
                  shape_str(loss.shape()));
    }
    Tape* saved = current_;
    current_ = nullptr;
    grads_[loss.grad_id] = Tensor<T>::full(nodes_[loss.grad_id].shape, T(1));
    for (int i = loss.grad_id; i >= 0; --i) {
      if (!grads_[i] || !nodes_[i].backward) continue;
      nodes_[i].backward(*grads_[i], *this);
    }
    current_ = saved;
  }

  const Tensor<T>* grad(int node) const {
    if (node < 0 || node >= static_cast<int>(grads_.size())) return nullptr;
    return grads_[node] ? &*grads_[node] : nullptr;
  }

  class Scope {
  public:
    explicit Scope(Tape& tape) : saved_(current_) { current_ = &tape; }
    ~Scope() { current_ = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

  private:
    Tape* saved_;
  };

private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
  std::vector<Tensor<T>*> watched_;
  inline static thread_local Tape* current_ = nullptr;
};

/// Gradient view returned by backward(); resolves leaves by their grad_id.
template <class T>
class Gradients {
public:
  explicit Gradients(const Tape<T>* tape) : tape_(tape) {}

  const Tensor<T>* find(const Tensor<T>& leaf) const {
    return tape_->grad(leaf.grad_id);
  }

  const Tensor<T>& at(const Tensor<T>& leaf) const {
    const Tensor<T>* g = find(leaf);
    if (!g) throw Error("no gradient recorded for the given tensor");
    return *g;
  }

private:
  const Tape<T>* tape_;
};

template <class T>
Gradients<T> backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.backward_from(loss);
  return Gradients<T>(&tape);
}

}  // namespace skf
