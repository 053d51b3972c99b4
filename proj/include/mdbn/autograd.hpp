#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mdbn/tensor.hpp"

namespace mdbn {

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape;

// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

// Dynamically recorded computation graph for reverse-mode differentiation.
// Nodes are appended in execution order, so the node list is already a
// topological order. Single-threaded; ops parallelize internally.
template <typename T>
class Tape {
 public:
  // Fills grad_inputs[i] for every i with needs[i] set. Entries left empty are
  // treated as zero.
  using BackwardFn = std::function<void(const Tape& tape, const Tensor<T>& grad_out,
                                        std::span<const bool> needs,
                                        std::span<Tensor<T>> grad_inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var<T>{this, nodes_.size() - 1};
  }
  Var<T> parameter(Tensor<T> value) { return leaf(std::move(value), true); }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool rg = false;
    for (std::size_t in : inputs) {
      if (in >= nodes_.size()) throw AutogradError("tape input recorded out of order");
      rg = rg || nodes_[in].requires_grad;
    }
    if (!rg) backward = nullptr;
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), rg});
    return Var<T>{this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(Var<T> loss) {
    if (loss.tape != this) throw AutogradError("loss belongs to a different tape");
    if (consumed_) throw AutogradError("backward called twice on a consumed tape");
    const Tensor<T>& lv = value(loss.id);
    if (lv.numel() != 1 || lv.rank() > 1) {
      throw AutogradError("backward requires a scalar loss, got shape " +
                          shape_to_string(lv.shape()));
    }
    consumed_ = true;
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.id] = Tensor<T>(lv.shape(), T{1});

    std::vector<Tensor<T>> grad_in;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads_[i] || !node.backward) continue;
      const std::size_t k = node.inputs.size();
      grad_in.assign(k, Tensor<T>{});
      auto needs = std::make_unique<bool[]>(k);
      for (std::size_t j = 0; j < k; ++j) needs[j] = nodes_[node.inputs[j]].requires_grad;
      node.backward(*this, *grads_[i], std::span<const bool>(needs.get(), k), grad_in);
      for (std::size_t j = 0; j < k; ++j) {
        if (!needs[j] || grad_in[j].empty()) continue;
        accumulate(node.inputs[j], std::move(grad_in[j]));
      }
      // Interior gradients are no longer needed once propagated.
      if (!node.inputs.empty()) grads_[i].reset();
    }
  }

  bool has_grad(Var<T> v) const { return v.id < grads_.size() && grads_[v.id].has_value(); }

  const Tensor<T>& grad(Var<T> v) const {
    if (!has_grad(v)) throw AutogradError("no gradient recorded for tape node");
    return *grads_[v.id];
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void accumulate(std::size_t id, Tensor<T> g) {
    require_same_shape(g.shape(), nodes_[id].value.shape(), "gradient accumulation");
    if (!grads_[id]) {
      grads_[id] = std::move(g);
      return;
    }
    auto dst = grads_[id]->data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> grads_;
  bool consumed_ = false;
};

// Element-wise and reduction ops. Shapes must match exactly; no broadcasting.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> sum(Var<T> a);
// Mean over all elements of |a - b|; the subgradient at a tie is zero.
template <typename T>
Var<T> mean_abs_error(Var<T> a, Var<T> b);

// Tensor-level kernels shared by the eager and taped paths.
template <typename T>
Tensor<T> add_values(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
double mean_abs_error_value(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace mdbn
