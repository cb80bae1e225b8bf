#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "foogd/tensor.hpp"

namespace foogd {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t idx = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const;
};

/// Custom differentiable primitive: a forward function and a backward
/// function returning one gradient tensor per input (empty tensor for
/// inputs that need none).
struct CustomPrimitive {
  std::string name;
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<std::vector<Tensor>(const Tensor& upstream,
                                    const std::vector<Tensor>& inputs,
                                    const Tensor& output)>
      backward;
};

CustomPrimitive register_custom_primitive(
    std::string name,
    std::function<Tensor(const std::vector<Tensor>&)> forward,
    std::function<std::vector<Tensor>(const Tensor&, const std::vector<Tensor>&,
                                      const Tensor&)>
        backward);

/// Append-only record of forward operations; nodes are in topological order
/// by construction. Gradients are computed by a reverse sweep.
class Tape {
 public:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::size_t> parents;
    // Accumulates into parent grads given this node's grad.
    std::function<void(Tape&, const Node&)> backward;
  };

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Node& node(std::size_t i) { return nodes_[i]; }
  const Node& node(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar output. Gradients of unreachable
  /// requires_grad leaves are zero.
  void backward(Var output);

  /// Gradient of the last backward() output w.r.t. v (zeros if untouched).
  Tensor grad(Var v) const;

  void accumulate(std::size_t idx, const Tensor& g);

  Var append(Tensor value, std::vector<std::size_t> parents,
             std::function<void(Tape&, const Node&)> backward);

 private:
  std::vector<Node> nodes_;
};

// ---- primitive ops ----
// Elementwise ops require equal shapes, except add/sub/mul also accept a
// right operand whose shape equals the left's trailing dims (broadcast over
// the leading batch axis).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var matmul(Var a, Var b);
Var relu(Var a);
Var tanh_op(Var a);
Var exp_op(Var a);
Var square(Var a);
Var sqrt_op(Var a);
Var sum(Var a);              // all elements -> scalar
Var mean(Var a);             // all elements -> scalar
Var scale(Var a, double c);  // constant scalar multiply
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t lo, std::size_t hi);  // [lo, hi)
Var l2_norm_rows(Var a);     // [B,d] -> [B,1]
Var softmax_rows(Var a);
Var custom_op(const CustomPrimitive& prim, std::vector<Var> inputs);

/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(Var logits, const std::vector<std::size_t>& labels);

// ---- plain-tensor helpers (no tape) ----
Tensor matmul_value(const Tensor& a, const Tensor& b);
Tensor softmax_rows_value(const Tensor& a);

}  // namespace foogd
