// tape.hpp
// Reverse-mode differentiation on an explicit tape. Primitives compute
// their forward value eagerly at record time and register a
// vector-Jacobian rule; backward() walks the records in reverse and
// accumulates gradients into the leaf tensors.
//
// A tape is single-threaded during construction and backward. Distinct
// tapes may run on distinct threads.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "quiet/tensor.hpp"

namespace quiet::diff {

// Handle to a value recorded on a tape.
struct Value {
  std::uint32_t index = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records an external tensor. Gradients flow back into t.grad when the
  // tensor requires them. Repeated calls with the same tensor return the
  // same node.
  Value leaf(Tensor& t);

  Value constant(Shape shape, std::vector<double> v);
  Value constant(std::vector<double> v);  // 1-D
  Value scalar(double v);

  // Elementwise, equal shapes.
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value elementwise_mul(Value a, Value b);

  // (m x k)(k x n) -> (m x n), or (m x k)(k) -> (m).
  Value matmul(Value a, Value b);
  // Equal-length vectors -> scalar.
  Value dot(Value a, Value b);

  Value concat(const std::vector<Value>& parts);          // 1-D parts
  Value slice(Value a, std::size_t begin, std::size_t end);  // 1-D

  Value tanh(Value a);
  Value sigmoid(Value a);
  // Rows of a 2-D tensor; a 1-D tensor is one row.
  Value softmax(Value a);
  // Input clamped at 1e-12 inside the logarithm.
  Value natural_log(Value a);
  // sqrt(max(x, 0)); the derivative clamps its input at 1e-12 so the
  // slope stays finite at zero.
  Value sqrt(Value a);
  Value square(Value a);
  // sqrt(x^2 + eps^2), eps = 1e-8; differentiable surrogate for |x|.
  Value abs_smooth(Value a);
  // x / max(||x||, 1e-12).
  Value l2_normalize(Value a);
  // Per-row l2_normalize of a 2-D tensor.
  Value rows_l2_normalize(Value a);
  Value cos(Value a);
  Value sin(Value a);
  // Multiplies by a fixed mask recorded with the node (inverted-dropout
  // masks are built by the caller).
  Value dropout_mask_apply(Value a, const std::vector<double>& mask);
  Value sum(Value a);                // -> scalar
  Value scale(Value a, Value s);     // s is a scalar node; gradients reach both
  Value scale_const(Value a, double c);
  Value diagonal(Value a);           // square 2-D -> 1-D
  Value reshape(Value a, Shape s);

  std::span<const double> values(Value v) const;
  std::vector<double> values_copy(Value v) const;
  const Shape& shape(Value v) const;
  double scalar_value(Value v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Gradient buffer of a node, valid after backward().
  std::span<const double> gradient(Value v) const;

  // Seeds d(loss) = 1 and accumulates d(loss)/d(leaf) into every
  // requires_grad leaf tensor, in reverse record order.
  void backward(Value loss);

  // Test hook: corrupts the tanh backward rule so a gradient checker can
  // prove it detects broken vjps.
  static void set_backward_sabotage(bool on);

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    // Pulls from this node's grad into its inputs' grads.
    std::function<void(Tape&, const Node&)> vjp;
    Tensor* source = nullptr;
  };

  Value push(Shape shape, std::vector<double> val);
  Node& node(Value v) { return nodes_[v.index]; }
  const Node& node(Value v) const { return nodes_[v.index]; }
  Node& node(std::uint32_t i) { return nodes_[i]; }

  void check_same_shape(Value a, Value b, const char* op) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, Value> leaf_cache_;
};

}  // namespace quiet::diff
