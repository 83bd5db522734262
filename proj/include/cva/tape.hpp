#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "cva/tensor.hpp"

namespace cva::ad {

/// Closed primitive set. Every model equation is composed from these.
enum class Op : std::uint8_t {
  Leaf,
  Affine,
  Outer,
  Tanh,
  Sigmoid,
  Mul,
  Add,
  OneMinus,
  AddRow,
  MulRow,
  ScaleRows,
  AddScalar,
  Softmax,
  MeanRows,
  WeightedSumRows,
  Embed,
  CrossEntropy,
  Sum,
  MaskMul,
};

const char* op_name(Op op);

class Tape;

/// Handle to a node recorded on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Record-and-replay reverse mode. One tape per forward pass; single writer.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient; the tape owns the value.
  Var variable(Tensor value);
  /// Leaf that receives a gradient and refers to `value` without copying.
  /// `value` must outlive the tape.
  Var parameter(const Tensor& value);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward pass. Zero tensor for nodes off the loss path.
  const Tensor& grad(Var v) const;

  /// Reverse sweep from a scalar loss. Gradient buffers are re-zeroed first.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  friend struct Recorder;

  struct Node {
    Op op = Op::Leaf;
    std::uint8_t n_in = 0;
    bool requires_grad = false;
    std::array<std::uint32_t, 3> in{};
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor aux;
    double scale = 0.0;
    std::size_t index = 0;
  };

  Var push(Node node);
  const Tensor& node_value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  void backprop_node(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  Tensor zero_scalar_;
};

// Primitive operations. All operands must live on the same tape.

/// W x + b; with a matrix x (K x n) the map is applied to every row. `b` optional.
Var affine(Var W, Var x, std::optional<Var> b = std::nullopt);
Var outer(Var a, Var b);
Var tanh(Var x);
Var sigmoid(Var x);
Var mul(Var a, Var b);
Var add(Var a, Var b);
Var one_minus(Var x);
/// Row-wise broadcast add: out[k] = M[k] + v.
Var add_row(Var m, Var v);
/// Row-wise broadcast multiply: out[k][d] = M[k][d] * v[d].
Var mul_row(Var m, Var v);
/// out[k] = w[k] * M[k].
Var scale_rows(Var m, Var w);
/// x + s for a scalar node s.
Var add_scalar(Var x, Var s);
Var softmax(Var x);
Var mean_rows(Var m);
/// scale * sum_k w[k] * M[k].
Var weighted_sum_rows(Var w, Var m, double scale);
/// Row `index` of the table.
Var embed(Var table, std::size_t index);
/// -log softmax(logits)[label], computed with log-sum-exp.
Var cross_entropy(Var logits, std::size_t label);
Var sum(Var x);
/// x * mask elementwise; the mask is a constant.
Var mask_mul(Var x, Tensor mask);

namespace testing {
/// Scales the backward rule of `op` by `factor` (1.0 restores). Negative-control
/// hook for gradient-check tests; process-global, not thread-safe.
void corrupt_backward(Op op, double factor);
void reset_backward_faults();
}  // namespace testing

}  // namespace cva::ad
