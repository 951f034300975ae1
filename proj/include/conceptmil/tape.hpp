#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "conceptmil/matrix.hpp"

namespace conceptmil {

// Which slices of a matrix a softmax normalizes: Axis::cols means every
// column sums to 1, Axis::rows means every row does.
enum class Axis { rows, cols };

// Handle to a node on a Tape. Only valid for the tape that produced it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Records a forward computation over matrices and replays it in reverse to
// accumulate gradients into parameter leaves. Nodes are appended in
// topological order, so the backward sweep visits each node exactly once.
// One tape per training step; backward() may run once per tape.
class Tape {
 public:
  Var constant(Matrix value);  // leaf, never receives gradients
  Var param(Matrix value);     // learnable leaf

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var scale(Var a, double factor);
  Var mean_rows(Var a);  // r x c -> 1 x c
  Var softmax(Var a, Axis axis, double scale);
  Var l2_normalize_rows(Var a);
  Var leaky_relu(Var a, double slope);
  Var cosine(Var u, Var v);  // vectors of equal shape -> 1 x 1
  Var concat_rows(std::span<const Var> parts);
  Var log_clamped(Var a, double floor = 1e-12);
  Var select(Var a, std::size_t r, std::size_t c);  // -> 1 x 1

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;

  // Reverse sweep from a scalar loss. Throws ContractError for a non-scalar
  // loss or when called twice on the same tape.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }

  // Gradient of the loss w.r.t. a learnable node; zero matrix when the node
  // did not participate in the loss. Throws ContractError before backward()
  // or for nodes that do not require gradients.
  Matrix grad(Var v) const;
  bool has_grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    kConstant,
    kParam,
    kMatmul,
    kTranspose,
    kAdd,
    kScale,
    kMeanRows,
    kSoftmax,
    kL2NormalizeRows,
    kLeakyRelu,
    kCosine,
    kConcatRows,
    kLogClamped,
    kSelect,
  };

  struct Node {
    Op op;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::vector<std::size_t> inputs;
    double p0 = 0.0;  // scale factor / slope / clamp floor
    Axis axis = Axis::rows;
    std::size_t sel_r = 0, sel_c = 0;
  };

  Var push(Node node);
  const Node& at(Var v) const;
  Matrix& grad_buffer(std::size_t id);
  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace conceptmil
