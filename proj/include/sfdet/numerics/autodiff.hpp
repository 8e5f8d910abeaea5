#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sfdet/numerics/matrix.hpp"

namespace sfdet::ad {

class Tape;

/// Handle to one node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Receives the gradient of the loss w.r.t. the node's output and accumulates
/// into its inputs via Tape::accumulate.
using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

/// Records matrix-level operations in creation order, which is a topological
/// order. Nodes that do not depend on any parameter keep no backward closure,
/// so a tape built from constants only doubles as a no-grad evaluator.
class Tape {
 public:
  Var constant(Matrix value);
  Var parameter(Matrix value);

  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v was unreached.
  Matrix grad(Var v) const;

  /// Adds g into the gradient slot of v (no-op when v needs no gradient).
  void accumulate(Var v, const Matrix& g);

  /// Reverse sweep from a 1×1 loss; visits every recorded node once.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t nodes_visited() const noexcept { return visited_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  std::size_t visited_ = 0;
};

// Differentiable operations. All inputs must live on the same tape.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a·bᵀ
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var scale_by(Var a, Var s);  // s is 1×1
Var add_row(Var a, Var bias);  // bias is 1×cols, broadcast over rows
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
Var vstack(Var top, Var bottom);
Var gather_rows(Var a, std::span<const std::size_t> indices);
Var sum(Var a);
Var square(Var a);
Var log(Var a);  // elementwise natural log of positive entries

/// Rank-r truncated SVD reconstruction with the exact derivative of the
/// top-r projector (requires σ_r > σ_{r+1} for a well-defined gradient).
Var truncated_reconstruct(Var a, std::size_t r);

// Gradient checking against central finite differences.

using ScalarFn = std::function<Var(Tape&, std::span<const Var> params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Max over every entry of |a − n| / max(floor, |a|, |n|) for analytic a and
/// central difference n. Entries below `floor` are effectively compared in
/// absolute terms, where finite-difference round-off dominates.
GradCheckReport grad_check_report(const ScalarFn& f, std::span<const Matrix> params, double h, double floor = 1e-6);
double grad_check(const ScalarFn& f, std::span<const Matrix> params, double h, double floor = 1e-6);

}  // namespace sfdet::ad
