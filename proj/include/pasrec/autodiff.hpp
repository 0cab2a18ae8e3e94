#pragma once

// Minimal reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation in creation order; backward() walks the
// record in reverse. Nodes that do not depend on a leaf created with
// Tape::leaf() carry no backward closure, so constant branches cost nothing
// on the way back.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace pasrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

}  // namespace pasrec

namespace pasrec::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& grad_out)>;

  /// When `record` is false every node is treated as a constant.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var leaf(Matrix value);

  /// Appends an op result. `backward` is kept only if a parent needs a gradient.
  Var emit(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var emit(Matrix value, std::span<const Var> parents, Backward backward);

  /// Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id())].requires_grad; }
  bool has_grad(Var v) const { return nodes_[static_cast<size_t>(v.id())].grad_ready; }
  /// Gradient of the last backward() root with respect to `v` (zeros if untouched).
  Matrix grad(Var v) const;

  void accumulate(Var v, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& g) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return;
    if (!n.grad_ready) {
      n.grad = g;
      n.grad_ready = true;
    } else {
      n.grad += g;
    }
  }

  const Matrix& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool grad_ready = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// ---- elementwise and shape ops -------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// ca * a + cb * b
Var lincomb(Var a, double ca, Var b, double cb);
Var hadamard(Var a, Var b);
/// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
/// x * w + b, with b a 1 x out row.
Var linear(Var x, Var w, Var b);
/// Exact (erf) GELU.
Var gelu(Var a);
Var log_sigmoid(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var gather_rows(Var table, std::span<const int> indices);
Var concat_cols(std::span<const Var> parts);
/// Row i scaled by coeff[i].
Var scale_rows(Var x, const Vector& coeff);
/// Row i is a[i] when keep[i] != 0, otherwise the single row `fallback`.
Var where_rows(std::span<const std::uint8_t> keep, Var a, Var fallback);

// ---- reductions ------------------------------------------------------------

/// n x 1 column of squared Euclidean row distances.
Var row_sq_dist(Var a, Var b);
/// n x 1 column of row-wise cosine similarities. Rows where either side has
/// (near) zero norm produce 0 and contribute no gradient; they are counted in
/// `degenerate` when given.
Var row_cosine(Var a, Var b, int* degenerate = nullptr);
Var sum_all(Var a);
Var mean_all(Var a);

}  // namespace pasrec::ad
