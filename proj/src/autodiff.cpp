#include "pasrec/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pasrec::ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("variables live on different tapes");
}

}  // namespace

const Matrix& Var::value() const {
  if (tape_ == nullptr) throw std::logic_error("use of an unbound ad::Var");
  return tape_->value_of(id_);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, record_, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::emit(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return emit(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::emit(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) {
      if (p.tape() != this) throw std::invalid_argument("parent variable from another tape");
      needs = needs || requires_grad(p);
    }
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Matrix& g) { accumulate_expr(v, g); }

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<size_t>(v.id())];
  if (n.grad_ready) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("backward: root from another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("backward: root must be 1x1");
  for (Node& n : nodes_) {
    n.grad_ready = false;
    n.grad.resize(0, 0);
  }
  Node& r = nodes_[static_cast<size_t>(root.id())];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  r.grad_ready = true;
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad_ready || !n.backward) continue;
    n.backward(n.grad);
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  Tape* t = a.tape();
  return t->emit(a.value() + b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  Tape* t = a.tape();
  return t->emit(a.value() - b.value(), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate_expr(b, -g);
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape();
  return t->emit(a.value() * s, {a}, [t, a, s](const Matrix& g) { t->accumulate_expr(a, g * s); });
}

Var lincomb(Var a, double ca, Var b, double cb) {
  require_same_tape(a, b);
  require_same_shape(a, b, "lincomb");
  Tape* t = a.tape();
  return t->emit(ca * a.value() + cb * b.value(), {a, b}, [t, a, b, ca, cb](const Matrix& g) {
    t->accumulate_expr(a, g * ca);
    t->accumulate_expr(b, g * cb);
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "hadamard");
  Tape* t = a.tape();
  return t->emit(a.value().cwiseProduct(b.value()), {a, b}, [t, a, b](const Matrix& g) {
    t->accumulate_expr(a, g.cwiseProduct(b.value()));
    t->accumulate_expr(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
  Tape* t = a.tape();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t->emit(std::move(out), {a, row}, [t, a, row](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate_expr(row, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Tape* t = a.tape();
  return t->emit(a.value() * b.value(), {a, b}, [t, a, b](const Matrix& g) {
    if (t->requires_grad(a)) t->accumulate_expr(a, g * b.value().transpose());
    if (t->requires_grad(b)) t->accumulate_expr(b, a.value().transpose() * g);
  });
}

Var linear(Var x, Var w, Var b) {
  require_same_tape(x, w);
  require_same_tape(x, b);
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  Tape* t = x.tape();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return t->emit(std::move(out), {x, w, b}, [t, x, w, b](const Matrix& g) {
    if (t->requires_grad(x)) t->accumulate_expr(x, g * w.value().transpose());
    if (t->requires_grad(w)) t->accumulate_expr(w, x.value().transpose() * g);
    if (t->requires_grad(b)) t->accumulate_expr(b, g.colwise().sum());
  });
}

Var gelu(Var a) {
  Tape* t = a.tape();
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return t->emit(std::move(out), {a}, [t, a, inv_sqrt2](const Matrix& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = a.value().unaryExpr([inv_sqrt2, inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    t->accumulate_expr(a, g.cwiseProduct(d));
  });
}

Var log_sigmoid(Var a) {
  Tape* t = a.tape();
  // log sigma(x) = -softplus(-x), evaluated stably on both tails.
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  });
  return t->emit(std::move(out), {a}, [t, a](const Matrix& g) {
    Matrix d = a.value().unaryExpr([](double x) {
      // d/dx log sigma(x) = 1 - sigma(x) = sigma(-x)
      return x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
    });
    t->accumulate_expr(a, g.cwiseProduct(d));
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c || bias.rows() != 1 || bias.cols() != c) {
    throw std::invalid_argument("layer_norm: gain/bias shape mismatch");
  }
  Tape* t = x.tape();
  const Matrix& xv = x.value();
  Matrix xhat(n, c);
  Vector inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std[i];
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t->emit(std::move(out), {x, gain, bias},
                 [t, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                     const Matrix& g) {
                   const Eigen::Index cols = xhat.cols();
                   if (t->requires_grad(gain)) {
                     t->accumulate_expr(gain, (g.cwiseProduct(xhat)).colwise().sum());
                   }
                   if (t->requires_grad(bias)) t->accumulate_expr(bias, g.colwise().sum());
                   if (t->requires_grad(x)) {
                     Matrix dxhat = g;
                     dxhat.array().rowwise() *= gain.value().row(0).array();
                     Matrix dx(xhat.rows(), cols);
                     for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                       const double mean_d = dxhat.row(i).mean();
                       const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / static_cast<double>(cols);
                       dx.row(i) = inv_std[i] * (dxhat.row(i).array() - mean_d -
                                                 xhat.row(i).array() * mean_dx);
                     }
                     t->accumulate(x, dx);
                   }
                 });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Tape* t = table.tape();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(indices.size()), tv.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= tv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) +
                              " outside table of " + std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t->emit(std::move(out), {table}, [t, table, idx = std::move(idx)](const Matrix& g) {
    Matrix d = Matrix::Zero(table.rows(), table.cols());
    for (size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t->accumulate(table, d);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape* t = parts.front().tape();
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.rows() != n) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
  }
  Matrix out(n, total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t->emit(std::move(out), parts, [t, saved](const Matrix& g) {
    Eigen::Index o = 0;
    for (const Var& p : saved) {
      if (t->requires_grad(p)) t->accumulate_expr(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

Var scale_rows(Var x, const Vector& coeff) {
  if (coeff.size() != x.rows()) throw std::invalid_argument("scale_rows: coefficient count mismatch");
  Tape* t = x.tape();
  Matrix out = coeff.asDiagonal() * x.value();
  return t->emit(std::move(out), {x},
                 [t, x, coeff](const Matrix& g) { t->accumulate_expr(x, coeff.asDiagonal() * g); });
}

Var where_rows(std::span<const std::uint8_t> keep, Var a, Var fallback) {
  require_same_tape(a, fallback);
  if (static_cast<Eigen::Index>(keep.size()) != a.rows() || fallback.rows() != 1 ||
      fallback.cols() != a.cols()) {
    throw std::invalid_argument("where_rows: shape mismatch");
  }
  Tape* t = a.tape();
  Matrix out = a.value();
  for (size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) out.row(static_cast<Eigen::Index>(i)) = fallback.value().row(0);
  }
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  return t->emit(std::move(out), {a, fallback}, [t, a, fallback, k = std::move(k)](const Matrix& g) {
    Matrix da = g;
    RowVector df = RowVector::Zero(g.cols());
    for (size_t i = 0; i < k.size(); ++i) {
      if (!k[i]) {
        df += g.row(static_cast<Eigen::Index>(i));
        da.row(static_cast<Eigen::Index>(i)).setZero();
      }
    }
    t->accumulate(a, da);
    t->accumulate_expr(fallback, df);
  });
}

Var row_sq_dist(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "row_sq_dist");
  Tape* t = a.tape();
  Matrix diff = a.value() - b.value();
  Matrix out = diff.rowwise().squaredNorm();
  return t->emit(std::move(out), {a, b}, [t, a, b, diff = std::move(diff)](const Matrix& g) {
    Matrix d = 2.0 * (g.col(0).asDiagonal() * diff);
    t->accumulate(a, d);
    t->accumulate_expr(b, -d);
  });
}

Var row_cosine(Var a, Var b, int* degenerate) {
  require_same_tape(a, b);
  require_same_shape(a, b, "row_cosine");
  Tape* t = a.tape();
  constexpr double kTiny = 1e-12;
  const Eigen::Index n = a.rows();
  Matrix out(n, 1);
  Vector na(n), nb(n);
  std::vector<std::uint8_t> ok(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    na[i] = a.value().row(i).norm();
    nb[i] = b.value().row(i).norm();
    ok[static_cast<size_t>(i)] = na[i] > kTiny && nb[i] > kTiny;
    if (ok[static_cast<size_t>(i)]) {
      out(i, 0) = a.value().row(i).dot(b.value().row(i)) / (na[i] * nb[i]);
    } else {
      out(i, 0) = 0.0;
      if (degenerate) ++*degenerate;
    }
  }
  Matrix cos = out;
  return t->emit(std::move(out), {a, b},
                 [t, a, b, na = std::move(na), nb = std::move(nb), ok = std::move(ok),
                  cos = std::move(cos)](const Matrix& g) {
                   Matrix da = Matrix::Zero(a.rows(), a.cols());
                   Matrix db = Matrix::Zero(b.rows(), b.cols());
                   for (Eigen::Index i = 0; i < a.rows(); ++i) {
                     if (!ok[static_cast<size_t>(i)]) continue;
                     const double s = g(i, 0);
                     const double c = cos(i, 0);
                     da.row(i) = s * (b.value().row(i) / (na[i] * nb[i]) -
                                      c * a.value().row(i) / (na[i] * na[i]));
                     db.row(i) = s * (a.value().row(i) / (na[i] * nb[i]) -
                                      c * b.value().row(i) / (nb[i] * nb[i]));
                   }
                   t->accumulate(a, da);
                   t->accumulate(b, db);
                 });
}

Var sum_all(Var a) {
  Tape* t = a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t->emit(std::move(out), {a}, [t, a](const Matrix& g) {
    t->accumulate_expr(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.rows() * a.cols());
  if (n == 0) throw std::invalid_argument("mean_all: empty input");
  return scale(sum_all(a), 1.0 / n);
}

}  // namespace pasrec::ad
