#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "kpdiff/error.hpp"
#include "kpdiff/losses.hpp"
#include "kpdiff/nn_search.hpp"

// Matrix-valued reverse-mode differentiation. A Tape records every operation
// in creation order, which is a topological order of the graph; backward()
// walks it once in reverse.
namespace kpdiff::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Var leaf(Matrix v, bool requires_grad = true) { return push(std::move(v), requires_grad, nullptr); }
  Var constant(Matrix v) { return push(std::move(v), false, nullptr); }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient of the last backward() output with respect to `v` (zeros if unreached).
  Matrix grad(Var v) const {
    const auto& n = nodes_[v.id];
    return n.has_grad ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols());
  }

  std::size_t size() const { return nodes_.size(); }

  /// Non-smooth ops fold their discrete choices (masks, argmax, matches) in here.
  void note_branch(std::uint64_t v) { branches_ = (branches_ ^ v) * 0x100000001b3ULL; }
  std::uint64_t branches() const { return branches_; }

  /// Record an op result. The backward closure runs only if an input needs gradients.
  Var push(Matrix v, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{std::move(v), Matrix(), requires_grad, false, requires_grad ? std::move(fn) : nullptr});
    return Var{this, nodes_.size() - 1};
  }

  /// Attach a closure after the node exists, for ops whose gradient reads their own output.
  void set_backward(Var v, Backward fn) {
    if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
  }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates to every leaf.
  void backward(Var out) {
    if (out.rows() != 1 || out.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "backward needs a scalar output");
    for (auto& n : nodes_) {
      n.has_grad = false;
      n.grad.resize(0, 0);
    }
    accumulate(out.id, Matrix::Constant(1, 1, 1.0));
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      // The closure may touch other nodes; copy the gradient out first.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad;
    bool has_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t branches_ = 0xcbf29ce484222325ULL;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {
inline void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": operand shapes differ");
  }
}
inline bool any_grad(std::initializer_list<Var> vs) {
  for (auto v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}
}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), detail::any_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), detail::any_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::same_shape(a, b, "mul");
  const auto ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

inline Var scale(Var a, double c) {
  const auto ia = a.id;
  return a.tape->push(c * a.value(), detail::any_grad({a}), [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, c * g); });
}

inline Var add_scalar(Var a, double c) {
  const auto ia = a.id;
  return a.tape->push(a.value().array() + c, detail::any_grad({a}), [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

/// a (R x C) + row (1 x C) broadcast over rows.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "add_row: need 1 x C row");
  const auto ia = a.id, ir = row.id;
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(v), detail::any_grad({a, row}), [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

/// a (R x C) * row (1 x C) broadcast over rows, elementwise.
inline Var mul_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorCode::ShapeMismatch, "mul_row: need 1 x C row");
  const auto ia = a.id, ir = row.id;
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->push(std::move(v), detail::any_grad({a, row}), [ia, ir](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
    if (t.requires_grad(ir)) t.accumulate(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
  });
}

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul: inner dimensions differ");
  const auto ia = a.id, ib = b.id;
  Matrix v;
  v.noalias() = a.value() * b.value();
  return a.tape->push(std::move(v), detail::any_grad({a, b}), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix ga;
      ga.noalias() = g * t.value(ib).transpose();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Matrix gb;
      gb.noalias() = t.value(ia).transpose() * g;
      t.accumulate(ib, gb);
    }
  });
}

inline Var transpose(Var a) {
  const auto ia = a.id;
  return a.tape->push(a.value().transpose(), detail::any_grad({a}),
                      [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

inline Var relu(Var a) {
  const auto ia = a.id;
  for (Eigen::Index i = 0; i < a.value().size(); ++i) a.tape->note_branch(a.value().data()[i] > 0.0);
  return a.tape->push(a.value().cwiseMax(0.0), detail::any_grad({a}), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, (t.value(ia).array() > 0.0).select(g, 0.0));
  });
}

inline Var sin(Var a) {
  const auto ia = a.id;
  return a.tape->push(a.value().array().sin().matrix(), detail::any_grad({a}), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).array().cos().matrix()));
  });
}

inline Var cos(Var a) {
  const auto ia = a.id;
  return a.tape->push(a.value().array().cos().matrix(), detail::any_grad({a}), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, -g.cwiseProduct(t.value(ia).array().sin().matrix()));
  });
}

inline Var exp(Var a) {
  const auto ia = a.id;
  Var out = a.tape->push(a.value().array().exp().matrix(), detail::any_grad({a}), nullptr);
  const auto io = out.id;
  out.tape->set_backward(out, [ia, io](Tape& t, const Matrix& g) { t.accumulate(ia, g.cwiseProduct(t.value(io))); });
  return out;
}

inline Var log(Var a) {
  const auto ia = a.id;
  return a.tape->push(a.value().array().log().matrix(), detail::any_grad({a}), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseQuotient(t.value(ia)));
  });
}

/// Clamp elementwise; the gradient passes only where the input is strictly inside.
inline Var clamp(Var a, double lo, double hi) {
  const auto ia = a.id;
  for (Eigen::Index i = 0; i < a.value().size(); ++i) {
    const double x = a.value().data()[i];
    a.tape->note_branch(x <= lo ? 0 : x >= hi ? 2 : 1);
  }
  return a.tape->push(a.value().cwiseMax(lo).cwiseMin(hi), detail::any_grad({a}), [ia, lo, hi](Tape& t, const Matrix& g) {
    const auto& x = t.value(ia).array();
    t.accumulate(ia, ((x > lo) && (x < hi)).select(g, 0.0));
  });
}

/// Row-wise softmax (each row sums to one).
inline Var softmax_rows(Var a) {
  const auto& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  const auto ia = a.id;
  Var out = a.tape->push(std::move(y), detail::any_grad({a}), nullptr);
  const auto io = out.id;
  out.tape->set_backward(out, [ia, io](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(io);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, y.cwiseProduct(g.colwise() - dot));
  });
  return out;
}

/// Column means: R x C -> 1 x C.
inline Var mean_rows(Var a) {
  const auto ia = a.id;
  const double n = static_cast<double>(a.rows());
  const Eigen::Index r = a.rows();
  return a.tape->push(a.value().colwise().mean(), detail::any_grad({a}), [ia, n, r](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.replicate(r, 1) / n);
  });
}

/// Column maxima: R x C -> 1 x C; the gradient goes to the first maximal row.
inline Var max_rows(Var a) {
  const Matrix& x = a.value();
  Matrix v(1, x.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    v(0, c) = x.col(c).maxCoeff(&arg[c]);
    a.tape->note_branch(static_cast<std::uint64_t>(arg[c]));
  }
  const auto ia = a.id;
  const Eigen::Index r = a.rows();
  return a.tape->push(std::move(v), detail::any_grad({a}), [ia, r, arg = std::move(arg)](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) full(arg[c], c) = g(0, c);
    t.accumulate(ia, full);
  });
}

/// Mean of every entry: -> 1 x 1.
inline Var mean_all(Var a) {
  const auto ia = a.id;
  const double n = static_cast<double>(a.value().size());
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(Matrix::Constant(1, 1, a.value().mean()), detail::any_grad({a}), [ia, n, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0) / n));
  });
}

inline Var sum_all(Var a) {
  const auto ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(Matrix::Constant(1, 1, a.value().sum()), detail::any_grad({a}), [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

inline Var sum_squares(Var a) {
  const auto ia = a.id;
  return a.tape->push(Matrix::Constant(1, 1, a.value().squaredNorm()), detail::any_grad({a}), [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, 2.0 * g(0, 0) * t.value(ia));
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_cols of nothing");
  const Eigen::Index r = parts.front().rows();
  Eigen::Index c = 0;
  bool grad = false;
  for (auto p : parts) {
    if (p.rows() != r) throw Error(ErrorCode::ShapeMismatch, "concat_cols: row counts differ");
    c += p.cols();
    grad = grad || p.tape->requires_grad(p);
  }
  Matrix v(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (auto p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id, p.cols());
    off += p.cols();
  }
  return parts.front().tape->push(std::move(v), grad, [spans](Tape& t, const Matrix& g) {
    Eigen::Index o = 0;
    for (auto [id, w] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(o, w));
      o += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat_rows of nothing");
  const Eigen::Index c = parts.front().cols();
  Eigen::Index r = 0;
  bool grad = false;
  for (auto p : parts) {
    if (p.cols() != c) throw Error(ErrorCode::ShapeMismatch, "concat_rows: column counts differ");
    r += p.rows();
    grad = grad || p.tape->requires_grad(p);
  }
  Matrix v(r, c);
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;
  Eigen::Index off = 0;
  for (auto p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id, p.rows());
    off += p.rows();
  }
  return parts.front().tape->push(std::move(v), grad, [spans](Tape& t, const Matrix& g) {
    Eigen::Index o = 0;
    for (auto [id, h] : spans) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(o, h));
      o += h;
    }
  });
}

/// Row-major reshape (vec() of a d x 3 keypoint matrix is reshape(k, 1, 3d)).
inline Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw Error(ErrorCode::ShapeMismatch, "reshape: size differs");
  auto to = [](const Matrix& m, Eigen::Index r, Eigen::Index c) {
    Matrix out(r, c);
    const Eigen::Index mc = m.cols();
    for (Eigen::Index k = 0; k < m.size(); ++k) out(k / c, k % c) = m(k / mc, k % mc);
    return out;
  };
  const auto ia = a.id;
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  return a.tape->push(to(a.value(), rows, cols), detail::any_grad({a}), [ia, r0, c0, to](Tape& t, const Matrix& g) {
    t.accumulate(ia, to(g, r0, c0));
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw Error(ErrorCode::ShapeMismatch, "slice_cols out of range");
  const auto ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->push(a.value().middleCols(start, count), detail::any_grad({a}), [ia, r, c, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    t.accumulate(ia, full);
  });
}

/// 1 x C -> R x C by repeating the row.
inline Var broadcast_rows(Var a, Eigen::Index rows) {
  if (a.rows() != 1) throw Error(ErrorCode::ShapeMismatch, "broadcast_rows needs a single row");
  const auto ia = a.id;
  return a.tape->push(a.value().replicate(rows, 1), detail::any_grad({a}),
                      [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.colwise().sum()); });
}

/// Value copy with no gradient path (stop-gradient).
inline Var detach(Var a) { return a.tape->constant(a.value()); }

/// Euclidean distances between rows of a (n x 3) and b (m x 3) -> n x m.
/// The gradient at zero distance is taken as zero.
inline Var pairwise_dist(Var a, Var b) {
  if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "pairwise_dist: dimensions differ");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix d(av.rows(), bv.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i)
    for (Eigen::Index j = 0; j < bv.rows(); ++j) d(i, j) = (av.row(i) - bv.row(j)).norm();
  const auto ia = a.id, ib = b.id;
  Var out = a.tape->push(std::move(d), detail::any_grad({a, b}), nullptr);
  const auto io = out.id;
  out.tape->set_backward(out, [ia, ib, io](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    const Matrix& dv = t.value(io);
    Matrix w = Matrix::Zero(dv.rows(), dv.cols());
    for (Eigen::Index k = 0; k < dv.size(); ++k)
      if (dv(k) > 0.0) w(k) = g(k) / dv(k);
    // d d_ij / d a_i = (a_i - b_j) / d_ij
    if (t.requires_grad(ia)) {
      Matrix ga = av.array().colwise() * w.rowwise().sum().array();
      ga.noalias() -= w * bv;
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Matrix gb = bv.array().colwise() * w.colwise().sum().transpose().array();
      gb.noalias() -= w.transpose() * av;
      t.accumulate(ib, gb);
    }
  });
  return out;
}

namespace detail {
inline Points as_points(const Matrix& m) {
  if (m.cols() != 3) throw Error(ErrorCode::ShapeMismatch, "expected an N x 3 point matrix");
  return Points(m);
}
}  // namespace detail

/// One-way Chamfer d(a -> b) as a scalar node; matches kpdiff::chamfer_oneway.
inline Var chamfer_oneway(Var a, Var b, NnMode mode = NnMode::Auto) {
  const Points ap = detail::as_points(a.value());
  const Points bp = detail::as_points(b.value());
  if (ap.rows() == 0 || bp.rows() == 0) throw Error(ErrorCode::EmptyCloud, "chamfer on empty cloud");
  auto nn = nearest_all(ap, bp, mode);
  double sum = 0.0;
  for (const auto& n : nn) sum += n.d2;
  const double inv = 1.0 / static_cast<double>(ap.rows());
  const auto ia = a.id, ib = b.id;
  std::vector<Eigen::Index> match(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) {
    match[i] = nn[i].index;
    a.tape->note_branch(static_cast<std::uint64_t>(match[i]));
  }
  return a.tape->push(Matrix::Constant(1, 1, sum * inv), detail::any_grad({a, b}),
                      [ia, ib, inv, match = std::move(match)](Tape& t, const Matrix& g) {
                        const Matrix& av = t.value(ia);
                        const Matrix& bv = t.value(ib);
                        Matrix ga = Matrix::Zero(av.rows(), 3);
                        Matrix gb = Matrix::Zero(bv.rows(), 3);
                        const double s = 2.0 * g(0, 0) * inv;
                        for (Eigen::Index i = 0; i < av.rows(); ++i) {
                          const auto diff = (av.row(i) - bv.row(match[i])) * s;
                          ga.row(i) = diff;
                          gb.row(match[i]) -= diff;
                        }
                        if (t.requires_grad(ia)) t.accumulate(ia, ga);
                        if (t.requires_grad(ib)) t.accumulate(ib, gb);
                      });
}

/// k-NN hinge repulsion as a scalar node; matches kpdiff::repulsion.
inline Var repulsion(Var a, int k_nn, double margin) {
  const Points p = detail::as_points(a.value());
  const Eigen::Index n = p.rows();
  if (k_nn < 1 || n <= k_nn) throw Error(ErrorCode::TooFewPoints, "repulsion needs N > k_nn >= 1");
  struct Pair {
    Eigen::Index i, j;
    double d;
  };
  std::vector<Pair> active;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (auto j : knn_others(p, i, k_nn)) {
      const double d = std::sqrt(sqdist(p, i, p, j));
      a.tape->note_branch(static_cast<std::uint64_t>(j) << 1 | (d < margin));
      if (d < margin) {
        sum += margin - d;
        active.push_back({i, j, d});
      }
    }
  }
  const double inv = 1.0 / (static_cast<double>(n) * k_nn);
  const auto ia = a.id;
  return a.tape->push(Matrix::Constant(1, 1, sum * inv), detail::any_grad({a}),
                      [ia, inv, active = std::move(active)](Tape& t, const Matrix& g) {
                        const Matrix& av = t.value(ia);
                        Matrix ga = Matrix::Zero(av.rows(), 3);
                        const double s = g(0, 0) * inv;
                        for (const auto& pr : active) {
                          if (pr.d <= 0.0) continue;
                          const auto dir = (av.row(pr.i) - av.row(pr.j)) / pr.d;
                          ga.row(pr.i) -= s * dir;
                          ga.row(pr.j) += s * dir;
                        }
                        t.accumulate(ia, ga);
                      });
}

}  // namespace kpdiff::ad
