//
// Project msdiff - Copyright 2026 the msdiff developers.
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense matrices. A Tape owns
// the forward values; each op appends a node whose closure scatters the
// node's adjoint into its parents. Creation order is a topological order,
// so backward() is a single reverse sweep.
//

#ifndef MSDIFF_NN_AUTODIFF_HPP
#define MSDIFF_NN_AUTODIFF_HPP

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "msdiff/util/errors.hpp"

namespace msdiff::ad {

class Tape;

struct Var {
  Tape *tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(Tape &)> back;
  };

  Var push(Eigen::MatrixXd value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node &node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node &node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  const Eigen::MatrixXd &value(Var v) const { return node(v.id).value; }
  Eigen::MatrixXd &grad(Var v) { return node(v.id).grad; }

  /// Seeds the (1 x 1) root with adjoint 1 and sweeps the tape backwards.
  void backward(Var root) {
    if (value(root).rows() != 1 || value(root).cols() != 1)
      throw ShapeMismatchError("backward: root must be scalar");
    for (auto &n : nodes_) n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
    node(root.id).grad(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i)
      if (nodes_[static_cast<std::size_t>(i)].back)
        nodes_[static_cast<std::size_t>(i)].back(*this);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

inline Var constant(Tape &t, Eigen::MatrixXd v) { return t.push(std::move(v)); }

/// Leaf with gradient tracking; identical to constant, named for intent.
inline Var leaf(Tape &t, Eigen::MatrixXd v) { return t.push(std::move(v)); }

inline Var matmul(Var a, Var b) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a) * t.value(b));
  int oi = out.id, ai = a.id, bi = b.id;
  t.node(oi).back = [oi, ai, bi](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    tp.node(ai).grad += g * tp.node(bi).value.transpose();
    tp.node(bi).grad += tp.node(ai).value.transpose() * g;
  };
  return out;
}

inline Var transpose(Var a) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a).transpose());
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai](Tape &tp) {
    tp.node(ai).grad += tp.node(oi).grad.transpose();
  };
  return out;
}

inline Var add(Var a, Var b) {
  Tape &t = *a.tape;
  if (t.value(a).rows() != t.value(b).rows() ||
      t.value(a).cols() != t.value(b).cols())
    throw ShapeMismatchError("add: shape mismatch");
  Var out = t.push(t.value(a) + t.value(b));
  int oi = out.id, ai = a.id, bi = b.id;
  t.node(oi).back = [oi, ai, bi](Tape &tp) {
    tp.node(ai).grad += tp.node(oi).grad;
    tp.node(bi).grad += tp.node(oi).grad;
  };
  return out;
}

/// Adds a (1 x d) row vector to every row of a.
inline Var add_broadcast_row(Var a, Var row) {
  Tape &t = *a.tape;
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols())
    throw ShapeMismatchError("add_broadcast_row: bias shape mismatch");
  Eigen::MatrixXd v = t.value(a);
  v.rowwise() += t.value(row).row(0);
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id, ri = row.id;
  t.node(oi).back = [oi, ai, ri](Tape &tp) {
    tp.node(ai).grad += tp.node(oi).grad;
    tp.node(ri).grad += tp.node(oi).grad.colwise().sum();
  };
  return out;
}

inline Var scale(Var a, double s) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a) * s);
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, s](Tape &tp) {
    tp.node(ai).grad += tp.node(oi).grad * s;
  };
  return out;
}

inline Var cwise_mul(Var a, Var b) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a).cwiseProduct(t.value(b)));
  int oi = out.id, ai = a.id, bi = b.id;
  t.node(oi).back = [oi, ai, bi](Tape &tp) {
    tp.node(ai).grad += tp.node(oi).grad.cwiseProduct(tp.node(bi).value);
    tp.node(bi).grad += tp.node(oi).grad.cwiseProduct(tp.node(ai).value);
  };
  return out;
}

/// x * sigmoid(x), elementwise.
inline Var silu(Var a) {
  Tape &t = *a.tape;
  const Eigen::MatrixXd &x = t.value(a);
  Eigen::MatrixXd sig =
      (1.0 + (-x.array()).exp()).inverse().matrix();
  Var out = t.push(x.cwiseProduct(sig));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, sig](Tape &tp) {
    const Eigen::MatrixXd &x2 = tp.node(ai).value;
    Eigen::ArrayXXd s = sig.array();
    Eigen::ArrayXXd d = s * (1.0 + x2.array() * (1.0 - s));
    tp.node(ai).grad += (tp.node(oi).grad.array() * d).matrix();
  };
  return out;
}

/// Per-row normalization with learned scale and shift (both 1 x d).
inline Var layernorm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
  Tape &t = *a.tape;
  const Eigen::MatrixXd &x = t.value(a);
  Eigen::Index rows = x.rows(), cols = x.cols();
  if (t.value(gamma).cols() != cols || t.value(beta).cols() != cols)
    throw ShapeMismatchError("layernorm_rows: scale shape mismatch");
  Eigen::MatrixXd xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    xhat.row(r) = (x.row(r).array() - mean) * is;
  }
  Eigen::MatrixXd v = xhat;
  v.array().rowwise() *= t.value(gamma).row(0).array();
  v.rowwise() += t.value(beta).row(0);
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id, gi = gamma.id, bi = beta.id;
  t.node(oi).back = [oi, ai, gi, bi, xhat, inv_std](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    const Eigen::MatrixXd &gam = tp.node(gi).value;
    tp.node(bi).grad += g.colwise().sum();
    tp.node(gi).grad += (g.array() * xhat.array()).colwise().sum().matrix();
    using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      RowArray dxhat = g.row(r).array() * gam.row(0).array();
      double mean_dxhat = dxhat.mean();
      double mean_dxhat_xhat = (dxhat * xhat.row(r).array()).mean();
      tp.node(ai).grad.row(r) +=
          (inv_std[r] *
           (dxhat - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat))
              .matrix();
    }
  };
  return out;
}

/// Softmax over each row, numerically shifted by the row max.
inline Var rowwise_softmax(Var a) {
  Tape &t = *a.tape;
  const Eigen::MatrixXd &x = t.value(a);
  Eigen::MatrixXd s(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Array<double, 1, Eigen::Dynamic> e =
        (x.row(r).array() - x.row(r).maxCoeff()).exp();
    s.row(r) = (e / e.sum()).matrix();
  }
  Var out = t.push(s);
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, s](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double dot = g.row(r).dot(s.row(r));
      tp.node(ai).grad.row(r) +=
          ((g.row(r).array() - dot) * s.row(r).array()).matrix();
    }
  };
  return out;
}

inline Var concat_cols(const std::vector<Var> &parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_cols: empty");
  Tape &t = *parts[0].tape;
  Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows)
      throw ShapeMismatchError("concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (Var p : parts) {
    Eigen::Index w = t.value(p).cols();
    v.middleCols(at, w) = t.value(p);
    ids.push_back(p.id);
    widths.push_back(w);
    at += w;
  }
  Var out = t.push(std::move(v));
  int oi = out.id;
  t.node(oi).back = [oi, ids, widths](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    Eigen::Index at2 = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tp.node(ids[i]).grad += g.middleCols(at2, widths[i]);
      at2 += widths[i];
    }
  };
  return out;
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index len) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a).middleCols(start, len));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, start, len](Tape &tp) {
    tp.node(ai).grad.middleCols(start, len) += tp.node(oi).grad;
  };
  return out;
}

inline Var slice_rows(Var a, Eigen::Index start, Eigen::Index len) {
  Tape &t = *a.tape;
  Var out = t.push(t.value(a).middleRows(start, len));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, start, len](Tape &tp) {
    tp.node(ai).grad.middleRows(start, len) += tp.node(oi).grad;
  };
  return out;
}

/// Pair expansion: row (i*n + j) of the result is row i of a (n x d).
inline Var pair_left(Var a) {
  Tape &t = *a.tape;
  Eigen::Index n = t.value(a).rows(), d = t.value(a).cols();
  Eigen::MatrixXd v(n * n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) v.row(i * n + j) = t.value(a).row(i);
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, n](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        tp.node(ai).grad.row(i) += g.row(i * n + j);
  };
  return out;
}

/// Pair expansion: row (i*n + j) of the result is row j of a (n x d).
inline Var pair_right(Var a) {
  Tape &t = *a.tape;
  Eigen::Index n = t.value(a).rows(), d = t.value(a).cols();
  Eigen::MatrixXd v(n * n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) v.row(i * n + j) = t.value(a).row(j);
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, n](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        tp.node(ai).grad.row(j) += g.row(i * n + j);
  };
  return out;
}

/// (n^2 x 1) column, row-major pair order, reshaped to an n x n matrix.
inline Var reshape_square(Var a, Eigen::Index n) {
  Tape &t = *a.tape;
  if (t.value(a).rows() != n * n || t.value(a).cols() != 1)
    throw ShapeMismatchError("reshape_square: need n^2 x 1");
  Eigen::MatrixXd v(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) v(i, j) = t.value(a)(i * n + j, 0);
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, n](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        tp.node(ai).grad(i * n + j, 0) += g(i, j);
  };
  return out;
}

/// Symmetrizes pair-ordered rows: out.row(i*n+j) = (in.row(i*n+j) +
/// in.row(j*n+i)) / 2.
inline Var pair_symmetrize(Var a, Eigen::Index n) {
  Tape &t = *a.tape;
  if (t.value(a).rows() != n * n)
    throw ShapeMismatchError("pair_symmetrize: need n^2 rows");
  Eigen::MatrixXd v(n * n, t.value(a).cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      v.row(i * n + j) =
          0.5 * (t.value(a).row(i * n + j) + t.value(a).row(j * n + i));
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai, n](Tape &tp) {
    const Eigen::MatrixXd &g = tp.node(oi).grad;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        tp.node(ai).grad.row(i * n + j) += 0.5 * g.row(i * n + j);
        tp.node(ai).grad.row(j * n + i) += 0.5 * g.row(i * n + j);
      }
  };
  return out;
}

inline Var sum_scalar(Var a) {
  Tape &t = *a.tape;
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = t.value(a).sum();
  Var out = t.push(std::move(v));
  int oi = out.id, ai = a.id;
  t.node(oi).back = [oi, ai](Tape &tp) {
    tp.node(ai).grad.array() += tp.node(oi).grad(0, 0);
  };
  return out;
}

/// Cross-entropy between pair-ordered logits (n^2 x k) and the target class
/// of every masked row, summed over rows with mask true. Stable via
/// logsumexp; gradient is softmax minus one-hot on masked rows.
inline Var cross_entropy_rows(Var logits, const std::vector<int> &targets,
                              const std::vector<bool> &mask) {
  Tape &t = *logits.tape;
  const Eigen::MatrixXd &z = t.value(logits);
  if (targets.size() != static_cast<std::size_t>(z.rows()) ||
      mask.size() != targets.size())
    throw ShapeMismatchError("cross_entropy_rows: target size mismatch");
  double loss = 0.0;
  Eigen::MatrixXd soft = Eigen::MatrixXd::Zero(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    double mx = z.row(r).maxCoeff();
    Eigen::Array<double, 1, Eigen::Dynamic> e = (z.row(r).array() - mx).exp();
    double sum = e.sum();
    soft.row(r) = (e / sum).matrix();
    loss += std::log(sum) + mx - z(r, targets[static_cast<std::size_t>(r)]);
  }
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = loss;
  Var out = t.push(std::move(v));
  int oi = out.id, ai = logits.id;
  t.node(oi).back = [oi, ai, soft, targets, mask](Tape &tp) {
    double g = tp.node(oi).grad(0, 0);
    Eigen::MatrixXd &pg = tp.node(ai).grad;
    for (Eigen::Index r = 0; r < pg.rows(); ++r) {
      if (!mask[static_cast<std::size_t>(r)]) continue;
      pg.row(r) += g * soft.row(r);
      pg(r, targets[static_cast<std::size_t>(r)]) -= g;
    }
  };
  return out;
}

/// Mean binary cross-entropy between elementwise sigmoid(logits) and 0/1
/// targets of the same shape. Fused for stability: the forward never forms
/// the sigmoid, and the backward is (sigmoid(z) - t) / count.
inline Var bce_with_logits_mean(Var logits, const Eigen::MatrixXd &targets) {
  Tape &t = *logits.tape;
  const Eigen::MatrixXd &z = t.value(logits);
  if (z.rows() != targets.rows() || z.cols() != targets.cols())
    throw ShapeMismatchError("bce_with_logits_mean: target shape mismatch");
  // max(z, 0) - z * t + log(1 + exp(-|z|)), summed then averaged.
  Eigen::ArrayXXd za = z.array();
  Eigen::ArrayXXd ta = targets.array();
  double count = static_cast<double>(z.size());
  double loss =
      (za.max(0.0) - za * ta + (1.0 + (-za.abs()).exp()).log()).sum() / count;
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = loss;
  Var out = t.push(std::move(v));
  int oi = out.id, ai = logits.id;
  t.node(oi).back = [oi, ai, targets, count](Tape &tp) {
    double g = tp.node(oi).grad(0, 0) / count;
    Eigen::ArrayXXd sig = 1.0 / (1.0 + (-tp.node(ai).value.array()).exp());
    tp.node(ai).grad += (g * (sig - targets.array())).matrix();
  };
  return out;
}

}  // namespace msdiff::ad

#endif  // MSDIFF_NN_AUTODIFF_HPP
