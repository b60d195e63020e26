/* Copyright 2026 The Flowsense Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef FLOWSENSE_AUTODIFF_HPP_
#define FLOWSENSE_AUTODIFF_HPP_

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "flowsense/common.hpp"

namespace flowsense::ad {

// Reverse-mode tape over Eigen matrices. Nodes are created in topological
// order by construction; backward() walks them in reverse. A graph is built
// per batch and discarded; parameters live outside the tape, are copied in as
// leaves, and their gradients are read back after backward().

using Matrix = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  // backprop(tape, self_id) accumulates into the parents' grads.
  using Backprop = std::function<void(Tape&, int)>;

  struct Node {
    Matrix value;
    Matrix grad;
    Backprop backprop;
  };

  Var leaf(Matrix value) { return emplace(std::move(value), nullptr); }

  Var emplace(Matrix value, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), {}, std::move(backprop)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Matrix& grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  Matrix& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }

  void backward(Var root) {
    for (auto& n : nodes_) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    auto& r = nodes_[static_cast<size_t>(root.id)];
    r.grad = Matrix::Ones(r.value.rows(), r.value.cols());
    for (int i = root.id; i >= 0; --i) {
      auto& bp = nodes_[static_cast<size_t>(i)].backprop;
      if (bp) bp(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// ---- primitive ops ---------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix v = t.value(a) * t.value(b);
  int ia = a.id, ib = b.id;
  return t.emplace(std::move(v), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.grad(ia) += g * t.value(ib).transpose();
    t.grad(ib) += t.value(ia).transpose() * g;
  });
}

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix v = t.value(a) + t.value(b);
  int ia = a.id, ib = b.id;
  return t.emplace(std::move(v), [ia, ib](Tape& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) += t.grad(self);
  });
}

/// Adds a 1xN bias row to every row of a.
inline Var add_rowvec(Var a, Var bias) {
  Tape& t = *a.tape;
  Matrix v = t.value(a).rowwise() + t.value(bias).row(0);
  int ia = a.id, ib = bias.id;
  return t.emplace(std::move(v), [ia, ib](Tape& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib).row(0) += t.grad(self).colwise().sum();
  });
}

inline Var emul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix v = t.value(a).cwiseProduct(t.value(b));
  int ia = a.id, ib = b.id;
  return t.emplace(std::move(v), [ia, ib](Tape& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(t.value(ib));
    t.grad(ib) += t.grad(self).cwiseProduct(t.value(ia));
  });
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix v = t.value(a) * s;
  int ia = a.id;
  return t.emplace(std::move(v), [ia, s](Tape& t, int self) {
    t.grad(ia) += t.grad(self) * s;
  });
}

inline Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix v = t.value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  int ia = a.id;
  return t.emplace(std::move(v), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct(y.cwiseProduct(Matrix::Ones(y.rows(), y.cols()) - y));
  });
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  Matrix v = t.value(a).unaryExpr([](double x) { return std::tanh(x); });
  int ia = a.id;
  return t.emplace(std::move(v), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct(
        (Matrix::Ones(y.rows(), y.cols()) - y.cwiseProduct(y)));
  });
}

/// Exact GELU, x * Phi(x).
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  auto phi_cdf = [](double x) { return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)); };
  Matrix v = t.value(a).unaryExpr([&](double x) { return x * phi_cdf(x); });
  int ia = a.id;
  return t.emplace(std::move(v), [ia, phi_cdf](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    Matrix d = x.unaryExpr([&](double u) {
      double pdf = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
      return phi_cdf(u) + u * pdf;
    });
    t.grad(ia) += t.grad(self).cwiseProduct(d);
  });
}

inline Var slice_cols(Var a, int start, int n) {
  Tape& t = *a.tape;
  Matrix v = t.value(a).middleCols(start, n);
  int ia = a.id;
  return t.emplace(std::move(v), [ia, start, n](Tape& t, int self) {
    t.grad(ia).middleCols(start, n) += t.grad(self);
  });
}

inline Var concat_cols(Var a, Var b) {
  Tape& t = *a.tape;
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  Matrix v(va.rows(), va.cols() + vb.cols());
  v << va, vb;
  int ia = a.id, ib = b.id, na = static_cast<int>(va.cols()), nb = static_cast<int>(vb.cols());
  return t.emplace(std::move(v), [ia, ib, na, nb](Tape& t, int self) {
    t.grad(ia) += t.grad(self).leftCols(na);
    t.grad(ib) += t.grad(self).rightCols(nb);
  });
}

/// Per-row layer normalization with learnable gain/shift (1xN each).
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = *x.tape;
  const Matrix& v = t.value(x);
  const auto n = static_cast<double>(v.cols());
  Eigen::VectorXd mean = v.rowwise().mean();
  Matrix centered = v.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  Eigen::VectorXd inv_std = (var.array() + eps).sqrt().inverse();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * t.value(gamma).row(0).array()).rowwise() +
               t.value(beta).row(0).array();
  int ix = x.id, ig = gamma.id, ib = beta.id;
  // xhat and inv_std are needed in the pull-back; captured by value.
  return t.emplace(std::move(out), [ix, ig, ib, xhat, inv_std, n](Tape& t, int self) {
    const Matrix& gout = t.grad(self);
    t.grad(ib).row(0) += gout.colwise().sum();
    t.grad(ig).row(0) += gout.cwiseProduct(xhat).colwise().sum();
    Matrix gxhat = gout.array().rowwise() * t.value(ig).row(0).array();
    Eigen::VectorXd m1 = gxhat.rowwise().sum() / n;
    Eigen::VectorXd m2 = gxhat.cwiseProduct(xhat).rowwise().sum() / n;
    Matrix gx = gxhat;
    gx.colwise() -= m1;
    gx -= xhat.array().colwise() * m2.array();
    gx = gx.array().colwise() * inv_std.array();
    t.grad(ix) += gx;
  });
}

/// Inverted-dropout by a precomputed mask (entries 0 or 1/(1-rate)).
inline Var dropout(Var x, const Matrix& mask) {
  Tape& t = *x.tape;
  Matrix v = t.value(x).cwiseProduct(mask);
  int ix = x.id;
  return t.emplace(std::move(v), [ix, mask](Tape& t, int self) {
    t.grad(ix) += t.grad(self).cwiseProduct(mask);
  });
}

inline Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Matrix& v = t.value(x);
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    double mx = v.row(r).maxCoeff();
    Eigen::RowVectorXd e = (v.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  int ix = x.id;
  return t.emplace(std::move(out), [ix](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& gy = t.grad(self);
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      double dot = gy.row(r).dot(y.row(r));
      gx.row(r) = y.row(r).cwiseProduct(gy.row(r).array() - dot);
    }
    t.grad(ix) += gx;
  });
}

/// Mean cross-entropy over the batch, from logits. Returns a 1x1 node.
inline Var cross_entropy_logits(Var logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape;
  const Matrix& v = t.value(logits);
  if (static_cast<size_t>(v.rows()) != labels.size())
    throw DataError("cross_entropy_logits: batch size mismatch");
  Matrix probs(v.rows(), v.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    double mx = v.row(r).maxCoeff();
    Eigen::RowVectorXd e = (v.row(r).array() - mx).exp();
    double z = e.sum();
    probs.row(r) = e / z;
    loss += -(v(r, labels[static_cast<size_t>(r)]) - mx - std::log(z));
  }
  loss /= static_cast<double>(v.rows());
  Matrix out(1, 1);
  out(0, 0) = loss;
  int ix = logits.id;
  return t.emplace(std::move(out), [ix, probs, labels](Tape& t, int self) {
    double g = t.grad(self)(0, 0);
    Matrix gx = probs;
    for (Eigen::Index r = 0; r < gx.rows(); ++r)
      gx(r, labels[static_cast<size_t>(r)]) -= 1.0;
    t.grad(ix) += gx * (g / static_cast<double>(gx.rows()));
  });
}

inline Var l2_normalize_rows(Var x, double eps = 1e-12) {
  Tape& t = *x.tape;
  const Matrix& v = t.value(x);
  Eigen::VectorXd inv_norm = (v.rowwise().norm().array() + eps).inverse();
  Matrix out = v.array().colwise() * inv_norm.array();
  int ix = x.id;
  return t.emplace(std::move(out), [ix, inv_norm](Tape& t, int self) {
    const Matrix& z = t.value(self);
    const Matrix& gz = t.grad(self);
    Eigen::VectorXd dots = (gz.cwiseProduct(z)).rowwise().sum();
    Matrix gx = gz - (z.array().colwise() * dots.array()).matrix();
    gx = gx.array().colwise() * inv_norm.array();
    t.grad(ix) += gx;
  });
}

/// Supervised contrastive loss over L2-normalized embeddings z (rows).
/// For each anchor i with positives P(i) (same label, other index):
///   -1/|P(i)| * sum_p log( exp(z_i.z_p/tau) / sum_{a != i} exp(z_i.z_a/tau) )
/// averaged over anchors that have at least one positive. Anchors without a
/// positive are skipped; a batch with no valid anchor is degenerate.
inline Var supcon_loss(Var z, const std::vector<int>& labels, double tau) {
  Tape& t = *z.tape;
  const Matrix& v = t.value(z);
  const auto b = static_cast<int>(v.rows());
  if (static_cast<size_t>(b) != labels.size())
    throw DataError("supcon_loss: batch size mismatch");
  if (tau <= 0.0) throw DataError("supcon_loss: tau must be positive");

  Matrix sim = (v * v.transpose()) / tau;

  std::vector<int> pos_count(static_cast<size_t>(b), 0);
  int anchors = 0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j)
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
        ++pos_count[static_cast<size_t>(i)];
    if (pos_count[static_cast<size_t>(i)] > 0) ++anchors;
  }
  if (anchors == 0) throw DataError("degenerate contrastive batch: no anchor has a positive");

  // Row-wise softmax over a != i, kept for the pull-back.
  Matrix p = Matrix::Zero(b, b);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    if (pos_count[static_cast<size_t>(i)] == 0) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < b; ++a)
      if (a != i) mx = std::max(mx, sim(i, a));
    double denom = 0.0;
    for (int a = 0; a < b; ++a)
      if (a != i) denom += std::exp(sim(i, a) - mx);
    double log_denom = mx + std::log(denom);
    for (int a = 0; a < b; ++a)
      if (a != i) p(i, a) = std::exp(sim(i, a) - log_denom);
    double anchor_loss = 0.0;
    for (int j = 0; j < b; ++j)
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
        anchor_loss += log_denom - sim(i, j);
    loss += anchor_loss / pos_count[static_cast<size_t>(i)];
  }
  loss /= anchors;

  Matrix out(1, 1);
  out(0, 0) = loss;
  int iz = z.id;
  return t.emplace(std::move(out), [iz, p, labels, pos_count, anchors, tau, b](Tape& t, int self) {
    double g = t.grad(self)(0, 0);
    // dL/dsim(i,j) for anchors i, then dZ = (G + G^T) Z since sim is built
    // from Z Z^T and both occurrences of each pair contribute.
    Matrix grad_sim = Matrix::Zero(b, b);
    for (int i = 0; i < b; ++i) {
      int np = pos_count[static_cast<size_t>(i)];
      if (np == 0) continue;
      for (int j = 0; j < b; ++j) {
        if (j == i) continue;
        double indicator =
            labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)] ? 1.0 / np : 0.0;
        grad_sim(i, j) = (p(i, j) - indicator) / (anchors * tau);
      }
    }
    t.grad(iz) += g * (grad_sim + grad_sim.transpose()) * t.value(iz);
  });
}

}  // namespace flowsense::ad

#endif  // FLOWSENSE_AUTODIFF_HPP_
