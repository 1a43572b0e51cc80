#include "clpoison/losses.hpp"

#include "clpoison/errors.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace clpoison {

namespace {

void check_pair(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0) {
    throw ArgumentError(std::string(what) + ": inputs must be non-empty and equally shaped");
  }
}

Vector row_norms(const Matrix& x) {
  Vector n = x.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n(i) > 0.0) || !std::isfinite(n(i))) {
      throw NumericalError("cannot normalize a zero or non-finite embedding");
    }
  }
  return n;
}

// Row-wise log-softmax cross entropy with the target in column `target(i)`;
// returns the mean loss and writes d(mean loss)/d(logits) into grad.
double cross_entropy(const Matrix& logits, const std::vector<Eigen::Index>& target, Matrix& grad) {
  const Eigen::Index n = logits.rows();
  grad.resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = logits.row(i).maxCoeff();
    RowVector e = (logits.row(i).array() - mx).exp().matrix();
    const double z = e.sum();
    total += std::log(z) + mx - logits(i, target[static_cast<std::size_t>(i)]);
    grad.row(i) = e / z;
    grad(i, target[static_cast<std::size_t>(i)]) -= 1.0;
  }
  grad /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

}  // namespace

Matrix l2_normalize_rows(const Matrix& x) {
  const Vector n = row_norms(x);
  return n.cwiseInverse().asDiagonal() * x;
}

Matrix l2_normalize_rows_backward(const Matrix& x, const Matrix& grad_normalized) {
  const Vector n = row_norms(x);
  const Matrix z = n.cwiseInverse().asDiagonal() * x;
  const Vector dot = (z.array() * grad_normalized.array()).rowwise().sum();
  return n.cwiseInverse().asDiagonal() * (grad_normalized - dot.asDiagonal() * z);
}

LossGrad info_nce_loss_grad(const Matrix& a, const Matrix& b, double temperature) {
  check_pair(a, b, "info_nce_loss");
  if (!(temperature > 0.0)) throw ArgumentError("info_nce_loss: temperature must be positive");
  const Eigen::Index B = a.rows(), N = 2 * B;
  Matrix u(N, a.cols());
  u << a, b;
  const Matrix z = l2_normalize_rows(u);
  Matrix logits = z * z.transpose() / temperature;
  // Self-similarity is excluded from the softmax.
  for (Eigen::Index i = 0; i < N; ++i) logits(i, i) = -std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> target(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) target[static_cast<std::size_t>(i)] = (i + B) % N;
  Matrix g;
  LossGrad out;
  out.loss = cross_entropy(logits, target, g);
  for (Eigen::Index i = 0; i < N; ++i) g(i, i) = 0.0;
  const Matrix dz = (g + g.transpose()) * z / temperature;
  const Matrix du = l2_normalize_rows_backward(u, dz);
  out.grad_a = du.topRows(B);
  out.grad_b = du.bottomRows(B);
  return out;
}

double info_nce_loss(const Matrix& a, const Matrix& b, double temperature) {
  return info_nce_loss_grad(a, b, temperature).loss;
}

LossGrad moco_loss_grad(const Matrix& queries, const Matrix& keys, const Matrix& queue,
                        double temperature) {
  check_pair(queries, keys, "moco_loss");
  if (!(temperature > 0.0)) throw ArgumentError("moco_loss: temperature must be positive");
  if (queue.rows() > 0 && queue.cols() != queries.cols()) {
    throw ArgumentError("moco_loss: queue width does not match the embedding width");
  }
  const Eigen::Index B = queries.rows(), K = queue.rows();
  const Matrix q = l2_normalize_rows(queries);
  const Matrix k = l2_normalize_rows(keys);
  Matrix logits(B, 1 + K);
  logits.col(0) = (q.array() * k.array()).rowwise().sum().matrix();
  if (K > 0) logits.rightCols(K) = q * queue.transpose();
  logits /= temperature;
  std::vector<Eigen::Index> target(static_cast<std::size_t>(B), 0);
  Matrix g;
  LossGrad out;
  out.loss = cross_entropy(logits, target, g);
  g /= temperature;
  Matrix dq = g.col(0).asDiagonal() * k;
  if (K > 0) dq += g.rightCols(K) * queue;
  const Matrix dk = g.col(0).asDiagonal() * q;
  out.grad_a = l2_normalize_rows_backward(queries, dq);
  out.grad_b = l2_normalize_rows_backward(keys, dk);
  return out;
}

double moco_loss(const Matrix& queries, const Matrix& keys, const Matrix& queue, double temperature) {
  return moco_loss_grad(queries, keys, queue, temperature).loss;
}

LossGrad byol_loss_grad(const Matrix& prediction, const Matrix& target) {
  check_pair(prediction, target, "byol_loss");
  const Matrix p = l2_normalize_rows(prediction);
  const Matrix t = l2_normalize_rows(target);
  const double n = static_cast<double>(p.rows());
  const Vector cos = (p.array() * t.array()).rowwise().sum();
  LossGrad out;
  out.loss = (2.0 - 2.0 * cos.array()).mean();
  out.grad_a = l2_normalize_rows_backward(prediction, -2.0 / n * t);
  out.grad_b = l2_normalize_rows_backward(target, -2.0 / n * p);
  return out;
}

double byol_loss(const Matrix& prediction, const Matrix& target) {
  return byol_loss_grad(prediction, target).loss;
}

}  // namespace clpoison
