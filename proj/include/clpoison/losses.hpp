#pragma once

#include "clpoison/tensor.hpp"

namespace clpoison {

/// A loss value with its gradients with respect to the two inputs.
struct LossGrad {
  double loss = 0.0;
  Matrix grad_a;
  Matrix grad_b;
};

/// Rows scaled to unit L2 norm. Throws NumericalError on a zero row.
Matrix l2_normalize_rows(const Matrix& x);

/// Backpropagates through l2_normalize_rows: given x and dL/d(normalized x), returns dL/dx.
Matrix l2_normalize_rows_backward(const Matrix& x, const Matrix& grad_normalized);

/// NT-Xent over the 2B views of B pairs: row i of `a` and row i of `b` are
/// positives, every other view is a negative. Mean over all 2B anchors.
double info_nce_loss(const Matrix& a, const Matrix& b, double temperature);
LossGrad info_nce_loss_grad(const Matrix& a, const Matrix& b, double temperature);

/// MoCo: each query is classified against its key (positive) and the queue (negatives).
/// `queue` holds one unit-norm key per row and may be empty.
double moco_loss(const Matrix& queries, const Matrix& keys, const Matrix& queue, double temperature);
LossGrad moco_loss_grad(const Matrix& queries, const Matrix& keys, const Matrix& queue,
                        double temperature);

/// Mean over rows of 2 - 2 cos(prediction, target), in [0, 4].
double byol_loss(const Matrix& prediction, const Matrix& target);
LossGrad byol_loss_grad(const Matrix& prediction, const Matrix& target);

}  // namespace clpoison
