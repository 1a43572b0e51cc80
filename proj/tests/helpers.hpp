#pragma once

#include "clpoison/rng.hpp"
#include "clpoison/tensor.hpp"

#include <cmath>
#include <functional>

namespace testing {

inline clpoison::Matrix random_matrix(int rows, int cols, clpoison::Rng& rng, double scale = 1.0) {
  clpoison::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline clpoison::Matrix uniform_matrix(int rows, int cols, clpoison::Rng& rng, double lo = 0.0, double hi = 1.0) {
  clpoison::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// Central differences of f at x, one coordinate at a time.
inline clpoison::Matrix numeric_gradient(const std::function<double(const clpoison::Matrix&)>& f,
                                         const clpoison::Matrix& x, double h = 1e-6) {
  clpoison::Matrix g(x.rows(), x.cols());
  clpoison::Matrix y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = y.data()[i];
    y.data()[i] = v + h;
    const double fp = f(y);
    y.data()[i] = v - h;
    const double fm = f(y);
    y.data()[i] = v;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const clpoison::Matrix& a, const clpoison::Matrix& b) {
  const double denom = std::max(a.norm(), b.norm());
  return denom == 0.0 ? 0.0 : (a - b).norm() / denom;
}

}  // namespace testing
