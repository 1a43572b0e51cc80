#pragma once

#include "clpoison/tensor.hpp"

#include <cmath>
#include <vector>

namespace testing {

// NT-Xent written out term by term from its definition.
inline double brute_nt_xent(const clpoison::Matrix& a, const clpoison::Matrix& b, double tau) {
  const int B = static_cast<int>(a.rows());
  std::vector<clpoison::RowVector> z;
  for (int i = 0; i < B; ++i) z.push_back(a.row(i) / a.row(i).norm());
  for (int i = 0; i < B; ++i) z.push_back(b.row(i) / b.row(i).norm());
  double total = 0.0;
  for (int i = 0; i < 2 * B; ++i) {
    const int pos = i < B ? i + B : i - B;
    double denom = 0.0;
    for (int k = 0; k < 2 * B; ++k) {
      if (k != i) denom += std::exp(z[i].dot(z[k]) / tau);
    }
    total += -std::log(std::exp(z[i].dot(z[pos]) / tau) / denom);
  }
  return total / (2 * B);
}

}  // namespace testing
