#pragma once

#include <random>

#include "detrame/core.hpp"

namespace detrame::testing {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng) * scale;
  return m;
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// m x k matrix with unit-norm columns.
inline Matrix random_unit_dictionary(Index m, Index k, std::mt19937_64& rng) {
  Matrix D = random_matrix(m, k, rng);
  for (Index j = 0; j < k; ++j) D.col(j) /= D.col(j).norm();
  return D;
}

/// Symmetric matrix with q_ii >= 1.1 * sum_{l != i} |q_il| plus a positive margin.
inline Matrix random_diag_dominant(Index k, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> margin(0.1, 1.0);
  Matrix Q(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < i; ++j) {
      const double v = gauss(rng) / static_cast<double>(k);
      Q(i, j) = v;
      Q(j, i) = v;
    }
    Q(i, i) = 0.0;
  }
  for (Index i = 0; i < k; ++i) Q(i, i) = 1.1 * Q.row(i).cwiseAbs().sum() + margin(rng);
  return Q;
}

}  // namespace detrame::testing
