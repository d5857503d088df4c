#pragma once

#include "detrame/core.hpp"
#include "detrame/qprox.hpp"

namespace detrame::sdl {

struct SparseCode {
  Vector a;              // representation, >= 0 entrywise
  double objective;
  int iterations_used;
  bool converged;
};

/// Minimizes 1/2 ||x - D a||^2 + alpha/2 ||a||^2 + d^T a
///         + lambda ||a||_1 + i_{>=0}(a) + beta/2 ||a||^2
/// by proximal gradient with step 1 / (lambda_max(D^T D) + alpha).
SparseCode sparse_code(const Dictionary& dict, const Regularizer& reg, const Vector& x,
                       double tol, int max_iter, const Vector* start = nullptr);

double sparse_code_objective(const Dictionary& dict, const Regularizer& reg, const Vector& x,
                             const Vector& a);

struct EquivalenceReport {
  double max_abs_diff;   // max-entry |A1 - A2|
  double tol;
  bool pass;
  Index instances;       // columns compared
};

/// Codes every column of X directly against the dictionary, then again as the
/// metric prox of F X - c 1^T, and reports the worst entrywise discrepancy.
EquivalenceReport check_equivalence(const Dictionary& dict, const Regularizer& reg,
                                    const Matrix& X, double tol,
                                    double solver_tol = 1e-10, int max_iter = 200000);

}  // namespace detrame::sdl
