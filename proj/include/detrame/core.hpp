#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace detrame {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Synthesis dictionary with strong-convexity weight and optional linear term.
/// The per-signal coding objective it induces is
///   1/2 ||x - D a||^2 + alpha/2 ||a||^2 + d^T a + lambda ||a||_1 + i_{>=0}(a) + beta/2 ||a||^2.
struct Dictionary {
  Matrix D;      // m x k
  double alpha;  // > 0
  Vector d;      // length k

  Dictionary(Matrix D_, double alpha_, Vector d_);
  Dictionary(Matrix D_, double alpha_);  // d = 0

  Index signal_dim() const { return D.rows(); }
  Index atoms() const { return D.cols(); }
};

/// Symmetric matrix inducing the prox metric ||u||_Q = sqrt(u^T Q u).
/// Construction enforces exact symmetry (stores (M + M^T)/2) and finiteness;
/// positive definiteness is checked where it is required (see validate_spd).
class QMetric {
 public:
  explicit QMetric(Matrix Q);

  const Matrix& matrix() const { return q_; }
  Index dim() const { return q_.rows(); }
  double operator()(Index i, Index j) const { return q_(i, j); }

 private:
  Matrix q_;
};

/// Elastic-net regularization weights: lambda ||.||_1 + i_{>=0} + beta/2 ||.||^2.
struct Regularizer {
  double lambda;
  double beta;

  Regularizer(double lambda_, double beta_);
};

/// Affine map x |-> W x - c.
struct AffineTransform {
  Matrix W;  // k_out x k_in
  Vector c;  // k_out

  AffineTransform() = default;  // empty placeholder, to be assigned
  AffineTransform(Matrix W_, Vector c_);

  Index in_dim() const { return W.cols(); }
  Index out_dim() const { return W.rows(); }

  Vector apply(const Vector& x) const { return W * x - c; }
  Matrix apply(const Matrix& X) const { return (W * X).colwise() - c; }
};

/// Parameters of the unrolled prox iteration
///   U_{t+1} = ReLU((h 1^T) .* Z + Wt (U_t - Z) - b 1^T),
/// constrained to diag(Wt) = 0, h in [0,1], b >= 0.
struct RnnCell {
  Matrix Wt;   // k x k, zero diagonal
  Vector h;    // k, entries in [0,1]
  Vector b;    // k, entries >= 0
  int tt_max;  // unrolled step count, >= 1

  RnnCell(Matrix Wt_, Vector h_, Vector b_, int tt_max_);

  Index dim() const { return h.size(); }
};

/// True iff the cell satisfies its constraint sets exactly.
bool cell_feasible(const RnnCell& cell);

/// Q = D^T D + alpha I, re-symmetrized as (M + M^T)/2 after computation.
QMetric metric_from_dictionary(const Dictionary& dict);

struct TransformPair {
  AffineTransform transform;  // W = F = Q^{-1} D^T, c = Q^{-1} d
  QMetric metric;
};

/// F = Q^{-1} D^T and c = Q^{-1} d, computed by Cholesky solves against Q.
/// Throws std::runtime_error when Q is numerically singular.
TransformPair transform_from_dictionary(const Dictionary& dict);

struct SpdReport {
  double symmetry_defect;  // max |q_ij - q_ji|
  double min_diagonal;
  bool factorization_ok;   // Cholesky succeeded

  bool ok() const { return factorization_ok && symmetry_defect == 0.0 && min_diagonal > 0.0; }
};

SpdReport validate_spd(const Matrix& Q);
SpdReport validate_spd(const QMetric& Q);

/// Largest-eigenvalue estimate for a symmetric PSD matrix by power iteration
/// from a seeded random start. Returns the final Rayleigh quotient (a lower
/// bound on lambda_max for symmetric S).
double power_lambda_max(const Matrix& S, int steps, std::uint64_t seed);

}  // namespace detrame
