#pragma once

#include <optional>
#include <vector>

#include "detrame/core.hpp"

namespace detrame::qprox {

/// Batched prox instance: argmin_U 1/2 sum_j (u_j - z_j)^T Q (u_j - z_j) + lambda psi(U)
/// with psi = ||.||_1 + i_{>=0} + (beta / (2 lambda)) ||.||_F^2, columns independent.
struct ProxProblem {
  Matrix Z;  // k x N
  QMetric Q;
  Regularizer reg;

  ProxProblem(Matrix Z_, QMetric Q_, Regularizer reg_);

  Index dim() const { return Z.rows(); }
  Index cols() const { return Z.cols(); }
};

/// Cell parameters realizing the prox fixed point:
///   h_i = q_ii / (q_ii + beta), b_i = lambda / (q_ii + beta),
///   Wt_il = -q_il / (q_ii + beta) off the diagonal, Wt_ii = 0.
/// Throws when some q_ii <= 0 (SPD precondition violated).
RnnCell reparameterize(const QMetric& Q, const Regularizer& reg, int tt_max = 3);

/// Unrolled iteration U_{t+1} = ReLU((h 1^T) .* Z + Wt (U_t - Z) - b 1^T) from U_0 = 0.
/// Runs exactly cell.tt_max steps; with early_stop_tol set, stops as soon as the
/// max-entry change of a sweep is <= the tolerance. Columns are processed in parallel.
Matrix qprox_rnn(const ProxProblem& prob, const RnnCell& cell,
                 std::optional<double> early_stop_tol = std::nullopt);

/// Serial whole-matrix reference of the same iteration, kept for testing and
/// benchmarking against the parallel kernel.
Matrix qprox_rnn_serial(const ProxProblem& prob, const RnnCell& cell,
                        std::optional<double> early_stop_tol = std::nullopt);

struct ProxResult {
  Matrix U;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // per-sweep objectives, only when recorded
};

/// Proximal-gradient solver for the prox problem: gradient step U - gamma Q (U - Z)
/// with gamma = 1 / lambda_max(Q) (power-iteration estimate), then the entrywise
/// prox u = ReLU((v - gamma lambda) / (1 + gamma beta)). Stops when the max-entry
/// change is <= tol; `converged` is false when max_iter ran out first.
ProxResult qprox_oracle(const ProxProblem& prob, double tol, int max_iter,
                        const Matrix* start = nullptr, bool record_objective = false);

/// Brute-force verifier for single-column problems with k <= 12: enumerates every
/// support S, solves (Q_SS + beta I) u_S = (Q z)_S - lambda 1, and accepts the
/// support where u_S > 0 and, for i outside S, (Q(u - z))_i + lambda >= 0
/// (tolerance 1e-9). Throws when no support passes.
Vector support_oracle(const ProxProblem& prob);

/// Max-entry deviation of U from one application of the componentwise fixed-point map
///   u_ij = h_i z_ij - v_ij   if q_ii z_ij > (q_ii + beta) v_ij, else 0,
///   v_ij = (lambda + sum_{l != i} q_il (u_lj - z_lj)) / (q_ii + beta).
double fixed_point_residual(const Matrix& U, const ProxProblem& prob);

/// Objective value 1/2 ||U - Z||_{F,Q}^2 + lambda ||U||_1 + beta/2 ||U||_F^2 for U >= 0.
double prox_objective(const Matrix& U, const ProxProblem& prob);

// --- unroll kernels shared with the network layers ---

/// All iterates U_0 .. U_T of the unrolled iteration (T = cell.tt_max), for
/// backpropagation through the unroll. states[t] is the t-th iterate.
std::vector<Matrix> unroll_states(const Matrix& Z, const RnnCell& cell);

struct UnrollGrads {
  Matrix gWt;  // k x k (diagonal entries included; projection handles the constraint)
  Vector gh;   // k
  Vector gb;   // k
  Matrix gZ;   // k x N
};

/// Reverse-mode pass through the unrolled iteration. `states` must come from
/// unroll_states on the same (Z, cell); g_out is dL/dU_T.
UnrollGrads unroll_backward(const std::vector<Matrix>& states, const Matrix& Z,
                            const RnnCell& cell, const Matrix& g_out);

/// Serial whole-matrix reference of the backward pass, kept for testing.
UnrollGrads unroll_backward_serial(const std::vector<Matrix>& states, const Matrix& Z,
                                   const RnnCell& cell, const Matrix& g_out);

}  // namespace detrame::qprox
