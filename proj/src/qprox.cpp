#include "detrame/qprox.hpp"

#include <cmath>
#include <cstdint>

namespace detrame::qprox {

namespace {

constexpr std::uint64_t kPowerSeed = 12345;
constexpr int kPowerSteps = 50;
constexpr double kKktTol = 1e-9;

}  // namespace

ProxProblem::ProxProblem(Matrix Z_, QMetric Q_, Regularizer reg_)
    : Z(std::move(Z_)), Q(std::move(Q_)), reg(reg_) {
  if (Z.cols() < 1) throw std::invalid_argument("ProxProblem: Z needs at least one column");
  if (!Z.allFinite()) throw std::invalid_argument("ProxProblem: Z has non-finite entries");
  if (Z.rows() != Q.dim()) throw std::invalid_argument("ProxProblem: Z rows must match Q dimension");
}

RnnCell reparameterize(const QMetric& Q, const Regularizer& reg, int tt_max) {
  const Index k = Q.dim();
  const Matrix& Qm = Q.matrix();
  Matrix Wt = Matrix::Zero(k, k);
  Vector h(k), b(k);
  for (Index i = 0; i < k; ++i) {
    const double qii = Qm(i, i);
    if (qii <= 0.0) {
      throw std::invalid_argument("reparameterize: q_ii <= 0 violates the SPD precondition");
    }
    const double denom = qii + reg.beta;
    h(i) = qii / denom;
    b(i) = reg.lambda / denom;
    for (Index l = 0; l < k; ++l) {
      if (l != i) Wt(i, l) = -Qm(i, l) / denom;
    }
  }
  return RnnCell(std::move(Wt), std::move(h), std::move(b), tt_max);
}

namespace {

// Columns are independent; work is split into fixed-size column blocks so the
// arithmetic (and therefore every bit of the result) does not depend on the
// thread count.
constexpr Index kColsPerBlock = 64;

inline Index block_count(Index n) { return (n + kColsPerBlock - 1) / kColsPerBlock; }

void check_cell_shapes(const ProxProblem& prob, const RnnCell& cell) {
  if (cell.dim() != prob.dim()) {
    throw std::invalid_argument("qprox_rnn: cell dimension does not match problem");
  }
}

// One sweep of U_{t+1} = ReLU((h 1^T).*Z + Wt (U_t - Z) - b 1^T), in place.
// Returns the max-entry change of the sweep.
double rnn_sweep(Matrix& U, const Matrix& Z, const RnnCell& cell) {
  const Index n = Z.cols();
  const Index nblocks = block_count(n);
  double max_change = 0.0;
#pragma omp parallel for schedule(dynamic) reduction(max : max_change)
  for (Index blk = 0; blk < nblocks; ++blk) {
    const Index j0 = blk * kColsPerBlock;
    const Index cnt = std::min(kColsPerBlock, n - j0);
    auto Ub = U.middleCols(j0, cnt);
    const auto Zb = Z.middleCols(j0, cnt);
    Matrix S = ((Zb.array().colwise() * cell.h.array()).colwise() - cell.b.array()).matrix();
    S.noalias() += cell.Wt * (Ub - Zb);
    double local = 0.0;
    for (Index j = 0; j < cnt; ++j) {
      for (Index i = 0; i < S.rows(); ++i) {
        const double next = S(i, j) > 0.0 ? S(i, j) : 0.0;
        local = std::max(local, std::abs(next - Ub(i, j)));
        Ub(i, j) = next;
      }
    }
    max_change = std::max(max_change, local);
  }
  return max_change;
}

}  // namespace

Matrix qprox_rnn(const ProxProblem& prob, const RnnCell& cell,
                 std::optional<double> early_stop_tol) {
  check_cell_shapes(prob, cell);
  Matrix U = Matrix::Zero(prob.dim(), prob.cols());
  for (int t = 0; t < cell.tt_max; ++t) {
    const double change = rnn_sweep(U, prob.Z, cell);
    if (early_stop_tol && change <= *early_stop_tol) break;
  }
  return U;
}

Matrix qprox_rnn_serial(const ProxProblem& prob, const RnnCell& cell,
                        std::optional<double> early_stop_tol) {
  check_cell_shapes(prob, cell);
  const Matrix& Z = prob.Z;
  const Matrix HZ_B =
      ((Z.array().colwise() * cell.h.array()).colwise() - cell.b.array()).matrix();
  Matrix U = Matrix::Zero(prob.dim(), prob.cols());
  for (int t = 0; t < cell.tt_max; ++t) {
    Matrix S = HZ_B + cell.Wt * (U - Z);
    Matrix next = S.cwiseMax(0.0);
    if (early_stop_tol) {
      const double change = (next - U).cwiseAbs().maxCoeff();
      U.swap(next);
      if (change <= *early_stop_tol) break;
    } else {
      U.swap(next);
    }
  }
  return U;
}

double prox_objective(const Matrix& U, const ProxProblem& prob) {
  const Matrix R = U - prob.Z;
  double quad = 0.0;
  for (Index j = 0; j < R.cols(); ++j) {
    quad += R.col(j).dot(prob.Q.matrix() * R.col(j));
  }
  return 0.5 * quad + prob.reg.lambda * U.cwiseAbs().sum() +
         0.5 * prob.reg.beta * U.squaredNorm();
}

ProxResult qprox_oracle(const ProxProblem& prob, double tol, int max_iter, const Matrix* start,
                        bool record_objective) {
  if (tol <= 0.0) throw std::invalid_argument("qprox_oracle: tol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("qprox_oracle: max_iter must be >= 1");

  const Index k = prob.dim();
  const Index n = prob.cols();
  const Matrix& Qm = prob.Q.matrix();
  const double lam_max = power_lambda_max(Qm, kPowerSteps, kPowerSeed);
  if (!(lam_max > 0.0)) {
    throw std::runtime_error("qprox_oracle: non-positive spectral estimate for Q");
  }
  const double gamma = 1.0 / lam_max;
  const double shrink = 1.0 / (1.0 + gamma * prob.reg.beta);
  const double shift = gamma * prob.reg.lambda;

  ProxResult res;
  if (start) {
    if (start->rows() != k || start->cols() != n) {
      throw std::invalid_argument("qprox_oracle: start shape mismatch");
    }
    res.U = *start;
  } else {
    res.U = Matrix::Zero(k, n);
  }
  if (record_objective) {
    res.objective_trace.reserve(64);
    res.objective_trace.push_back(prox_objective(res.U, prob));
  }

  const Index nblocks = block_count(n);
  for (int it = 1; it <= max_iter; ++it) {
    double max_change = 0.0;
#pragma omp parallel for schedule(dynamic) reduction(max : max_change)
    for (Index blk = 0; blk < nblocks; ++blk) {
      const Index j0 = blk * kColsPerBlock;
      const Index cnt = std::min(kColsPerBlock, n - j0);
      auto Ub = res.U.middleCols(j0, cnt);
      Matrix grad = Qm * (Ub - prob.Z.middleCols(j0, cnt));
      double local = 0.0;
      for (Index j = 0; j < cnt; ++j) {
        for (Index i = 0; i < k; ++i) {
          const double v = Ub(i, j) - gamma * grad(i, j);
          const double u = std::max((v - shift) * shrink, 0.0);
          local = std::max(local, std::abs(u - Ub(i, j)));
          Ub(i, j) = u;
        }
      }
      max_change = std::max(max_change, local);
    }
    res.iterations = it;
    if (record_objective) res.objective_trace.push_back(prox_objective(res.U, prob));
    if (max_change <= tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

Vector support_oracle(const ProxProblem& prob) {
  if (prob.cols() != 1) throw std::invalid_argument("support_oracle: single-column problems only");
  const Index k = prob.dim();
  if (k > 12) throw std::invalid_argument("support_oracle: k must be <= 12 (2^k enumeration)");

  const Matrix& Qm = prob.Q.matrix();
  const Vector z = prob.Z.col(0);
  const Vector Qz = Qm * z;
  const double lambda = prob.reg.lambda;
  const double beta = prob.reg.beta;

  std::vector<Index> support;
  support.reserve(static_cast<std::size_t>(k));
  for (std::uint32_t mask = 0; mask < (1u << k); ++mask) {
    support.clear();
    for (Index i = 0; i < k; ++i) {
      if (mask & (1u << i)) support.push_back(i);
    }

    Vector u = Vector::Zero(k);
    if (!support.empty()) {
      const Index s = static_cast<Index>(support.size());
      Matrix A(s, s);
      Vector rhs(s);
      for (Index a = 0; a < s; ++a) {
        rhs(a) = Qz(support[a]) - lambda;
        for (Index b2 = 0; b2 < s; ++b2) {
          A(a, b2) = Qm(support[a], support[b2]);
        }
        A(a, a) += beta;
      }
      Eigen::LLT<Matrix> llt(A);
      if (llt.info() != Eigen::Success) continue;
      const Vector us = llt.solve(rhs);
      if ((us.array() < -kKktTol).any()) continue;
      for (Index a = 0; a < s; ++a) u(support[a]) = std::max(us(a), 0.0);
    }

    const Vector grad = Qm * (u - z);
    bool kkt_ok = true;
    for (Index i = 0; i < k && kkt_ok; ++i) {
      if (!(mask & (1u << i))) {
        kkt_ok = grad(i) + lambda >= -kKktTol;
      }
    }
    if (kkt_ok) return u;
  }
  throw std::runtime_error("support_oracle: no support satisfies KKT within tolerance");
}

double fixed_point_residual(const Matrix& U, const ProxProblem& prob) {
  if (U.rows() != prob.dim() || U.cols() != prob.cols()) {
    throw std::invalid_argument("fixed_point_residual: shape mismatch");
  }
  const Matrix& Qm = prob.Q.matrix();
  const Index k = prob.dim();
  const Index n = prob.cols();
  const double lambda = prob.reg.lambda;
  const double beta = prob.reg.beta;

  double residual = 0.0;
#pragma omp parallel for schedule(static) reduction(max : residual)
  for (Index j = 0; j < n; ++j) {
    const Vector diff = U.col(j) - prob.Z.col(j);
    const Vector w = Qm * diff;
    double local = 0.0;
    for (Index i = 0; i < k; ++i) {
      const double qii = Qm(i, i);
      const double denom = qii + beta;
      const double v = (lambda + (w(i) - qii * diff(i))) / denom;
      const double mapped = (qii * prob.Z(i, j) > denom * v) ? (qii / denom) * prob.Z(i, j) - v : 0.0;
      local = std::max(local, std::abs(U(i, j) - mapped));
    }
    residual = std::max(residual, local);
  }
  return residual;
}

std::vector<Matrix> unroll_states(const Matrix& Z, const RnnCell& cell) {
  if (Z.rows() != cell.dim()) throw std::invalid_argument("unroll_states: shape mismatch");
  const Index k = Z.rows();
  const Index n = Z.cols();
  std::vector<Matrix> states;
  states.reserve(static_cast<std::size_t>(cell.tt_max) + 1);
  states.push_back(Matrix::Zero(k, n));
  for (int t = 0; t < cell.tt_max; ++t) {
    states.push_back(states.back());
    rnn_sweep(states.back(), Z, cell);
  }
  return states;
}

UnrollGrads unroll_backward(const std::vector<Matrix>& states, const Matrix& Z,
                            const RnnCell& cell, const Matrix& g_out) {
  const Index k = Z.rows();
  const Index n = Z.cols();
  if (states.size() != static_cast<std::size_t>(cell.tt_max) + 1) {
    throw std::invalid_argument("unroll_backward: stale state cache");
  }
  if (g_out.rows() != k || g_out.cols() != n) {
    throw std::invalid_argument("unroll_backward: g_out shape mismatch");
  }

  UnrollGrads grads;
  grads.gWt = Matrix::Zero(k, k);
  grads.gh = Vector::Zero(k);
  grads.gb = Vector::Zero(k);
  grads.gZ = Matrix::Zero(k, n);

  // Per-block accumulators keep every reduction inside one fixed column block;
  // the final block-order combine is serial, so results are independent of the
  // thread count.
  const Index nblocks = block_count(n);
  std::vector<Matrix> gWt_blk(static_cast<std::size_t>(nblocks), Matrix::Zero(k, k));
  std::vector<Vector> gh_blk(static_cast<std::size_t>(nblocks), Vector::Zero(k));
  std::vector<Vector> gb_blk(static_cast<std::size_t>(nblocks), Vector::Zero(k));

  Matrix G = g_out;
  Matrix M(k, n);
  Matrix P(k, n);
  for (int t = cell.tt_max - 1; t >= 0; --t) {
    const Matrix& post = states[static_cast<std::size_t>(t) + 1];  // U_{t+1} = ReLU(S_t)
    const Matrix& pre = states[static_cast<std::size_t>(t)];       // U_t

#pragma omp parallel for schedule(dynamic)
    for (Index blk = 0; blk < nblocks; ++blk) {
      const Index j0 = blk * kColsPerBlock;
      const Index cnt = std::min(kColsPerBlock, n - j0);
      auto Mb = M.middleCols(j0, cnt);
      const auto postb = post.middleCols(j0, cnt);
      const auto preb = pre.middleCols(j0, cnt);
      const auto Zb = Z.middleCols(j0, cnt);
      const auto Gb = G.middleCols(j0, cnt);

      Mb = (postb.array() > 0.0).select(Gb, Matrix::Zero(k, cnt));
      gh_blk[blk] += (Mb.array() * Zb.array()).rowwise().sum().matrix();
      gb_blk[blk] -= Mb.rowwise().sum();
      gWt_blk[blk].noalias() += Mb * (preb - Zb).transpose();

      auto Pb = P.middleCols(j0, cnt);
      Pb.noalias() = cell.Wt.transpose() * Mb;
      grads.gZ.middleCols(j0, cnt).array() += (Mb.array().colwise() * cell.h.array()) - Pb.array();
    }
    G.swap(P);
  }

  for (Index blk = 0; blk < nblocks; ++blk) {
    grads.gWt += gWt_blk[static_cast<std::size_t>(blk)];
    grads.gh += gh_blk[static_cast<std::size_t>(blk)];
    grads.gb += gb_blk[static_cast<std::size_t>(blk)];
  }
  return grads;
}

UnrollGrads unroll_backward_serial(const std::vector<Matrix>& states, const Matrix& Z,
                                   const RnnCell& cell, const Matrix& g_out) {
  const Index k = Z.rows();
  const Index n = Z.cols();
  if (states.size() != static_cast<std::size_t>(cell.tt_max) + 1) {
    throw std::invalid_argument("unroll_backward_serial: stale state cache");
  }

  UnrollGrads grads;
  grads.gWt = Matrix::Zero(k, k);
  grads.gh = Vector::Zero(k);
  grads.gb = Vector::Zero(k);
  grads.gZ = Matrix::Zero(k, n);

  Matrix G = g_out;
  for (int t = cell.tt_max - 1; t >= 0; --t) {
    const Matrix& post = states[static_cast<std::size_t>(t) + 1];
    const Matrix& pre = states[static_cast<std::size_t>(t)];
    const Matrix M = (post.array() > 0.0).select(G, Matrix::Zero(k, n));
    grads.gh += (M.array() * Z.array()).rowwise().sum().matrix();
    grads.gb -= M.rowwise().sum();
    grads.gWt += M * (pre - Z).transpose();
    const Matrix P = cell.Wt.transpose() * M;
    grads.gZ += (M.array().colwise() * cell.h.array()).matrix() - P;
    G = P;
  }
  return grads;
}

}  // namespace detrame::qprox
