#include "detrame/sdl.hpp"

#include <cmath>

namespace detrame::sdl {

namespace {

constexpr std::uint64_t kPowerSeed = 12345;
constexpr int kPowerSteps = 100;

}  // namespace

double sparse_code_objective(const Dictionary& dict, const Regularizer& reg, const Vector& x,
                             const Vector& a) {
  const Vector r = x - dict.D * a;
  return 0.5 * r.squaredNorm() + 0.5 * dict.alpha * a.squaredNorm() + dict.d.dot(a) +
         reg.lambda * a.cwiseAbs().sum() + 0.5 * reg.beta * a.squaredNorm();
}

SparseCode sparse_code(const Dictionary& dict, const Regularizer& reg, const Vector& x,
                       double tol, int max_iter, const Vector* start) {
  if (x.size() != dict.signal_dim()) throw std::invalid_argument("sparse_code: x length mismatch");
  if (!x.allFinite()) throw std::invalid_argument("sparse_code: x has non-finite entries");
  if (tol <= 0.0) throw std::invalid_argument("sparse_code: tol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("sparse_code: max_iter must be >= 1");

  const Index k = dict.atoms();
  const Matrix gram = dict.D.transpose() * dict.D;
  const double lip = power_lambda_max(gram, kPowerSteps, kPowerSeed) + dict.alpha;
  const double gamma = 1.0 / lip;
  const double shrink = 1.0 / (1.0 + gamma * reg.beta);
  const double shift = gamma * reg.lambda;

  Vector a = start ? *start : Vector::Zero(k);
  if (a.size() != k) throw std::invalid_argument("sparse_code: start length mismatch");

  SparseCode out;
  out.converged = false;
  int it = 0;
  const Vector dtx = dict.D.transpose() * x;
  for (it = 1; it <= max_iter; ++it) {
    const Vector grad = gram * a - dtx + dict.alpha * a + dict.d;
    double max_change = 0.0;
    for (Index i = 0; i < k; ++i) {
      const double v = a(i) - gamma * grad(i);
      const double next = std::max((v - shift) * shrink, 0.0);
      max_change = std::max(max_change, std::abs(next - a(i)));
      a(i) = next;
    }
    if (max_change <= tol) {
      out.converged = true;
      break;
    }
  }
  out.a = std::move(a);
  out.objective = sparse_code_objective(dict, reg, x, out.a);
  out.iterations_used = std::min(it, max_iter);
  return out;
}

EquivalenceReport check_equivalence(const Dictionary& dict, const Regularizer& reg,
                                    const Matrix& X, double tol,
                                    double solver_tol, int max_iter) {
  if (X.rows() != dict.signal_dim()) {
    throw std::invalid_argument("check_equivalence: X rows must match dictionary signal dim");
  }
  const Index n = X.cols();
  const Index k = dict.atoms();

  Matrix A1(k, n);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
    A1.col(j) = sparse_code(dict, reg, X.col(j), solver_tol, max_iter).a;
  }

  TransformPair tp = transform_from_dictionary(dict);
  const Matrix Zt = tp.transform.apply(X);  // F X - c 1^T
  qprox::ProxProblem prob(Zt, tp.metric, reg);
  const Matrix A2 = qprox::qprox_oracle(prob, solver_tol, max_iter).U;

  EquivalenceReport rep{};
  rep.max_abs_diff = (A1 - A2).cwiseAbs().maxCoeff();
  rep.tol = tol;
  rep.pass = rep.max_abs_diff <= tol;
  rep.instances = n;
  return rep;
}

}  // namespace detrame::sdl
