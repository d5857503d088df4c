#include "detrame/core.hpp"

#include <cmath>
#include <random>

namespace detrame {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

void check_dictionary(const Matrix& D, double alpha, const Vector& d) {
  require(D.size() > 0, "Dictionary: D must be non-empty");
  require(all_finite(D), "Dictionary: D has non-finite entries");
  require(std::isfinite(alpha) && alpha > 0.0, "Dictionary: alpha must be > 0");
  require(d.size() == D.cols(), "Dictionary: d length must equal column count of D");
  require(all_finite(d), "Dictionary: d has non-finite entries");
}

}  // namespace

Dictionary::Dictionary(Matrix D_, double alpha_, Vector d_)
    : D(std::move(D_)), alpha(alpha_), d(std::move(d_)) {
  check_dictionary(D, alpha, d);
}

Dictionary::Dictionary(Matrix D_, double alpha_)
    : D(std::move(D_)), alpha(alpha_), d(Vector::Zero(D.cols())) {
  check_dictionary(D, alpha, d);
}

QMetric::QMetric(Matrix Q) {
  require(Q.rows() == Q.cols(), "QMetric: matrix must be square");
  require(Q.size() > 0, "QMetric: matrix must be non-empty");
  require(all_finite(Q), "QMetric: matrix has non-finite entries");
  q_ = 0.5 * (Q + Q.transpose());
}

Regularizer::Regularizer(double lambda_, double beta_) : lambda(lambda_), beta(beta_) {
  require(std::isfinite(lambda) && lambda > 0.0, "Regularizer: lambda must be > 0");
  require(std::isfinite(beta) && beta > 0.0, "Regularizer: beta must be > 0");
}

AffineTransform::AffineTransform(Matrix W_, Vector c_) : W(std::move(W_)), c(std::move(c_)) {
  require(W.size() > 0, "AffineTransform: W must be non-empty");
  require(all_finite(W), "AffineTransform: W has non-finite entries");
  require(c.size() == W.rows(), "AffineTransform: c length must equal row count of W");
  require(all_finite(c), "AffineTransform: c has non-finite entries");
}

RnnCell::RnnCell(Matrix Wt_, Vector h_, Vector b_, int tt_max_)
    : Wt(std::move(Wt_)), h(std::move(h_)), b(std::move(b_)), tt_max(tt_max_) {
  require(Wt.rows() == Wt.cols(), "RnnCell: Wt must be square");
  require(h.size() == Wt.rows() && b.size() == Wt.rows(),
          "RnnCell: h and b must match the Wt dimension");
  require(all_finite(Wt) && all_finite(h) && all_finite(b),
          "RnnCell: non-finite parameter entries");
  require(tt_max >= 1, "RnnCell: tt_max must be >= 1");
  require(cell_feasible(*this), "RnnCell: constraints violated (diag(Wt)=0, h in [0,1], b >= 0)");
}

bool cell_feasible(const RnnCell& cell) {
  for (Index i = 0; i < cell.Wt.rows(); ++i) {
    if (cell.Wt(i, i) != 0.0) return false;
  }
  for (Index i = 0; i < cell.h.size(); ++i) {
    if (cell.h(i) < 0.0 || cell.h(i) > 1.0) return false;
  }
  for (Index i = 0; i < cell.b.size(); ++i) {
    if (cell.b(i) < 0.0) return false;
  }
  return true;
}

QMetric metric_from_dictionary(const Dictionary& dict) {
  Matrix M = dict.D.transpose() * dict.D;
  M.diagonal().array() += dict.alpha;
  if (!M.allFinite()) {
    throw std::runtime_error("metric_from_dictionary: non-finite result entries");
  }
  return QMetric(std::move(M));  // QMetric symmetrizes
}

TransformPair transform_from_dictionary(const Dictionary& dict) {
  QMetric Q = metric_from_dictionary(dict);
  Eigen::LLT<Matrix> llt(Q.matrix());
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error(
        "transform_from_dictionary: Q factorization failed (ill-conditioned dictionary)");
  }
  Matrix F = llt.solve(dict.D.transpose());
  Vector c = llt.solve(dict.d);
  if (!F.allFinite() || !c.allFinite()) {
    throw std::runtime_error("transform_from_dictionary: non-finite solve result");
  }
  return TransformPair{AffineTransform(std::move(F), std::move(c)), std::move(Q)};
}

SpdReport validate_spd(const Matrix& Q) {
  SpdReport rep{};
  rep.symmetry_defect = (Q - Q.transpose()).cwiseAbs().maxCoeff();
  rep.min_diagonal = Q.diagonal().minCoeff();
  Eigen::LLT<Matrix> llt(0.5 * (Q + Q.transpose()));
  rep.factorization_ok = (llt.info() == Eigen::Success);
  return rep;
}

SpdReport validate_spd(const QMetric& Q) { return validate_spd(Q.matrix()); }

double power_lambda_max(const Matrix& S, int steps, std::uint64_t seed) {
  require(S.rows() == S.cols(), "power_lambda_max: matrix must be square");
  require(steps >= 1, "power_lambda_max: steps must be >= 1");
  const Index n = S.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = gauss(rng);
  double norm = v.norm();
  if (norm == 0.0) v.setOnes(), norm = v.norm();
  v /= norm;
  for (int s = 0; s < steps; ++s) {
    Vector w = S * v;
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;  // S annihilates the iterate; spectrum reachable is 0
    v = w / wn;
  }
  return v.dot(S * v);
}

}  // namespace detrame
