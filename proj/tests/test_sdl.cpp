#include <doctest.h>

#include "detrame/sdl.hpp"
#include "helpers.hpp"

using namespace detrame;
using namespace detrame::sdl;
using testing::random_matrix;
using testing::random_unit_dictionary;
using testing::random_vector;

namespace {

Dictionary tall_dictionary(double alpha = 0.1) {
  Matrix D(3, 2);
  D << 1, 0, 0, 1, 1, 1;
  return Dictionary(D, alpha);
}

}  // namespace

TEST_CASE("zero signal codes to zero") {
  const auto sc = sparse_code(tall_dictionary(), Regularizer(0.1, 0.05), Vector::Zero(3), 1e-12,
                              10000);
  CHECK(sc.converged);
  CHECK(sc.a.cwiseAbs().maxCoeff() == 0.0);
  CHECK(sc.objective == 0.0);
}

TEST_CASE("sparse code is nonnegative and decreases the objective") {
  std::mt19937_64 rng(41);
  Dictionary dict(random_unit_dictionary(8, 12, rng), 0.1);
  Regularizer reg(0.05, 0.01);
  const Vector x = random_vector(8, rng);

  const auto sc = sparse_code(dict, reg, x, 1e-10, 100000);
  CHECK(sc.converged);
  CHECK(sc.a.minCoeff() >= 0.0);

  double prev = sparse_code_objective(dict, reg, x, Vector::Zero(12));
  for (int t = 1; t <= 40; ++t) {
    const auto truncated = sparse_code(dict, reg, x, 1e-300, t);
    CHECK(truncated.objective <= prev + 1e-12);
    prev = truncated.objective;
  }
}

TEST_CASE("sparse code reaches the same point from random starts") {
  std::mt19937_64 rng(42);
  Dictionary dict(random_unit_dictionary(8, 12, rng), 0.1);
  Regularizer reg(0.05, 0.01);
  const Vector x = random_vector(8, rng);
  const auto base = sparse_code(dict, reg, x, 1e-11, 200000);
  REQUIRE(base.converged);
  for (int trial = 0; trial < 3; ++trial) {
    const Vector start = random_vector(12, rng).cwiseAbs();
    const auto res = sparse_code(dict, reg, x, 1e-11, 200000, &start);
    REQUIRE(res.converged);
    CHECK((res.a - base.a).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("sparse code agrees with support enumeration through the metric transform") {
  Dictionary dict = tall_dictionary(0.1);
  Regularizer reg(0.1, 0.05);
  Vector x(3);
  x << 1, 2, 3;

  const auto sc = sparse_code(dict, reg, x, 1e-11, 200000);
  REQUIRE(sc.converged);

  auto tp = transform_from_dictionary(dict);
  const Matrix z = tp.transform.W * x - tp.transform.c;
  qprox::ProxProblem prob(z, tp.metric, reg);
  const Vector u = qprox::support_oracle(prob);
  CHECK((sc.a - u).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("exhausted iteration budget is flagged") {
  std::mt19937_64 rng(43);
  Dictionary dict(random_unit_dictionary(8, 12, rng), 0.1);
  const auto sc = sparse_code(dict, Regularizer(0.05, 0.01), random_vector(8, rng), 1e-14, 2);
  CHECK_FALSE(sc.converged);
  CHECK(sc.iterations_used == 2);
  CHECK(sc.a.allFinite());
}

TEST_CASE("support size responds monotonically to the l1 weight") {
  std::mt19937_64 rng(44);
  Dictionary dict(random_unit_dictionary(8, 12, rng), 0.1);
  const Vector x = 3.0 * random_vector(8, rng);
  std::size_t prev_support = 13;
  for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
    const auto sc = sparse_code(dict, Regularizer(lambda, 0.01), x, 1e-11, 200000);
    REQUIRE(sc.converged);
    std::size_t support = 0;
    for (Index i = 0; i < sc.a.size(); ++i) {
      if (sc.a(i) > 1e-10) ++support;
    }
    CHECK(support <= prev_support);
    prev_support = support;
  }
}

TEST_CASE("equivalence check on the zero batch") {
  const auto rep = check_equivalence(tall_dictionary(), Regularizer(0.1, 0.05),
                                     Matrix::Zero(3, 4), 1e-6);
  CHECK(rep.pass);
  CHECK(rep.max_abs_diff == 0.0);
}

TEST_CASE("direct coding equals the metric prox route on random batches") {
  std::mt19937_64 rng(45);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    Dictionary dict(random_unit_dictionary(8, 12, rng), 0.1);
    Regularizer reg(0.05, 0.01);
    const Matrix X = random_matrix(8, 4, rng);
    const auto rep = check_equivalence(dict, reg, X, 1e-6);
    CHECK(rep.pass);
    worst = std::max(worst, rep.max_abs_diff);
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("equivalence holds with a nonzero linear term") {
  std::mt19937_64 rng(46);
  Dictionary dict(random_unit_dictionary(6, 9, rng), 0.2, random_vector(9, rng, 0.1));
  const auto rep = check_equivalence(dict, Regularizer(0.05, 0.02), random_matrix(6, 3, rng),
                                     1e-6);
  CHECK(rep.pass);
}
