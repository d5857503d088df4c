#include <doctest.h>

#include <cmath>

#include "detrame/train.hpp"
#include "helpers.hpp"

using namespace detrame;
using namespace detrame::train;
using testing::random_matrix;
using testing::random_vector;

namespace {

net::Model scalar_model(double w) {
  net::Model m;
  m.input_shape = {1};
  m.class_count = 1;
  m.head = AffineTransform(Matrix::Constant(1, 1, w), Vector::Zero(1));
  return m;
}

/// Two well-separated Gaussian blobs, one per class.
void gaussian_blobs(Index n_per_class, std::uint64_t seed, net::Tensor& X,
                    std::vector<int>& labels) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Index n = 2 * n_per_class;
  X.shape = {2, n};
  X.data.resize(2 * n);
  labels.resize(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const int label = j < n_per_class ? 0 : 1;
    const double cx = label == 0 ? -2.0 : 2.0;
    X.data(2 * j) = cx + 0.5 * gauss(rng);
    X.data(2 * j + 1) = 0.5 * gauss(rng);
    labels[static_cast<std::size_t>(j)] = label;
  }
}

}  // namespace

TEST_CASE("uniform logits give log class-count loss") {
  Matrix logits = Matrix::Zero(2, 1);
  const auto res = softmax_cross_entropy(logits, {0});
  CHECK(res.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("saturated correct prediction has near-zero loss") {
  Matrix logits(2, 1);
  logits << 10, -10;
  const auto res = softmax_cross_entropy(logits, {0});
  CHECK(res.loss <= 1e-4);
  CHECK(res.loss >= 0.0);
}

TEST_CASE("softmax gradient columns sum to zero") {
  std::mt19937_64 rng(71);
  const Matrix logits = random_matrix(5, 6, rng);
  std::vector<int> labels{0, 1, 2, 3, 4, 0};
  const auto res = softmax_cross_entropy(logits, labels);
  for (Index j = 0; j < 6; ++j) {
    CHECK(std::abs(res.grad_logits.col(j).sum()) <= 1e-15);
  }
}

TEST_CASE("softmax is numerically stable at extreme logits") {
  Matrix logits(2, 1);
  logits << 1e4, -1e4;
  const auto res = softmax_cross_entropy(logits, {0});
  CHECK(std::isfinite(res.loss));
  CHECK(res.loss >= 0.0);
  CHECK(res.grad_logits.allFinite());
}

TEST_CASE("out-of-range labels are rejected") {
  Matrix logits = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1, 0}), std::invalid_argument);
}

TEST_CASE("projection zeroes diagonals and clamps boxes") {
  std::mt19937_64 rng(72);
  net::Model m = net::make_mlp(2, {3}, 2, true, 2, rng);
  auto& cell = std::get<net::QMetricAct>(m.layers[0].act).cell;
  cell.Wt << 1, 2, 5, 3, 4, 6, 7, 8, 9;
  cell.h << -0.2, 0.5, 1.7;
  cell.b << -1e-9, 3, 0.5;

  project_params(m);
  Matrix expected_wt(3, 3);
  expected_wt << 0, 2, 5, 3, 0, 6, 7, 8, 0;
  CHECK((cell.Wt - expected_wt).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cell.h(0) == 0.0);
  CHECK(cell.h(1) == 0.5);
  CHECK(cell.h(2) == 1.0);
  CHECK(cell.b(0) == 0.0);
  CHECK(cell.b(1) == 3.0);
  CHECK(cell.b(2) == 0.5);
}

TEST_CASE("projection is idempotent") {
  std::mt19937_64 rng(73);
  net::Model m = net::make_mlp(3, {4, 4}, 2, true, 2, rng);
  for (auto& layer : m.layers) {
    auto& cell = std::get<net::QMetricAct>(layer.act).cell;
    cell.Wt = random_matrix(4, 4, rng);
    cell.h = 3.0 * random_vector(4, rng);
    cell.b = random_vector(4, rng);
  }
  project_params(m);
  net::Model once = m;
  project_params(m);
  auto va = net::param_views(once);
  auto vb = net::param_views(m);
  for (std::size_t p = 0; p < va.size(); ++p) {
    CHECK((Eigen::Map<Vector>(va[p].data, va[p].size) -
           Eigen::Map<Vector>(vb[p].data, vb[p].size))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("zero gradients leave a feasible model unchanged") {
  std::mt19937_64 rng(74);
  net::Model m = net::make_mlp(2, {3}, 2, true, 2, rng);
  net::Model before = m;
  sgd_step(m, net::zero_gradients(m), 0.7);
  auto va = net::param_views(before);
  auto vb = net::param_views(m);
  for (std::size_t p = 0; p < va.size(); ++p) {
    CHECK((Eigen::Map<Vector>(va[p].data, va[p].size) -
           Eigen::Map<Vector>(vb[p].data, vb[p].size))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("scalar gradient step") {
  net::Model m = scalar_model(1.0);
  net::Gradients g = net::zero_gradients(m);
  g.by_name("head.W")(0) = 2.0;
  sgd_step(m, g, 0.1);
  CHECK(m.head.W(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("non-finite gradients are rejected") {
  net::Model m = scalar_model(1.0);
  net::Gradients g = net::zero_gradients(m);
  g.by_name("head.W")(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(sgd_step(m, g, 0.1), std::runtime_error);
}

TEST_CASE("cells stay feasible across random projected steps") {
  std::mt19937_64 rng(75);
  net::Model m = net::make_mlp(3, {5, 4}, 2, true, 3, rng);
  for (int step = 0; step < 100; ++step) {
    net::Gradients g = net::zero_gradients(m);
    for (auto& v : g.values) v = random_vector(v.size(), rng, 2.0);
    sgd_step(m, g, 0.05);
    for (const auto& layer : m.layers) {
      const auto& cell = std::get<net::QMetricAct>(layer.act).cell;
      REQUIRE(cell_feasible(cell));
    }
  }
}

TEST_CASE("momentum zero reproduces plain sgd bit for bit") {
  std::mt19937_64 rng(76);
  net::Model a = net::make_mlp(3, {4}, 2, true, 2, rng);
  net::Model b = a;
  Sgd opt(0.0);
  for (int step = 0; step < 5; ++step) {
    net::Gradients g = net::zero_gradients(a);
    for (auto& v : g.values) v = random_vector(v.size(), rng);
    sgd_step(a, g, 0.1);
    opt.step(b, g, 0.1);
  }
  auto va = net::param_views(a);
  auto vb = net::param_views(b);
  for (std::size_t p = 0; p < va.size(); ++p) {
    CHECK((Eigen::Map<Vector>(va[p].data, va[p].size) -
           Eigen::Map<Vector>(vb[p].data, vb[p].size))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("loss decreases on a convex probe") {
  std::mt19937_64 rng(77);
  net::Tensor X;
  std::vector<int> labels;
  gaussian_blobs(20, 78, X, labels);

  net::Model m;
  m.input_shape = {2};
  m.class_count = 2;
  m.head = AffineTransform(0.01 * random_matrix(2, 2, rng), Vector::Zero(2));

  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 10; ++step) {
    net::Cache cache;
    const Matrix logits = net::forward(m, X, &cache);
    const auto xent = softmax_cross_entropy(logits, labels);
    CHECK(xent.loss <= prev + 1e-12);
    prev = xent.loss;
    const auto grads = net::backward(m, cache, xent.grad_logits);
    sgd_step(m, grads, 0.05);
  }
}

TEST_CASE("learning rate schedule applies step decay") {
  LrSchedule lr{0.5, 0.1, {10, 20}};
  CHECK(lr.at(0) == 0.5);
  CHECK(lr.at(9) == 0.5);
  CHECK(lr.at(10) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(lr.at(25) == doctest::Approx(0.005).epsilon(1e-12));
}

TEST_CASE("zero learning rate leaves parameters at their projection") {
  std::mt19937_64 rng(79);
  net::Tensor X;
  std::vector<int> labels;
  gaussian_blobs(10, 80, X, labels);

  net::Model m = net::make_mlp(2, {3}, 2, true, 2, rng);
  net::Model before = m;

  TrainConfig tc;
  tc.lr.initial = 0.0;
  tc.epochs = 1;
  tc.batch_size = 8;
  tc.seed = 5;
  train_loop(m, X, labels, X, labels, tc);

  auto va = net::param_views(before);
  auto vb = net::param_views(m);
  for (std::size_t p = 0; p < va.size(); ++p) {
    CHECK((Eigen::Map<Vector>(va[p].data, va[p].size) -
           Eigen::Map<Vector>(vb[p].data, vb[p].size))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("head-only model separates gaussian blobs") {
  net::Tensor X, Xt;
  std::vector<int> labels, labels_t;
  gaussian_blobs(50, 81, X, labels);
  gaussian_blobs(50, 82, Xt, labels_t);

  std::mt19937_64 rng(83);
  net::Model m;
  m.input_shape = {2};
  m.class_count = 2;
  m.head = AffineTransform(0.01 * random_matrix(2, 2, rng), Vector::Zero(2));

  TrainConfig tc;
  tc.lr.initial = 0.5;
  tc.epochs = 50;
  tc.batch_size = 16;
  tc.seed = 9;
  const History hist = train_loop(m, X, labels, Xt, labels_t, tc);
  CHECK(hist.epochs.size() == 50);
  CHECK(hist.epochs.back().train_acc >= 0.99);
}

TEST_CASE("training is deterministic given the seed") {
  net::Tensor X, Xt;
  std::vector<int> labels, labels_t;
  gaussian_blobs(20, 84, X, labels);
  gaussian_blobs(20, 85, Xt, labels_t);

  TrainConfig tc;
  tc.lr.initial = 0.2;
  tc.epochs = 5;
  tc.batch_size = 8;
  tc.seed = 11;

  std::mt19937_64 rng_a(12), rng_b(12);
  net::Model a = net::make_mlp(2, {4}, 2, true, 2, rng_a);
  net::Model b = net::make_mlp(2, {4}, 2, true, 2, rng_b);
  const History ha = train_loop(a, X, labels, Xt, labels_t, tc);
  const History hb = train_loop(b, X, labels, Xt, labels_t, tc);

  REQUIRE(ha.epochs.size() == hb.epochs.size());
  for (std::size_t e = 0; e < ha.epochs.size(); ++e) {
    CHECK(ha.epochs[e].train_loss == hb.epochs[e].train_loss);
    CHECK(ha.epochs[e].train_acc == hb.epochs[e].train_acc);
    CHECK(ha.epochs[e].test_acc == hb.epochs[e].test_acc);
  }
  auto va = net::param_views(a);
  auto vb = net::param_views(b);
  for (std::size_t p = 0; p < va.size(); ++p) {
    CHECK((Eigen::Map<Vector>(va[p].data, va[p].size) -
           Eigen::Map<Vector>(vb[p].data, vb[p].size))
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}
