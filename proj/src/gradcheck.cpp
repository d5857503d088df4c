#include "detrame/gradcheck.hpp"

#include <random>

#include "detrame/net.hpp"
#include "detrame/train.hpp"

namespace detrame::gradcheck {

namespace {

using detrame::Index;
using detrame::Matrix;
using detrame::Vector;

constexpr double kEps = 1e-5;

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng) * scale;
  return m;
}

net::ParamView view_of(const char* name, Matrix& m) {
  return {name, m.data(), {m.rows(), m.cols()}, m.size()};
}

net::ParamView view_of(const char* name, Vector& v) {
  return {name, v.data(), {v.size()}, v.size()};
}

GradCheckCase make_case(std::string name, double err, double threshold) {
  return {std::move(name), err, threshold, err <= threshold};
}

GradCheckCase check_dense(std::mt19937_64& rng) {
  const Index out = 5, in = 4, n = 3;
  Matrix W = random_matrix(out, in, rng);
  Vector c = random_matrix(out, 1, rng).col(0);
  const Matrix X = random_matrix(in, n, rng);
  const Matrix P = random_matrix(out, n, rng);

  auto value = [&]() { return (((W * X).colwise() - c).array() * P.array()).sum(); };
  std::vector<net::ParamView> params{view_of("W", W), view_of("c", c)};
  std::vector<Vector> analytic;
  const Matrix gW = P * X.transpose();
  analytic.emplace_back(Eigen::Map<const Vector>(gW.data(), gW.size()));
  analytic.emplace_back(-P.rowwise().sum());
  return make_case("dense_affine", net::finite_diff_check(value, params, analytic, kEps), 1e-8);
}

GradCheckCase check_relu(std::mt19937_64& rng) {
  const Index k = 6, n = 4;
  // Keep probes away from the kink: |z| >= 0.1.
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Matrix Z(k, n);
  for (Index i = 0; i < Z.size(); ++i) Z.data()[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  const Matrix P = random_matrix(k, n, rng);

  auto value = [&]() { return (Z.cwiseMax(0.0).array() * P.array()).sum(); };
  std::vector<net::ParamView> params{view_of("Z", Z)};
  const Matrix g = (Z.array() > 0.0).select(P, Matrix::Zero(k, n));
  std::vector<Vector> analytic{Eigen::Map<const Vector>(g.data(), g.size())};
  return make_case("relu", net::finite_diff_check(value, params, analytic, kEps), 1e-6);
}

GradCheckCase check_conv2d(std::mt19937_64& rng) {
  net::Conv2D op = net::make_conv(4, 3, 3, 3, 2, 1, rng);
  net::Tensor input = net::tensor_image(2, 3, 6, 5);
  input.data = random_matrix(input.size(), 1, rng).col(0);
  net::Tensor P = net::conv2d_apply(op, input);
  P.data = random_matrix(P.size(), 1, rng).col(0);

  auto value = [&]() { return net::conv2d_apply(op, input).data.dot(P.data); };
  std::vector<net::ParamView> params{view_of("kernel", op.kernel), view_of("bias", op.bias),
                                     view_of("input", input.data)};
  auto grads = net::conv2d_backward(op, input, P);
  std::vector<Vector> analytic{grads.gkernel, grads.gbias, grads.ginput.data};
  // Linear in every parameter, so the residual is pure roundoff; small-magnitude
  // gradient entries push the relative error above the dense case.
  return make_case("conv2d", net::finite_diff_check(value, params, analytic, kEps), 1e-5);
}

GradCheckCase check_qmetric_cell(std::mt19937_64& rng) {
  const Index k = 4, n = 3;
  Matrix Wt = random_matrix(k, k, rng, 0.3);
  Wt.diagonal().setZero();
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  Vector h(k), b(k);
  for (Index i = 0; i < k; ++i) {
    h(i) = unit(rng);
    b(i) = 0.1 * unit(rng);
  }
  RnnCell cell(Wt, h, b, 3);
  Matrix Z = random_matrix(k, n, rng);
  const Matrix P = random_matrix(k, n, rng);

  auto value = [&]() {
    // The finite-difference probe may leave the constraint set (nonzero Wt
    // diagonal); construct a feasible cell, then restore the raw parameters.
    Matrix wt_clean = cell.Wt;
    wt_clean.diagonal().setZero();
    RnnCell probe(std::move(wt_clean), cell.h, cell.b, cell.tt_max);
    probe.Wt = cell.Wt;
    auto states = qprox::unroll_states(Z, probe);
    return (states.back().array() * P.array()).sum();
  };
  std::vector<net::ParamView> params;
  params.push_back({"cell.Wt", cell.Wt.data(), {k, k}, k * k});
  params.push_back({"cell.h", cell.h.data(), {k}, k});
  params.push_back({"cell.b", cell.b.data(), {k}, k});
  params.push_back({"Z", Z.data(), {k, n}, k * n});

  auto states = qprox::unroll_states(Z, cell);
  auto ug = qprox::unroll_backward(states, Z, cell, P);
  std::vector<Vector> analytic;
  analytic.emplace_back(Eigen::Map<const Vector>(ug.gWt.data(), ug.gWt.size()));
  analytic.emplace_back(ug.gh);
  analytic.emplace_back(ug.gb);
  analytic.emplace_back(Eigen::Map<const Vector>(ug.gZ.data(), ug.gZ.size()));
  return make_case("qmetric_cell", net::finite_diff_check(value, params, analytic, kEps), 1e-4);
}

GradCheckCase check_softmax(std::mt19937_64& rng) {
  const Index c = 5, n = 7;
  Matrix logits = random_matrix(c, n, rng);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(c) - 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = pick(rng);

  auto value = [&]() { return train::softmax_cross_entropy(logits, labels).loss; };
  std::vector<net::ParamView> params{view_of("logits", logits)};
  const Matrix g = train::softmax_cross_entropy(logits, labels).grad_logits;
  std::vector<Vector> analytic{Eigen::Map<const Vector>(g.data(), g.size())};
  return make_case("softmax_xent", net::finite_diff_check(value, params, analytic, kEps), 1e-6);
}

GradCheckCase check_model(std::string name, net::Model& model, const net::Tensor& X,
                          const std::vector<int>& labels, double threshold) {
  auto value = [&]() {
    return train::softmax_cross_entropy(net::forward(model, X), labels).loss;
  };
  auto params = net::param_views(model);
  net::Cache cache;
  const Matrix logits = net::forward(model, X, &cache);
  auto xent = train::softmax_cross_entropy(logits, labels);
  auto grads = net::backward(model, cache, xent.grad_logits);
  return make_case(std::move(name), net::finite_diff_check(value, params, grads.values, kEps),
                   threshold);
}

std::vector<int> random_labels(Index n, Index classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& y : labels) y = pick(rng);
  return labels;
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> cases;
  cases.push_back(check_dense(rng));
  cases.push_back(check_relu(rng));
  cases.push_back(check_conv2d(rng));
  cases.push_back(check_qmetric_cell(rng));
  cases.push_back(check_softmax(rng));

  {
    net::Model model = net::make_mlp(4, {6, 5}, 3, /*qmetric=*/true, /*tt_max=*/3, rng);
    net::Tensor X = net::tensor_from_matrix(random_matrix(4, 4, rng));
    cases.push_back(check_model("model_detrame_2layer", model, X, random_labels(4, 3, rng), 1e-4));
  }
  {
    net::Model model = net::make_mlp(4, {6, 5}, 3, /*qmetric=*/false, /*tt_max=*/3, rng);
    net::Tensor X = net::tensor_from_matrix(random_matrix(4, 4, rng));
    cases.push_back(check_model("model_relu_2layer", model, X, random_labels(4, 3, rng), 1e-4));
  }
  {
    net::Model model = net::make_mlp_from_dictionaries(4, {6, 5}, 3, 0.1, Regularizer(0.05, 0.01),
                                                       3, rng);
    net::Tensor X = net::tensor_from_matrix(random_matrix(4, 4, rng));
    cases.push_back(check_model("model_dict_init", model, X, random_labels(4, 3, rng), 1e-4));
  }
  {
    // Conv front end with a shared channel-vector activation and a flatten.
    net::Model model;
    model.input_shape = {1, 5, 5};
    model.class_count = 2;
    net::Conv2D conv = net::make_conv(3, 1, 3, 3, 1, 1, rng);
    net::Layer layer{std::move(conv), net::QMetricAct{net::default_cell(3, 2)},
                     net::Reshape{{3, 5, 5}, {75}}};
    model.layers.push_back(std::move(layer));
    net::Dense head = net::make_dense(2, 75, rng);
    model.head = AffineTransform(std::move(head.W), std::move(head.c));
    net::Tensor X = net::tensor_image(2, 1, 5, 5);
    X.data = random_matrix(X.size(), 1, rng).col(0);
    cases.push_back(check_model("model_conv_qmetric", model, X, random_labels(2, 2, rng), 1e-4));
  }
  return cases;
}

bool all_pass(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases) {
    if (!c.pass) return false;
  }
  return true;
}

}  // namespace detrame::gradcheck
