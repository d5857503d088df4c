#include "detrame/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace detrame::train {

double LrSchedule::at(int epoch) const {
  double rho = initial;
  for (int e : decay_epochs) {
    if (epoch >= e) rho *= decay_factor;
  }
  return rho;
}

XentResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  const Index c = logits.rows();
  const Index n = logits.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) throw std::invalid_argument("softmax_cross_entropy: label out of range");
  }

  XentResult res;
  res.grad_logits.resize(c, n);
  Vector col_loss(n);
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
    const double m = logits.col(j).maxCoeff();
    Vector e = (logits.col(j).array() - m).exp();
    const double sum = e.sum();
    col_loss(j) = -(logits(labels[j], j) - m) + std::log(sum);
    res.grad_logits.col(j) = e / (sum * static_cast<double>(n));
    res.grad_logits(labels[j], j) -= 1.0 / static_cast<double>(n);
  }
  double total = 0.0;
  for (Index j = 0; j < n; ++j) total += col_loss(j);
  res.loss = total / static_cast<double>(n);
  return res;
}

void project_params(net::Model& model) {
  for (auto& layer : model.layers) {
    auto* qa = std::get_if<net::QMetricAct>(&layer.act);
    if (!qa) continue;
    RnnCell& cell = qa->cell;
    cell.Wt.diagonal().setZero();
    cell.h = cell.h.cwiseMax(0.0).cwiseMin(1.0);
    cell.b = cell.b.cwiseMax(0.0);
  }
}

namespace {

void apply_update(net::Model& model, const std::vector<Vector>& deltas, double rho) {
  auto views = net::param_views(model);
  if (views.size() != deltas.size()) {
    throw std::invalid_argument("sgd: gradient group count mismatch");
  }
  for (std::size_t p = 0; p < views.size(); ++p) {
    if (deltas[p].size() != views[p].size) {
      throw std::invalid_argument("sgd: gradient shape mismatch for " + views[p].name);
    }
    if (!deltas[p].allFinite()) {
      throw std::runtime_error("sgd: non-finite gradient for " + views[p].name +
                               " (training divergence)");
    }
    Eigen::Map<Vector>(views[p].data, views[p].size) -= rho * deltas[p];
  }
  project_params(model);
}

}  // namespace

void sgd_step(net::Model& model, const net::Gradients& grads, double rho) {
  apply_update(model, grads.values, rho);
}

void Sgd::step(net::Model& model, const net::Gradients& grads, double rho) {
  if (momentum_ == 0.0) {
    apply_update(model, grads.values, rho);
    return;
  }
  if (velocity_.empty()) {
    velocity_.reserve(grads.values.size());
    for (const auto& v : grads.values) velocity_.emplace_back(Vector::Zero(v.size()));
  }
  if (velocity_.size() != grads.values.size()) {
    throw std::invalid_argument("Sgd: gradient group count changed between steps");
  }
  for (std::size_t p = 0; p < velocity_.size(); ++p) {
    velocity_[p] = momentum_ * velocity_[p] + grads.values[p];
  }
  apply_update(model, velocity_, rho);
}

namespace {

Index correct_count(const Matrix& logits, const std::vector<int>& labels) {
  Index correct = 0;
  for (Index j = 0; j < logits.cols(); ++j) {
    Index best = 0;
    for (Index i = 1; i < logits.rows(); ++i) {
      if (logits(i, j) > logits(best, j)) best = i;
    }
    if (best == labels[static_cast<std::size_t>(j)]) ++correct;
  }
  return correct;
}

net::Tensor gather_batch(const net::Tensor& X, const std::vector<Index>& order, Index start,
                         Index count) {
  const Index per = X.features_per_sample();
  net::Tensor out;
  if (X.rank() == 2) {
    out.shape = {X.shape[0], count};
  } else {
    out.shape = {count, X.shape[1], X.shape[2], X.shape[3]};
  }
  out.data.resize(per * count);
  for (Index b = 0; b < count; ++b) {
    const Index src = order[static_cast<std::size_t>(start + b)];
    out.data.segment(b * per, per) = X.data.segment(src * per, per);
  }
  return out;
}

}  // namespace

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != logits.cols()) {
    throw std::invalid_argument("accuracy: label count mismatch");
  }
  return static_cast<double>(correct_count(logits, labels)) /
         static_cast<double>(logits.cols());
}

History train_loop(net::Model& model, const net::Tensor& train_X,
                   const std::vector<int>& train_labels, const net::Tensor& test_X,
                   const std::vector<int>& test_labels, const TrainConfig& config) {
  if (config.epochs < 1) throw std::invalid_argument("train_loop: epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train_loop: batch size must be >= 1");
  if (config.lr.initial < 0.0 || !std::isfinite(config.lr.initial)) {
    throw std::invalid_argument("train_loop: rho_0 must be >= 0");
  }
  const Index n_train = train_X.batch();
  const Index n_test = test_X.batch();
  if (static_cast<Index>(train_labels.size()) != n_train ||
      static_cast<Index>(test_labels.size()) != n_test) {
    throw std::invalid_argument("train_loop: feature/label counts differ");
  }

  std::mt19937_64 rng(config.seed);
  Sgd opt(config.momentum);
  History hist;
  hist.epochs.reserve(static_cast<std::size_t>(config.epochs));

  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), Index{0});
  std::vector<Index> test_order(static_cast<std::size_t>(n_test));
  std::iota(test_order.begin(), test_order.end(), Index{0});

  const Index bs = config.batch_size;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double rho = config.lr.at(epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    Index correct = 0;
    for (Index start = 0; start < n_train; start += bs) {
      const Index count = std::min(bs, n_train - start);
      net::Tensor bx = gather_batch(train_X, order, start, count);
      std::vector<int> by(static_cast<std::size_t>(count));
      for (Index b = 0; b < count; ++b) {
        by[static_cast<std::size_t>(b)] =
            train_labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + b)])];
      }

      net::Cache cache;
      const Matrix logits = net::forward(model, bx, &cache);
      XentResult xent = softmax_cross_entropy(logits, by);
      loss_sum += xent.loss * static_cast<double>(count);
      correct += correct_count(logits, by);
      net::Gradients grads = net::backward(model, cache, xent.grad_logits);
      opt.step(model, grads, rho);
    }

    Index test_correct = 0;
    for (Index start = 0; start < n_test; start += bs) {
      const Index count = std::min(bs, n_test - start);
      net::Tensor bx = gather_batch(test_X, test_order, start, count);
      std::vector<int> by(static_cast<std::size_t>(count));
      for (Index b = 0; b < count; ++b) {
        by[static_cast<std::size_t>(b)] = test_labels[static_cast<std::size_t>(start + b)];
      }
      test_correct += correct_count(net::forward(model, bx), by);
    }

    const auto t1 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n_train);
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(n_train);
    rec.test_acc = n_test > 0 ? static_cast<double>(test_correct) / static_cast<double>(n_test)
                              : 0.0;
    rec.wall_s = std::chrono::duration<double>(t1 - t0).count();
    hist.epochs.push_back(rec);
  }
  return hist;
}

}  // namespace detrame::train
