#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "detrame/net.hpp"

namespace detrame::train {

struct LrSchedule {
  double initial = 0.1;
  double decay_factor = 0.1;
  std::vector<int> decay_epochs;  // epochs (0-based) at which the rate is multiplied

  double at(int epoch) const;
};

struct TrainConfig {
  LrSchedule lr;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t seed = 1;
  int tt_max = 3;
  double lambda = 0.05;
  double beta = 0.01;
  double alpha = 0.1;
  double momentum = 0.0;  // extension, off by default; 0 reproduces plain SGD
  std::string train_dataset;
  std::string test_dataset;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double train_acc;
  double test_acc;
  double wall_s;
};

struct History {
  std::vector<EpochRecord> epochs;
};

struct XentResult {
  double loss;
  Matrix grad_logits;  // (softmax - onehot) / N
};

/// Mean cross-entropy over the batch with a max-shifted softmax. Labels must
/// lie in [0, class_count).
XentResult softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels);

/// Projections from the constrained parameter groups: zero the Wt diagonal,
/// clamp h to [0,1] and b to [0,inf). Other parameters are untouched.
void project_params(net::Model& model);

/// theta <- theta - rho g for every parameter group, followed by project_params.
/// Throws on non-finite gradient entries.
void sgd_step(net::Model& model, const net::Gradients& grads, double rho);

/// SGD with optional momentum (velocity v <- mu v + g, theta <- theta - rho v)
/// and the same trailing projection. mu = 0 reproduces sgd_step exactly.
class Sgd {
 public:
  explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
  void step(net::Model& model, const net::Gradients& grads, double rho);

 private:
  double momentum_;
  std::vector<Vector> velocity_;
};

struct LabeledBatch {
  net::Tensor X;
  std::vector<int> labels;
};

/// Fraction of columns whose argmax logit matches the label (ties resolve to
/// the lowest index).
double accuracy(const Matrix& logits, const std::vector<int>& labels);

/// Minibatch projected SGD over the shuffled training set, with a full test
/// evaluation per epoch. Deterministic given the seed.
History train_loop(net::Model& model, const net::Tensor& train_X,
                   const std::vector<int>& train_labels, const net::Tensor& test_X,
                   const std::vector<int>& test_labels, const TrainConfig& config);

}  // namespace detrame::train
