#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "detrame/core.hpp"
#include "detrame/qprox.hpp"

namespace detrame::net {

/// Batched activations. Rank-2 tensors are k x N matrices stored column-major
/// (one sample per column); rank-4 tensors are NCHW with the sample index
/// slowest. Both layouts keep each sample contiguous, so flattening between
/// them never moves data.
struct Tensor {
  std::vector<Index> shape;  // {k, N} or {N, C, H, W}
  Vector data;

  Index rank() const { return static_cast<Index>(shape.size()); }
  Index batch() const { return rank() == 2 ? shape[1] : shape[0]; }
  Index features_per_sample() const;
  Index size() const { return data.size(); }

  Eigen::Map<const Matrix> as_matrix() const;
  Eigen::Map<Matrix> as_matrix();

  Index idx4(Index n, Index c, Index y, Index x) const;
  double at4(Index n, Index c, Index y, Index x) const { return data(idx4(n, c, y, x)); }
  double& at4(Index n, Index c, Index y, Index x) { return data(idx4(n, c, y, x)); }
};

Tensor tensor_from_matrix(Matrix m);
Tensor tensor_image(Index n, Index c, Index h, Index w);  // zero-filled

// --- layer pieces ---

struct Dense {
  Matrix W;  // out x in
  Vector c;  // out; applied as W u - c
};

struct Conv2D {
  Vector kernel;  // flat [out_ch][in_ch][kh][kw]
  Vector bias;    // out_ch
  Index out_ch = 0, in_ch = 0, kh = 0, kw = 0;
  Index stride = 1, padding = 0;

  Index kernel_index(Index o, Index c, Index ky, Index kx) const {
    return ((o * in_ch + c) * kh + ky) * kw + kx;
  }
};

using LinearOp = std::variant<Dense, Conv2D>;

struct QMetricAct {
  RnnCell cell;
};
struct PlainReLU {};
using Activation = std::variant<QMetricAct, PlainReLU>;

/// Shape change between per-sample layouts with equal element counts. The
/// underlying index map is the identity on each sample's contiguous block.
struct Reshape {
  std::vector<Index> in_shape;   // per sample, e.g. {C, H, W}
  std::vector<Index> out_shape;  // per sample, e.g. {C*H*W}
};

struct Layer {
  LinearOp linear;
  Activation act;
  std::optional<Reshape> reshape;  // applied after the activation
};

struct Model {
  std::vector<Index> input_shape;  // per sample: {k} or {C, H, W}
  std::vector<Layer> layers;
  AffineTransform head;  // classifier, logits = W u - c
  Index class_count = 0;
};

/// Propagates per-sample shapes through every layer and the head; throws with
/// the offending layer index on any incompatibility.
void check_model(const Model& model);

// --- parameter registry ---

struct ParamView {
  std::string name;
  double* data;
  std::vector<Index> shape;  // matrices are column-major in flat order
  Index size;
};

std::vector<ParamView> param_views(Model& model);

struct Gradients {
  std::vector<std::string> names;
  std::vector<Vector> values;  // aligned with param_views order

  Vector& by_name(const std::string& name);
  const Vector& by_name(const std::string& name) const;
};

Gradients zero_gradients(const Model& model);

// --- forward / backward ---

struct LayerCache {
  Tensor input;                    // linear-op input
  Tensor pre_act;                  // Z
  std::vector<Matrix> rnn_states;  // QMetricAct iterates in channel-column view
};

struct Cache {
  Index batch = 0;
  std::vector<LayerCache> layers;
  Tensor head_input;
};

/// Returns logits (class_count x N). With a cache, stores everything the
/// backward pass needs; QMetricAct runs exactly tt_max steps from U_0 = 0.
Matrix forward(const Model& model, const Tensor& X, Cache* cache = nullptr);

/// Reverse-mode accumulation through the cached forward pass; the ReLU
/// subgradient at 0 is taken as 0. Gradient order matches param_views.
Gradients backward(const Model& model, const Cache& cache, const Matrix& grad_logits);

// --- convolution kernels ---

/// Output spatial size floor((H + 2 padding - kh)/stride) + 1; throws when
/// non-positive.
std::pair<Index, Index> conv2d_output_hw(const Conv2D& op, Index h, Index w);

/// Cross-correlation via per-sample patch-matrix multiplication, samples in
/// parallel.
Tensor conv2d_apply(const Conv2D& op, const Tensor& input);

/// Direct-loop serial reference, kept for testing and benchmarking.
Tensor conv2d_apply_naive(const Conv2D& op, const Tensor& input);

struct ConvGrads {
  Vector gkernel;
  Vector gbias;
  Tensor ginput;
};

ConvGrads conv2d_backward(const Conv2D& op, const Tensor& input, const Tensor& grad_out);

// --- channel-column view used by QMetricAct over feature maps ---

/// View of an NCHW tensor as a (C x N*H*W) matrix whose columns are the
/// channel vectors at each (n, y, x), column index (n*H + y)*W + x.
Matrix channels_to_columns(const Tensor& t);
void columns_to_channels(const Matrix& m, Tensor& t);

// --- gradient verification ---

/// Max relative error between `analytic` and central finite differences of
/// `value` over every coordinate of `params`, denominator
/// max(|analytic|, |numeric|, 1e-8). Parameter state is restored afterwards.
double finite_diff_check(const std::function<double()>& value, std::vector<ParamView>& params,
                         const std::vector<Vector>& analytic, double eps);

// --- initialization ---

Dense make_dense(Index out, Index in, std::mt19937_64& rng);  // N(0, 2/fan_in), c = 0
Conv2D make_conv(Index out_ch, Index in_ch, Index kh, Index kw, Index stride, Index padding,
                 std::mt19937_64& rng);
RnnCell default_cell(Index k, int tt_max);  // Wt = 0, h = 0.5, b = 0.01

/// Fully-connected model: Dense layers at the given hidden widths, each
/// followed by the chosen activation, and an affine classifier head.
Model make_mlp(Index in_dim, const std::vector<Index>& hidden, Index classes, bool qmetric,
               int tt_max, std::mt19937_64& rng);

/// Same topology, but every layer is converted from a random unit-column
/// dictionary: W = Q^{-1} D^T, c = Q^{-1} d with d = 0, and the activation
/// cell reparameterized from Q.
Model make_mlp_from_dictionaries(Index in_dim, const std::vector<Index>& hidden, Index classes,
                                 double alpha, const Regularizer& reg, int tt_max,
                                 std::mt19937_64& rng);

}  // namespace detrame::net
