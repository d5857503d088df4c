#include "detrame/net.hpp"

#include <algorithm>
#include <cmath>

namespace detrame::net {

namespace {

std::vector<Index> per_sample_shape(const Tensor& t) {
  if (t.rank() == 2) return {t.shape[0]};
  return {t.shape[1], t.shape[2], t.shape[3]};
}

Index shape_product(const std::vector<Index>& s) {
  Index p = 1;
  for (Index d : s) p *= d;
  return p;
}

Tensor tensor_for(const std::vector<Index>& sample_shape, Index batch) {
  Tensor t;
  if (sample_shape.size() == 1) {
    t.shape = {sample_shape[0], batch};
  } else if (sample_shape.size() == 3) {
    t.shape = {batch, sample_shape[0], sample_shape[1], sample_shape[2]};
  } else {
    throw std::invalid_argument("tensor_for: per-sample shape must have rank 1 or 3");
  }
  t.data = Vector::Zero(shape_product(sample_shape) * batch);
  return t;
}

[[noreturn]] void layer_error(std::size_t i, const std::string& what) {
  throw std::invalid_argument("layer " + std::to_string(i) + ": " + what);
}

}  // namespace

Index Tensor::features_per_sample() const {
  if (rank() == 2) return shape[0];
  return shape[1] * shape[2] * shape[3];
}

Eigen::Map<const Matrix> Tensor::as_matrix() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::as_matrix: rank-2 tensors only");
  return {data.data(), shape[0], shape[1]};
}

Eigen::Map<Matrix> Tensor::as_matrix() {
  if (rank() != 2) throw std::invalid_argument("Tensor::as_matrix: rank-2 tensors only");
  return {data.data(), shape[0], shape[1]};
}

Index Tensor::idx4(Index n, Index c, Index y, Index x) const {
  return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
}

Tensor tensor_from_matrix(Matrix m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data = Eigen::Map<const Vector>(m.data(), m.size());
  return t;
}

Tensor tensor_image(Index n, Index c, Index h, Index w) {
  Tensor t;
  t.shape = {n, c, h, w};
  t.data = Vector::Zero(n * c * h * w);
  return t;
}

void check_model(const Model& model) {
  if (model.input_shape.size() != 1 && model.input_shape.size() != 3) {
    throw std::invalid_argument("model: input shape must have rank 1 or 3");
  }
  std::vector<Index> shape = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    if (const auto* dense = std::get_if<Dense>(&layer.linear)) {
      if (shape.size() != 1 || shape[0] != dense->W.cols()) {
        layer_error(i, "dense input width mismatch");
      }
      if (dense->c.size() != dense->W.rows()) layer_error(i, "dense bias length mismatch");
      shape = {dense->W.rows()};
    } else {
      const auto& conv = std::get<Conv2D>(layer.linear);
      if (shape.size() != 3 || shape[0] != conv.in_ch) {
        layer_error(i, "conv input channel mismatch");
      }
      auto [ho, wo] = conv2d_output_hw(conv, shape[1], shape[2]);
      shape = {conv.out_ch, ho, wo};
    }
    if (const auto* qa = std::get_if<QMetricAct>(&layer.act)) {
      if (qa->cell.dim() != shape[0]) layer_error(i, "activation cell dimension mismatch");
    }
    if (layer.reshape) {
      if (shape != layer.reshape->in_shape) layer_error(i, "reshape input shape mismatch");
      if (shape_product(layer.reshape->in_shape) != shape_product(layer.reshape->out_shape)) {
        layer_error(i, "reshape changes the element count");
      }
      if (layer.reshape->out_shape.size() != 1 && layer.reshape->out_shape.size() != 3) {
        layer_error(i, "reshape output rank must be 1 or 3");
      }
      shape = layer.reshape->out_shape;
    }
  }
  if (shape.size() != 1 || shape[0] != model.head.W.cols()) {
    throw std::invalid_argument("head: input width mismatch");
  }
  if (model.head.W.rows() != model.class_count) {
    throw std::invalid_argument("head: output width must equal class_count");
  }
}

namespace {

template <typename ModelT, typename Fn>
void for_each_param(ModelT& model, Fn&& fn) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    const std::string p = "layer" + std::to_string(i);
    std::visit(
        [&](auto& lin) {
          using T = std::decay_t<decltype(lin)>;
          if constexpr (std::is_same_v<T, Dense>) {
            fn(p + ".W", std::vector<Index>{lin.W.rows(), lin.W.cols()}, lin.W.data());
            fn(p + ".c", std::vector<Index>{lin.c.size()}, lin.c.data());
          } else {
            fn(p + ".kernel", std::vector<Index>{lin.out_ch, lin.in_ch, lin.kh, lin.kw},
               lin.kernel.data());
            fn(p + ".bias", std::vector<Index>{lin.bias.size()}, lin.bias.data());
          }
        },
        layer.linear);
    if (auto* qa = std::get_if<QMetricAct>(&layer.act)) {
      auto& cell = qa->cell;
      fn(p + ".cell.Wt", std::vector<Index>{cell.Wt.rows(), cell.Wt.cols()}, cell.Wt.data());
      fn(p + ".cell.h", std::vector<Index>{cell.h.size()}, cell.h.data());
      fn(p + ".cell.b", std::vector<Index>{cell.b.size()}, cell.b.data());
    }
  }
  fn("head.W", std::vector<Index>{model.head.W.rows(), model.head.W.cols()},
     model.head.W.data());
  fn("head.c", std::vector<Index>{model.head.c.size()}, model.head.c.data());
}

}  // namespace

std::vector<ParamView> param_views(Model& model) {
  std::vector<ParamView> views;
  for_each_param(model, [&](std::string name, std::vector<Index> shape, double* data) {
    ParamView v;
    v.name = std::move(name);
    v.data = data;
    v.size = shape_product(shape);
    v.shape = std::move(shape);
    views.push_back(std::move(v));
  });
  return views;
}

Gradients zero_gradients(const Model& model) {
  Gradients g;
  for_each_param(model, [&](std::string name, std::vector<Index> shape, const double*) {
    g.names.push_back(std::move(name));
    g.values.emplace_back(Vector::Zero(shape_product(shape)));
  });
  return g;
}

Vector& Gradients::by_name(const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values[i];
  }
  throw std::invalid_argument("Gradients: unknown parameter " + name);
}

const Vector& Gradients::by_name(const std::string& name) const {
  return const_cast<Gradients*>(this)->by_name(name);
}

Matrix channels_to_columns(const Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("channels_to_columns: rank-4 tensors only");
  const Index n = t.shape[0], c = t.shape[1], h = t.shape[2], w = t.shape[3];
  Matrix m(c, n * h * w);
#pragma omp parallel for schedule(static)
  for (Index ni = 0; ni < n; ++ni) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index col = (ni * h + y) * w + x;
        for (Index ci = 0; ci < c; ++ci) m(ci, col) = t.at4(ni, ci, y, x);
      }
    }
  }
  return m;
}

void columns_to_channels(const Matrix& m, Tensor& t) {
  if (t.rank() != 4) throw std::invalid_argument("columns_to_channels: rank-4 tensors only");
  const Index n = t.shape[0], c = t.shape[1], h = t.shape[2], w = t.shape[3];
  if (m.rows() != c || m.cols() != n * h * w) {
    throw std::invalid_argument("columns_to_channels: shape mismatch");
  }
#pragma omp parallel for schedule(static)
  for (Index ni = 0; ni < n; ++ni) {
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const Index col = (ni * h + y) * w + x;
        for (Index ci = 0; ci < c; ++ci) t.at4(ni, ci, y, x) = m(ci, col);
      }
    }
  }
}

namespace {

Tensor apply_linear(const LinearOp& lin, const Tensor& input, std::size_t i) {
  if (const auto* dense = std::get_if<Dense>(&lin)) {
    if (input.rank() != 2) layer_error(i, "dense layers take rank-2 input");
    if (input.shape[0] != dense->W.cols()) layer_error(i, "dense input width mismatch");
    Matrix z = (dense->W * input.as_matrix()).colwise() - dense->c;
    return tensor_from_matrix(std::move(z));
  }
  const auto& conv = std::get<Conv2D>(lin);
  if (input.rank() != 4) layer_error(i, "conv layers take rank-4 input");
  return conv2d_apply(conv, input);
}

Tensor apply_activation(const Activation& act, const Tensor& z, std::vector<Matrix>* states_out) {
  if (std::holds_alternative<PlainReLU>(act)) {
    Tensor u = z;
    u.data = u.data.cwiseMax(0.0);
    return u;
  }
  const auto& cell = std::get<QMetricAct>(act).cell;
  if (z.rank() == 2) {
    const Matrix zm = z.as_matrix();
    auto states = qprox::unroll_states(zm, cell);
    Tensor u = tensor_from_matrix(states.back());
    if (states_out) *states_out = std::move(states);
    return u;
  }
  const Matrix zm = channels_to_columns(z);
  auto states = qprox::unroll_states(zm, cell);
  Tensor u = z;
  columns_to_channels(states.back(), u);
  if (states_out) *states_out = std::move(states);
  return u;
}

Tensor apply_reshape(const Reshape& op, Tensor u, std::size_t i) {
  if (per_sample_shape(u) != op.in_shape) layer_error(i, "reshape input shape mismatch");
  const Index batch = u.batch();
  Tensor out;
  if (op.out_shape.size() == 1) {
    out.shape = {op.out_shape[0], batch};
  } else {
    out.shape = {batch, op.out_shape[0], op.out_shape[1], op.out_shape[2]};
  }
  out.data = std::move(u.data);
  return out;
}

}  // namespace

Matrix forward(const Model& model, const Tensor& X, Cache* cache) {
  check_model(model);
  if (per_sample_shape(X) != model.input_shape) {
    throw std::invalid_argument("forward: input shape does not match the model");
  }
  const Index batch = X.batch();
  if (batch < 1) throw std::invalid_argument("forward: empty batch");
  if (cache) {
    cache->layers.clear();
    cache->layers.reserve(model.layers.size());
    cache->batch = batch;
  }

  Tensor cur = X;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    Tensor z = apply_linear(layer.linear, cur, i);
    LayerCache lc;
    if (cache) lc.input = std::move(cur);
    std::vector<Matrix> states;
    Tensor u = apply_activation(layer.act, z, cache ? &states : nullptr);
    if (layer.reshape) u = apply_reshape(*layer.reshape, std::move(u), i);
    if (cache) {
      lc.pre_act = std::move(z);
      lc.rnn_states = std::move(states);
      cache->layers.push_back(std::move(lc));
    }
    cur = std::move(u);
  }

  if (cur.rank() != 2 || cur.shape[0] != model.head.W.cols()) {
    throw std::invalid_argument("head: input width mismatch");
  }
  Matrix logits = (model.head.W * cur.as_matrix()).colwise() - model.head.c;
  if (cache) cache->head_input = std::move(cur);
  return logits;
}

Gradients backward(const Model& model, const Cache& cache, const Matrix& grad_logits) {
  if (cache.layers.size() != model.layers.size()) {
    throw std::invalid_argument("backward: cache does not match the model");
  }
  if (grad_logits.rows() != model.class_count || grad_logits.cols() != cache.batch) {
    throw std::invalid_argument("backward: grad_logits shape mismatch");
  }

  Gradients g = zero_gradients(model);

  g.by_name("head.W") +=
      Eigen::Map<const Vector>(Matrix(grad_logits * cache.head_input.as_matrix().transpose()).data(),
                               model.head.W.size());
  g.by_name("head.c") += -grad_logits.rowwise().sum();

  Tensor G = cache.head_input;  // reuse the shape; data replaced below
  {
    Matrix gm = model.head.W.transpose() * grad_logits;
    G.data = Eigen::Map<const Vector>(gm.data(), gm.size());
  }

  for (std::size_t ii = model.layers.size(); ii-- > 0;) {
    const Layer& layer = model.layers[ii];
    const LayerCache& lc = cache.layers[ii];
    const std::string p = "layer" + std::to_string(ii);

    if (layer.reshape) {
      if (G.size() != lc.pre_act.size()) {
        throw std::invalid_argument("backward: stale cache at layer " + std::to_string(ii));
      }
      G.shape = lc.pre_act.shape;  // inverse of the identity-buffer reshape
    }

    if (std::holds_alternative<PlainReLU>(layer.act)) {
      G.data = (lc.pre_act.data.array() > 0.0).select(G.data.array(), 0.0).matrix();
    } else {
      const auto& cell = std::get<QMetricAct>(layer.act).cell;
      if (G.rank() == 2) {
        const Matrix zm = lc.pre_act.as_matrix();
        const Matrix gm = G.as_matrix();
        auto ug = qprox::unroll_backward(lc.rnn_states, zm, cell, gm);
        g.by_name(p + ".cell.Wt") += Eigen::Map<const Vector>(ug.gWt.data(), ug.gWt.size());
        g.by_name(p + ".cell.h") += ug.gh;
        g.by_name(p + ".cell.b") += ug.gb;
        G = tensor_from_matrix(std::move(ug.gZ));
      } else {
        const Matrix zm = channels_to_columns(lc.pre_act);
        const Matrix gm = channels_to_columns(G);
        auto ug = qprox::unroll_backward(lc.rnn_states, zm, cell, gm);
        g.by_name(p + ".cell.Wt") += Eigen::Map<const Vector>(ug.gWt.data(), ug.gWt.size());
        g.by_name(p + ".cell.h") += ug.gh;
        g.by_name(p + ".cell.b") += ug.gb;
        G.shape = lc.pre_act.shape;
        columns_to_channels(ug.gZ, G);
      }
    }

    if (const auto* dense = std::get_if<Dense>(&layer.linear)) {
      const auto In = lc.input.as_matrix();
      const auto Gz = G.as_matrix();
      g.by_name(p + ".W") +=
          Eigen::Map<const Vector>(Matrix(Gz * In.transpose()).data(), dense->W.size());
      g.by_name(p + ".c") += -Gz.rowwise().sum();
      Matrix gprev = dense->W.transpose() * Gz;
      G = tensor_from_matrix(std::move(gprev));
    } else {
      const auto& conv = std::get<Conv2D>(layer.linear);
      auto cg = conv2d_backward(conv, lc.input, G);
      g.by_name(p + ".kernel") += cg.gkernel;
      g.by_name(p + ".bias") += cg.gbias;
      G = std::move(cg.ginput);
    }
  }
  return g;
}

double finite_diff_check(const std::function<double()>& value, std::vector<ParamView>& params,
                         const std::vector<Vector>& analytic, double eps) {
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("finite_diff_check: analytic gradient count mismatch");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamView& view = params[p];
    if (analytic[p].size() != view.size) {
      throw std::invalid_argument("finite_diff_check: gradient size mismatch for " + view.name);
    }
    for (Index i = 0; i < view.size; ++i) {
      const double saved = view.data[i];
      view.data[i] = saved + eps;
      const double fp = value();
      view.data[i] = saved - eps;
      const double fm = value();
      view.data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[p](i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

Dense make_dense(Index out, Index in, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  Dense d;
  d.W.resize(out, in);
  for (Index i = 0; i < d.W.size(); ++i) d.W.data()[i] = gauss(rng) * scale;
  d.c = Vector::Zero(out);
  return d;
}

Conv2D make_conv(Index out_ch, Index in_ch, Index kh, Index kw, Index stride, Index padding,
                 std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Conv2D c;
  c.out_ch = out_ch;
  c.in_ch = in_ch;
  c.kh = kh;
  c.kw = kw;
  c.stride = stride;
  c.padding = padding;
  const double scale = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
  c.kernel.resize(out_ch * in_ch * kh * kw);
  for (Index i = 0; i < c.kernel.size(); ++i) c.kernel(i) = gauss(rng) * scale;
  c.bias = Vector::Zero(out_ch);
  return c;
}

RnnCell default_cell(Index k, int tt_max) {
  return RnnCell(Matrix::Zero(k, k), Vector::Constant(k, 0.5), Vector::Constant(k, 0.01),
                 tt_max);
}

Model make_mlp(Index in_dim, const std::vector<Index>& hidden, Index classes, bool qmetric,
               int tt_max, std::mt19937_64& rng) {
  Model m;
  m.input_shape = {in_dim};
  m.class_count = classes;
  Index prev = in_dim;
  for (Index width : hidden) {
    Layer layer{make_dense(width, prev, rng),
                qmetric ? Activation{QMetricAct{default_cell(width, tt_max)}}
                        : Activation{PlainReLU{}},
                std::nullopt};
    m.layers.push_back(std::move(layer));
    prev = width;
  }
  Dense head = make_dense(classes, prev, rng);
  m.head = AffineTransform(std::move(head.W), std::move(head.c));
  return m;
}

Model make_mlp_from_dictionaries(Index in_dim, const std::vector<Index>& hidden, Index classes,
                                 double alpha, const Regularizer& reg, int tt_max,
                                 std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Model m;
  m.input_shape = {in_dim};
  m.class_count = classes;
  Index prev = in_dim;
  for (Index width : hidden) {
    Matrix D(prev, width);
    for (Index i = 0; i < D.size(); ++i) D.data()[i] = gauss(rng);
    for (Index j = 0; j < D.cols(); ++j) {
      const double norm = D.col(j).norm();
      if (norm > 0.0) D.col(j) /= norm;
    }
    Dictionary dict(std::move(D), alpha);
    TransformPair tp = transform_from_dictionary(dict);
    RnnCell cell = qprox::reparameterize(tp.metric, reg, tt_max);
    Layer layer{Dense{tp.transform.W, tp.transform.c}, QMetricAct{std::move(cell)}, std::nullopt};
    m.layers.push_back(std::move(layer));
    prev = width;
  }
  Dense head = make_dense(classes, prev, rng);
  m.head = AffineTransform(std::move(head.W), std::move(head.c));
  return m;
}

}  // namespace detrame::net
