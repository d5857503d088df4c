#include "detrame/net.hpp"

namespace detrame::net {

namespace {

void check_conv_input(const Conv2D& op, const Tensor& input) {
  if (input.rank() != 4) throw std::invalid_argument("conv2d: rank-4 input required");
  if (input.shape[1] != op.in_ch) throw std::invalid_argument("conv2d: input channel mismatch");
  if (op.kernel.size() != op.out_ch * op.in_ch * op.kh * op.kw || op.bias.size() != op.out_ch) {
    throw std::invalid_argument("conv2d: kernel/bias size mismatch");
  }
  if (op.stride < 1 || op.padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
}

}  // namespace

std::pair<Index, Index> conv2d_output_hw(const Conv2D& op, Index h, Index w) {
  const Index ho = (h + 2 * op.padding - op.kh) / op.stride + 1;
  const Index wo = (w + 2 * op.padding - op.kw) / op.stride + 1;
  if (h + 2 * op.padding < op.kh || w + 2 * op.padding < op.kw || ho < 1 || wo < 1) {
    throw std::invalid_argument("conv2d: non-positive output size");
  }
  return {ho, wo};
}

Tensor conv2d_apply(const Conv2D& op, const Tensor& input) {
  check_conv_input(op, input);
  const Index n = input.shape[0], h = input.shape[2], w = input.shape[3];
  const auto [ho, wo] = conv2d_output_hw(op, h, w);
  const Index patch = op.in_ch * op.kh * op.kw;

  using RowMajorMap =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  const RowMajorMap K(op.kernel.data(), op.out_ch, patch);

  Tensor out = tensor_image(n, op.out_ch, ho, wo);
#pragma omp parallel for schedule(static)
  for (Index ni = 0; ni < n; ++ni) {
    Matrix patches = Matrix::Zero(patch, ho * wo);
    for (Index y = 0; y < ho; ++y) {
      for (Index x = 0; x < wo; ++x) {
        const Index col = y * wo + x;
        for (Index c = 0; c < op.in_ch; ++c) {
          for (Index ky = 0; ky < op.kh; ++ky) {
            const Index iy = y * op.stride + ky - op.padding;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < op.kw; ++kx) {
              const Index ix = x * op.stride + kx - op.padding;
              if (ix < 0 || ix >= w) continue;
              patches((c * op.kh + ky) * op.kw + kx, col) = input.at4(ni, c, iy, ix);
            }
          }
        }
      }
    }
    const Matrix res = K * patches;  // out_ch x (ho*wo)
    for (Index o = 0; o < op.out_ch; ++o) {
      for (Index y = 0; y < ho; ++y) {
        for (Index x = 0; x < wo; ++x) {
          out.at4(ni, o, y, x) = res(o, y * wo + x) + op.bias(o);
        }
      }
    }
  }
  return out;
}

Tensor conv2d_apply_naive(const Conv2D& op, const Tensor& input) {
  check_conv_input(op, input);
  const Index n = input.shape[0], h = input.shape[2], w = input.shape[3];
  const auto [ho, wo] = conv2d_output_hw(op, h, w);

  Tensor out = tensor_image(n, op.out_ch, ho, wo);
  for (Index ni = 0; ni < n; ++ni) {
    for (Index o = 0; o < op.out_ch; ++o) {
      for (Index y = 0; y < ho; ++y) {
        for (Index x = 0; x < wo; ++x) {
          double acc = op.bias(o);
          for (Index c = 0; c < op.in_ch; ++c) {
            for (Index ky = 0; ky < op.kh; ++ky) {
              for (Index kx = 0; kx < op.kw; ++kx) {
                const Index iy = y * op.stride + ky - op.padding;
                const Index ix = x * op.stride + kx - op.padding;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += op.kernel(op.kernel_index(o, c, ky, kx)) * input.at4(ni, c, iy, ix);
              }
            }
          }
          out.at4(ni, o, y, x) = acc;
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Conv2D& op, const Tensor& input, const Tensor& grad_out) {
  check_conv_input(op, input);
  const Index n = input.shape[0], h = input.shape[2], w = input.shape[3];
  const auto [ho, wo] = conv2d_output_hw(op, h, w);
  if (grad_out.rank() != 4 || grad_out.shape[0] != n || grad_out.shape[1] != op.out_ch ||
      grad_out.shape[2] != ho || grad_out.shape[3] != wo) {
    throw std::invalid_argument("conv2d_backward: grad_out shape mismatch");
  }

  ConvGrads grads;
  grads.gkernel = Vector::Zero(op.kernel.size());
  grads.gbias = Vector::Zero(op.out_ch);
  grads.ginput = tensor_image(n, op.in_ch, h, w);

#pragma omp parallel for schedule(static)
  for (Index o = 0; o < op.out_ch; ++o) {
    double acc = 0.0;
    for (Index ni = 0; ni < n; ++ni) {
      for (Index y = 0; y < ho; ++y) {
        for (Index x = 0; x < wo; ++x) acc += grad_out.at4(ni, o, y, x);
      }
    }
    grads.gbias(o) = acc;
  }

  // Each kernel entry owns its full reduction; the sums stay serial so results
  // do not depend on the thread count.
#pragma omp parallel for collapse(2) schedule(static)
  for (Index o = 0; o < op.out_ch; ++o) {
    for (Index c = 0; c < op.in_ch; ++c) {
      for (Index ky = 0; ky < op.kh; ++ky) {
        for (Index kx = 0; kx < op.kw; ++kx) {
          double acc = 0.0;
          for (Index ni = 0; ni < n; ++ni) {
            for (Index y = 0; y < ho; ++y) {
              const Index iy = y * op.stride + ky - op.padding;
              if (iy < 0 || iy >= h) continue;
              for (Index x = 0; x < wo; ++x) {
                const Index ix = x * op.stride + kx - op.padding;
                if (ix < 0 || ix >= w) continue;
                acc += grad_out.at4(ni, o, y, x) * input.at4(ni, c, iy, ix);
              }
            }
          }
          grads.gkernel(op.kernel_index(o, c, ky, kx)) = acc;
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (Index ni = 0; ni < n; ++ni) {
    for (Index o = 0; o < op.out_ch; ++o) {
      for (Index y = 0; y < ho; ++y) {
        for (Index x = 0; x < wo; ++x) {
          const double go = grad_out.at4(ni, o, y, x);
          if (go == 0.0) continue;
          for (Index c = 0; c < op.in_ch; ++c) {
            for (Index ky = 0; ky < op.kh; ++ky) {
              const Index iy = y * op.stride + ky - op.padding;
              if (iy < 0 || iy >= h) continue;
              for (Index kx = 0; kx < op.kw; ++kx) {
                const Index ix = x * op.stride + kx - op.padding;
                if (ix < 0 || ix >= w) continue;
                grads.ginput.at4(ni, c, iy, ix) +=
                    go * op.kernel(op.kernel_index(o, c, ky, kx));
              }
            }
          }
        }
      }
    }
  }
  return grads;
}

}  // namespace detrame::net
