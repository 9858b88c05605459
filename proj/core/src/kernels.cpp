#include "cadgd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cadgd::kernels {
namespace {

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

void check_conv_shapes(const Tensor& x, const Tensor& weight,
                       std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4) {
    throw std::invalid_argument("conv2d expects x [h,w,cin] and weight [k,k,cin,cout]");
  }
  const std::size_t k = weight.dim(0);
  if (weight.dim(1) != k || k % 2 == 0) {
    throw std::invalid_argument("conv2d kernel must be square with odd extent");
  }
  if (padding != (k - 1) / 2) {
    throw std::invalid_argument("conv2d padding must be (k-1)/2");
  }
  if (weight.dim(2) != x.dim(2)) {
    throw std::invalid_argument("conv2d input channels " +
                                std::to_string(x.dim(2)) +
                                " do not match weight cin " +
                                std::to_string(weight.dim(2)));
  }
}

struct Tap {
  std::size_t lo, hi;
  double w;
};

// Source taps for one output coordinate under half-pixel sampling.
Tap upsample_tap(std::size_t out, int factor, std::size_t in_extent) {
  double src = (static_cast<double>(out) + 0.5) / factor - 0.5;
  if (src < 0.0) src = 0.0;
  const auto lo = std::min(static_cast<std::size_t>(src), in_extent - 1);
  const std::size_t hi = std::min(lo + 1, in_extent - 1);
  return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t padding) {
  check_conv_shapes(x, weight, padding);
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t k = weight.dim(0), cout = weight.dim(3);
  if (bias.size() != cout) {
    throw std::invalid_argument("conv2d bias length must equal cout");
  }
  Tensor out({h, w, cout});
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  double* od = out.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      double* o = od + (y * w + xx) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
      for (std::size_t dy = 0; dy < k; ++dy) {
        const auto sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const auto sx = static_cast<std::ptrdiff_t>(xx + dx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* xi = xd + (static_cast<std::size_t>(sy) * w +
                                   static_cast<std::size_t>(sx)) * cin;
          const double* wk = wd + (dy * k + dx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double v = xi[ci];
            const double* wc = wk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * wc[co];
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight,
                            const Tensor& grad_out, std::size_t padding) {
  check_conv_shapes(x, weight, padding);
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t k = weight.dim(0), cout = weight.dim(3);
  Conv2dGrads g{Tensor(x.shape()), Tensor(weight.shape()), Tensor({cout})};
  const double* xd = x.data().data();
  const double* wd = weight.data().data();
  const double* gd = grad_out.data().data();
  double* gx = g.x.data().data();
  double* gw = g.weight.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      const double* go = gd + (y * w + xx) * cout;
      for (std::size_t co = 0; co < cout; ++co) g.bias[co] += go[co];
      for (std::size_t dy = 0; dy < k; ++dy) {
        const auto sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const auto sx = static_cast<std::ptrdiff_t>(xx + dx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t src = (static_cast<std::size_t>(sy) * w +
                                   static_cast<std::size_t>(sx)) * cin;
          const double* xi = xd + src;
          double* gxi = gx + src;
          const double* wk = wd + (dy * k + dx) * cin * cout;
          double* gwk = gw + (dy * k + dx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* wc = wk + ci * cout;
            double* gwc = gwk + ci * cout;
            const double v = xi[ci];
            double acc = 0.0;
            for (std::size_t co = 0; co < cout; ++co) {
              acc += go[co] * wc[co];
              gwc[co] += v * go[co];
            }
            gxi[ci] += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  if (x.rank() != 3) throw std::invalid_argument("upsample expects [h,w,c]");
  if (factor == 1) return x;
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor out({oh, ow, c});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const Tap ty = upsample_tap(oy, factor, h);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const Tap tx = upsample_tap(ox, factor, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1 - tx.w) * x.at(ty.lo, tx.lo, ch) + tx.w * x.at(ty.lo, tx.hi, ch);
        const double bot = (1 - tx.w) * x.at(ty.hi, tx.lo, ch) + tx.w * x.at(ty.hi, tx.hi, ch);
        out.at(oy, ox, ch) = (1 - ty.w) * top + ty.w * bot;
      }
    }
  }
  return out;
}

Tensor bilinear_upsample_backward(const Tensor& grad_out, const Shape& in_shape,
                                  int factor) {
  if (factor == 1) return grad_out;
  Tensor g(in_shape);
  const std::size_t h = in_shape[0], w = in_shape[1], c = in_shape[2];
  const std::size_t oh = h * factor, ow = w * factor;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const Tap ty = upsample_tap(oy, factor, h);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const Tap tx = upsample_tap(ox, factor, w);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double go = grad_out.at(oy, ox, ch);
        g.at(ty.lo, tx.lo, ch) += go * (1 - ty.w) * (1 - tx.w);
        g.at(ty.lo, tx.hi, ch) += go * (1 - ty.w) * tx.w;
        g.at(ty.hi, tx.lo, ch) += go * ty.w * (1 - tx.w);
        g.at(ty.hi, tx.hi, ch) += go * ty.w * tx.w;
      }
    }
  }
  return g;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 0 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) +
                                " incompatible with weight " +
                                shape_string(weight.shape()));
  }
  const std::size_t din = weight.dim(0), dout = weight.dim(1);
  if (!bias.empty() && bias.size() != dout) {
    throw std::invalid_argument("linear: bias length must equal dout");
  }
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor out(out_shape);
  const std::size_t rows = x.size() / din;
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data().data() + r * dout;
    if (!bias.empty()) {
      for (std::size_t j = 0; j < dout; ++j) o[j] = bias[j];
    }
    const double* xi = x.data().data() + r * din;
    for (std::size_t i = 0; i < din; ++i) {
      const double v = xi[i];
      const double* wr = weight.data().data() + i * dout;
      for (std::size_t j = 0; j < dout; ++j) o[j] += v * wr[j];
    }
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  return linear(a, b, Tensor());
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose expects a matrix");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : 0.0;
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw std::invalid_argument("softmax axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t c = x.shape().back();
  if (gamma.size() != c || beta.size() != c) {
    throw std::invalid_argument("layer_norm: affine parameters must match last axis");
  }
  Tensor out(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    double* o = out.data().data() + r * c;
    for (std::size_t j = 0; j < c; ++j) o[j] = (xi[j] - mean) * inv * gamma[j] + beta[j];
  }
  return out;
}

LayerNormGrads layer_norm_backward(const Tensor& x, const Tensor& gamma,
                                   const Tensor& grad_out) {
  const std::size_t c = x.shape().back();
  LayerNormGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  const std::size_t rows = x.size() / c;
  std::vector<double> xhat(c), gxhat(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = x.data().data() + r * c;
    const double* go = grad_out.data().data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      xhat[j] = (xi[j] - mean) * inv;
      gxhat[j] = go[j] * gamma[j];
      g.gamma[j] += go[j] * xhat[j];
      g.beta[j] += go[j];
      m1 += gxhat[j];
      m2 += gxhat[j] * xhat[j];
    }
    m1 /= static_cast<double>(c);
    m2 /= static_cast<double>(c);
    double* gx = g.x.data().data() + r * c;
    for (std::size_t j = 0; j < c; ++j) gx[j] = inv * (gxhat[j] - m1 - xhat[j] * m2);
  }
  return g;
}

}  // namespace cadgd::kernels
