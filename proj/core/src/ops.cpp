#include "cadgd/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "cadgd/kernels.hpp"

namespace cadgd {
namespace {

Graph& graph_of(Var a) { return a.graph(); }

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

std::size_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw std::invalid_argument("op needs rank >= 1");
  return t.shape().back();
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate_grad(a, go);
    g.accumulate_grad(b, go);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    g.accumulate_grad(a, go);
    Tensor neg = go;
    neg *= -1.0;
    g.accumulate_grad(b, neg);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (a.requires_grad()) {
      Tensor ga = go;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      g.accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb = go;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      g.accumulate_grad(b, gb);
    }
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  out *= s;
  return graph_of(x).record(std::move(out), {x}, [x, s](Graph& g, const Tensor& go) {
    Tensor gx = go;
    gx *= s;
    g.accumulate_grad(x, gx);
  });
}

Var add_scalar(Var x, double s) {
  Tensor out = map(x.value(), [s](double v) { return v + s; });
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    g.accumulate_grad(x, go);
  });
}

Var mul_channels(Var x, Var s) {
  const Tensor& xv = x.value();
  const Tensor& sv = s.value();
  const std::size_t c = last_dim(xv);
  Shape expect = xv.shape();
  expect.back() = 1;
  if (sv.shape() != expect) {
    throw std::invalid_argument("mul_channels: scale shape " + shape_string(sv.shape()) +
                                " must be " + shape_string(expect));
  }
  Tensor out(xv.shape());
  const std::size_t rows = xv.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] * sv[r];
  }
  return graph_of(x).record(std::move(out), {x, s}, [x, s, c, rows](Graph& g, const Tensor& go) {
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    if (x.requires_grad()) {
      Tensor gx(xv.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = go[r * c + j] * sv[r];
      }
      g.accumulate_grad(x, gx);
    }
    if (s.requires_grad()) {
      Tensor gs(sv.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += go[r * c + j] * xv[r * c + j];
        gs[r] = acc;
      }
      g.accumulate_grad(s, gs);
    }
  });
}

Var mul_positions(Var x, Var v) {
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  const std::size_t c = last_dim(xv);
  if (vv.size() != c) {
    throw std::invalid_argument("mul_positions: vector of " + std::to_string(vv.size()) +
                                " elements cannot scale " + std::to_string(c) + " channels");
  }
  Tensor out(xv.shape());
  const std::size_t rows = xv.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] * vv[j];
  }
  return graph_of(x).record(std::move(out), {x, v}, [x, v, c, rows](Graph& g, const Tensor& go) {
    const Tensor& xv = x.value();
    const Tensor& vv = v.value();
    if (x.requires_grad()) {
      Tensor gx(xv.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = go[r * c + j] * vv[j];
      }
      g.accumulate_grad(x, gx);
    }
    if (v.requires_grad()) {
      Tensor gv(vv.shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < c; ++j) gv[j] += go[r * c + j] * xv[r * c + j];
      }
      g.accumulate_grad(v, gv);
    }
  });
}

Var sigmoid(Var x) {
  Tensor out = kernels::sigmoid(x.value());
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double y = kernels::sigmoid(x.value()[i]);
      gx[i] = go[i] * y * (1.0 - y);
    }
    g.accumulate_grad(x, gx);
  });
}

Var gelu(Var x) {
  Tensor out = kernels::gelu(x.value());
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] = go[i] * kernels::gelu_derivative(x.value()[i]);
    }
    g.accumulate_grad(x, gx);
  });
}

Var relu(Var x) {
  Tensor out = kernels::relu(x.value());
  for (double v : x.value().data()) graph_of(x).mix_branch(v > 0);
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = x.value()[i] > 0 ? go[i] : 0.0;
    g.accumulate_grad(x, gx);
  });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0)) throw std::domain_error("log of non-positive value");
  }
  Tensor out = map(x.value(), [](double v) { return std::log(v); });
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] / x.value()[i];
    g.accumulate_grad(x, gx);
  });
}

Var abs(Var x) {
  Tensor out = map(x.value(), [](double v) { return std::fabs(v); });
  for (double v : x.value().data()) graph_of(x).mix_branch(v > 0 ? 2 : (v < 0 ? 0 : 1));
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = x.value()[i];
      gx[i] = v > 0 ? go[i] : (v < 0 ? -go[i] : 0.0);
    }
    g.accumulate_grad(x, gx);
  });
}

Var square(Var x) {
  Tensor out = map(x.value(), [](double v) { return v * v; });
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 2.0 * x.value()[i] * go[i];
    g.accumulate_grad(x, gx);
  });
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Tensor out = map(x.value(), [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
  for (double v : x.value().data()) graph_of(x).mix_branch(v < lo ? 0 : (v > hi ? 2 : 1));
  return graph_of(x).record(std::move(out), {x}, [x, lo, hi](Graph& g, const Tensor& go) {
    Tensor gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = x.value()[i];
      gx[i] = (v > lo && v < hi) ? go[i] : 0.0;
    }
    g.accumulate_grad(x, gx);
  });
}

Var sum(Var x) {
  return graph_of(x).record(Tensor::scalar(x.value().sum()), {x},
                            [x](Graph& g, const Tensor& go) {
                              g.accumulate_grad(x, Tensor(x.value().shape(), go[0]));
                            });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty tensor");
  return graph_of(x).record(Tensor::scalar(x.value().sum() / n), {x},
                            [x, n](Graph& g, const Tensor& go) {
                              g.accumulate_grad(x, Tensor(x.value().shape(), go[0] / n));
                            });
}

Var max_last(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  const std::size_t rows = xv.size() / c;
  Shape shape = xv.shape();
  shape.back() = 1;
  Tensor out(shape);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (xv[r * c + j] > xv[r * c + best]) best = j;
    }
    arg[r] = best;
    out[r] = xv[r * c + best];
    graph_of(x).mix_branch(best);
  }
  return graph_of(x).record(std::move(out), {x}, [x, c, arg](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t r = 0; r < arg.size(); ++r) gx[r * c + arg[r]] = go[r];
    g.accumulate_grad(x, gx);
  });
}

Var mean_last(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  const std::size_t rows = xv.size() / c;
  Shape shape = xv.shape();
  shape.back() = 1;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += xv[r * c + j];
    out[r] = acc / static_cast<double>(c);
  }
  return graph_of(x).record(std::move(out), {x}, [x, c](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i / c] / static_cast<double>(c);
    g.accumulate_grad(x, gx);
  });
}

Var max_positions(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  const std::size_t rows = xv.size() / c;
  if (rows == 0) throw std::invalid_argument("max_positions of empty tensor");
  Tensor out({1, c});
  std::vector<std::size_t> arg(c, 0);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 1; r < rows; ++r) {
      if (xv[r * c + j] > xv[arg[j] * c + j]) arg[j] = r;
    }
    out[j] = xv[arg[j] * c + j];
    graph_of(x).mix_branch(arg[j]);
  }
  return graph_of(x).record(std::move(out), {x}, [x, c, arg](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t j = 0; j < c; ++j) gx[arg[j] * c + j] = go[j];
    g.accumulate_grad(x, gx);
  });
}

Var mean_positions(Var x) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  const std::size_t rows = xv.size() / c;
  if (rows == 0) throw std::invalid_argument("mean_positions of empty tensor");
  Tensor out({1, c});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += xv[r * c + j];
  }
  out *= 1.0 / static_cast<double>(rows);
  return graph_of(x).record(std::move(out), {x}, [x, c, rows](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i % c] / static_cast<double>(rows);
    g.accumulate_grad(x, gx);
  });
}

namespace {

// Gradients of y = x * W (+ b) with x viewed as [rows, din].
void linear_backward(Graph& g, Var x, Var weight, Var bias, bool has_bias,
                     const Tensor& go) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t din = wv.dim(0), dout = wv.dim(1);
  const std::size_t rows = xv.size() / din;
  if (x.requires_grad()) {
    Tensor gx(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gor = go.data().data() + r * dout;
      double* gxr = gx.data().data() + r * din;
      for (std::size_t i = 0; i < din; ++i) {
        const double* wr = wv.data().data() + i * dout;
        double acc = 0.0;
        for (std::size_t j = 0; j < dout; ++j) acc += gor[j] * wr[j];
        gxr[i] = acc;
      }
    }
    g.accumulate_grad(x, gx);
  }
  if (weight.requires_grad()) {
    Tensor gw(wv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gor = go.data().data() + r * dout;
      const double* xr = xv.data().data() + r * din;
      for (std::size_t i = 0; i < din; ++i) {
        const double v = xr[i];
        double* gwr = gw.data().data() + i * dout;
        for (std::size_t j = 0; j < dout; ++j) gwr[j] += v * gor[j];
      }
    }
    g.accumulate_grad(weight, gw);
  }
  if (has_bias && bias.requires_grad()) {
    Tensor gb(bias.value().shape());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < dout; ++j) gb[j] += go[r * dout + j];
    }
    g.accumulate_grad(bias, gb);
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.value().rank() != 2) throw std::invalid_argument("matmul expects 2-D operands");
  Tensor out = kernels::matmul(a.value(), b.value());
  return graph_of(a).record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    linear_backward(g, a, b, Var(), false, go);
  });
}

Var transpose(Var a) {
  Tensor out = kernels::transpose(a.value());
  return graph_of(a).record(std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    g.accumulate_grad(a, kernels::transpose(go));
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tensor out = kernels::linear(x.value(), weight.value(), bias.value());
  return graph_of(x).record(std::move(out), {x, weight, bias},
                            [x, weight, bias](Graph& g, const Tensor& go) {
                              linear_backward(g, x, weight, bias, true, go);
                            });
}

Var linear(Var x, Var weight) {
  Tensor out = kernels::linear(x.value(), weight.value(), Tensor());
  return graph_of(x).record(std::move(out), {x, weight}, [x, weight](Graph& g, const Tensor& go) {
    linear_backward(g, x, weight, Var(), false, go);
  });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t padding) {
  Tensor out = kernels::conv2d(x.value(), weight.value(), bias.value(), padding);
  return graph_of(x).record(std::move(out), {x, weight, bias},
                            [x, weight, bias, padding](Graph& g, const Tensor& go) {
                              auto grads = kernels::conv2d_backward(x.value(), weight.value(),
                                                                    go, padding);
                              g.accumulate_grad(x, grads.x);
                              g.accumulate_grad(weight, grads.weight);
                              g.accumulate_grad(bias, grads.bias.reshaped(bias.value().shape()));
                            });
}

Var bilinear_upsample(Var x, int factor) {
  Tensor out = kernels::bilinear_upsample(x.value(), factor);
  return graph_of(x).record(std::move(out), {x}, [x, factor](Graph& g, const Tensor& go) {
    g.accumulate_grad(x, kernels::bilinear_upsample_backward(go, x.value().shape(), factor));
  });
}

Var softmax(Var x) {
  const std::size_t axis = x.value().rank() - 1;
  Tensor out = kernels::softmax(x.value(), axis);
  Tensor saved = out;
  return graph_of(x).record(std::move(out), {x}, [x, yv = std::move(saved)](Graph& g, const Tensor& go) {
    const std::size_t c = yv.shape().back();
    Tensor gx(yv.shape());
    for (std::size_t r = 0; r < yv.size() / c; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += go[r * c + j] * yv[r * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[r * c + j] = yv[r * c + j] * (go[r * c + j] - dot);
    }
    g.accumulate_grad(x, gx);
  });
}

Var layer_norm(Var x, Var gamma, Var beta) {
  Tensor out = kernels::layer_norm(x.value(), gamma.value(), beta.value());
  return graph_of(x).record(std::move(out), {x, gamma, beta},
                            [x, gamma, beta](Graph& g, const Tensor& go) {
                              auto grads = kernels::layer_norm_backward(x.value(), gamma.value(), go);
                              g.accumulate_grad(x, grads.x);
                              g.accumulate_grad(gamma, grads.gamma.reshaped(gamma.value().shape()));
                              g.accumulate_grad(beta, grads.beta.reshaped(beta.value().shape()));
                            });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return graph_of(x).record(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    g.accumulate_grad(x, go.reshaped(x.value().shape()));
  });
}

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last of nothing");
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.size() / last_dim(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    Shape lead(t.shape().begin(), t.shape().end() - 1);
    Shape lead0(first.shape().begin(), first.shape().end() - 1);
    if (lead != lead0) throw std::invalid_argument("concat_last: leading shapes differ");
    widths.push_back(t.shape().back());
    total += t.shape().back();
  }
  Shape shape = first.shape();
  shape.back() = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < widths[p]; ++j) {
        out[r * total + offset + j] = t[r * widths[p] + j];
      }
    }
    offset += widths[p];
  }
  return graph_of(parts.front())
      .record(std::move(out), parts, [parts, widths, rows, total](Graph& g, const Tensor& go) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
          if (parts[p].requires_grad()) {
            Tensor gp(parts[p].value().shape());
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[p]; ++j) {
                gp[r * widths[p] + j] = go[r * total + offset + j];
              }
            }
            g.accumulate_grad(parts[p], gp);
          }
          offset += widths[p];
        }
      });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  const std::size_t cols = parts.front().value().shape().back();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().rank() != 2 || p.value().dim(1) != cols) {
      throw std::invalid_argument("concat_rows expects 2-D parts with equal columns");
    }
    rows += p.value().dim(0);
  }
  Tensor out({rows, cols});
  std::size_t at = 0;
  for (const Var& p : parts) {
    for (double v : p.value().data()) out[at++] = v;
  }
  return graph_of(parts.front()).record(std::move(out), parts, [parts](Graph& g, const Tensor& go) {
    std::size_t at = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().size();
      if (p.requires_grad()) {
        Tensor gp(p.value().shape());
        for (std::size_t i = 0; i < n; ++i) gp[i] = go[at + i];
        g.accumulate_grad(p, gp);
      }
      at += n;
    }
  });
}

Var slice_last(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  if (begin >= end || end > c) throw std::invalid_argument("slice_last: bad range");
  const std::size_t w = end - begin;
  const std::size_t rows = xv.size() / c;
  Shape shape = xv.shape();
  shape.back() = w;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xv[r * c + begin + j];
  }
  return graph_of(x).record(std::move(out), {x}, [x, begin, w, c, rows](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) gx[r * c + begin + j] = go[r * w + j];
    }
    g.accumulate_grad(x, gx);
  });
}

Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw std::invalid_argument("gather_rows expects a 2-D tensor");
  const std::size_t n = xv.dim(0), c = xv.dim(1);
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) +
                              " out of " + std::to_string(n));
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[rows[i] * c + j];
  }
  return graph_of(x).record(std::move(out), {x}, [x, rows, c](Graph& g, const Tensor& go) {
    Tensor gx(x.value().shape());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[rows[i] * c + j] += go[i * c + j];
    }
    g.accumulate_grad(x, gx);
  });
}

Var mask_columns(Var x, const std::vector<bool>& keep, double fill) {
  const Tensor& xv = x.value();
  const std::size_t c = last_dim(xv);
  if (keep.size() != c) throw std::invalid_argument("mask_columns: mask length mismatch");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!keep[i % c]) out[i] = fill;
  }
  return graph_of(x).record(std::move(out), {x}, [x, keep, c](Graph& g, const Tensor& go) {
    Tensor gx = go;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!keep[i % c]) gx[i] = 0.0;
    }
    g.accumulate_grad(x, gx);
  });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads,
                         const AttentionWeights& w, const Tensor& score_bias) {
  const std::size_t c = last_dim(q.value());
  if (heads == 0 || c % heads != 0) {
    throw std::invalid_argument("attention width " + std::to_string(c) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.value().rank() != 2 || v.value().rank() != 2 ||
      k.value().dim(0) != v.value().dim(0)) {
    throw std::invalid_argument("attention keys and values must be [nk,c]");
  }
  if (!score_bias.empty() &&
      score_bias.shape() != Shape{q.value().dim(0), k.value().dim(0)}) {
    throw std::invalid_argument("attention score bias must be [nq,nk]");
  }
  const std::size_t d = c / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Var qp = linear(q, w.q_weight, w.q_bias);
  Var kp = linear(k, w.k_weight, w.k_bias);
  Var vp = linear(v, w.v_weight, w.v_bias);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? qp : slice_last(qp, h * d, (h + 1) * d);
    Var kh = heads == 1 ? kp : slice_last(kp, h * d, (h + 1) * d);
    Var vh = heads == 1 ? vp : slice_last(vp, h * d, (h + 1) * d);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
    if (!score_bias.empty()) scores = add(scores, q.graph().constant(score_bias));
    outs.push_back(matmul(softmax(scores), vh));
  }
  Var merged = heads == 1 ? outs.front() : concat_last(outs);
  return linear(merged, w.out_weight, w.out_bias);
}

}  // namespace cadgd
