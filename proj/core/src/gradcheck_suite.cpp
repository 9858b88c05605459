#include "cadgd/gradcheck_suite.hpp"

#include <algorithm>

#include "cadgd/gradcheck.hpp"
#include "cadgd/ops.hpp"
#include "cadgd/random.hpp"

namespace cadgd {
namespace {

using MultiFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Checks the gradient of <f(inputs), R> with respect to each input in turn,
// R a fixed random weighting of the output.
double check_all(const std::vector<Tensor>& inputs, const MultiFn& f, Rng& rng) {
  Tensor weights;
  {
    Graph g;
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(g.constant(t));
    weights = rng.uniform_tensor(f(g, vs).shape(), -1.0, 1.0);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto scalar = [&](Graph& g, Var xi) {
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        vs.push_back(j == i ? xi : g.constant(inputs[j]));
      }
      return sum(mul(f(g, vs), g.constant(weights)));
    };
    worst = std::max(worst, grad_check(scalar, inputs[i], kGradEps));
  }
  return worst;
}

Shape vary(int variant, Shape base) {
  base[0] += static_cast<std::size_t>(variant);
  return base;
}

GradCase unary(std::string name, Var (*op)(Var), double lo = -2.0, double hi = 2.0) {
  return {std::move(name), [op, lo, hi](std::uint64_t seed, int variant) {
            Rng rng(seed);
            static const Shape bases[] = {{3}, {2, 3}, {2, 3, 2}};
            Tensor x = rng.uniform_tensor(bases[variant % 3], lo, hi);
            return check_all({x}, [op](Graph&, const std::vector<Var>& v) { return op(v[0]); }, rng);
          }};
}

GradCase binary(std::string name, Var (*op)(Var, Var)) {
  return {std::move(name), [op](std::uint64_t seed, int variant) {
            Rng rng(seed);
            const Shape s = vary(variant, {2, 3, 2});
            Tensor a = rng.uniform_tensor(s, -2, 2), b = rng.uniform_tensor(s, -2, 2);
            return check_all({a, b}, [op](Graph&, const std::vector<Var>& v) { return op(v[0], v[1]); }, rng);
          }};
}

}  // namespace

std::vector<GradCase> operation_grad_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary("add", add));
  cases.push_back(binary("sub", sub));
  cases.push_back(binary("mul", mul));
  cases.push_back({"scale", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     Tensor x = rng.uniform_tensor(vary(variant, {2, 3}), -2, 2);
                     return check_all({x}, [](Graph&, const std::vector<Var>& v) { return scale(v[0], -1.7); }, rng);
                   }});
  cases.push_back({"add_scalar", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     Tensor x = rng.uniform_tensor(vary(variant, {2, 3}), -2, 2);
                     return check_all({x}, [](Graph&, const std::vector<Var>& v) { return add_scalar(v[0], 0.3); }, rng);
                   }});
  cases.push_back({"mul_channels", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const Shape s = vary(variant, {2, 3, 4});
                     Shape s1 = s;
                     s1.back() = 1;
                     return check_all({rng.uniform_tensor(s, -2, 2), rng.uniform_tensor(s1, -2, 2)},
                                      [](Graph&, const std::vector<Var>& v) { return mul_channels(v[0], v[1]); }, rng);
                   }});
  cases.push_back({"mul_positions", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const Shape s = vary(variant, {2, 3, 4});
                     return check_all({rng.uniform_tensor(s, -2, 2), rng.uniform_tensor({1, 4}, -2, 2)},
                                      [](Graph&, const std::vector<Var>& v) { return mul_positions(v[0], v[1]); }, rng);
                   }});
  cases.push_back(unary("sigmoid", sigmoid, -4, 4));
  cases.push_back(unary("gelu", gelu, -3, 3));
  cases.push_back(unary("relu", relu));
  cases.push_back(unary("log", log, 0.3, 3.0));
  cases.push_back(unary("abs", abs));
  cases.push_back(unary("square", square));
  cases.push_back({"clamp", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     Tensor x = rng.uniform_tensor(vary(variant, {3, 4}), -2, 2);
                     return check_all({x}, [](Graph&, const std::vector<Var>& v) { return clamp(v[0], -0.5, 0.8); }, rng);
                   }});
  cases.push_back(unary("sum", sum));
  cases.push_back(unary("mean", mean));
  cases.push_back(unary("max_last", max_last));
  cases.push_back(unary("mean_last", mean_last));
  cases.push_back(unary("max_positions", max_positions));
  cases.push_back(unary("mean_positions", mean_positions));
  cases.push_back({"matmul", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const auto m = static_cast<std::size_t>(2 + variant);
                     return check_all({rng.uniform_tensor({m, 3}, -1, 1), rng.uniform_tensor({3, m + 1}, -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }, rng);
                   }});
  cases.push_back({"transpose", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     return check_all({rng.uniform_tensor(vary(variant, {2, 5}), -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return transpose(v[0]); }, rng);
                   }});
  cases.push_back({"linear", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const Shape s = vary(variant, {2, 3, 4});
                     return check_all({rng.uniform_tensor(s, -1, 1), rng.uniform_tensor({4, 5}, -1, 1),
                                       rng.uniform_tensor({5}, -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, rng);
                   }});
  cases.push_back({"conv2d", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const std::size_t k = variant == 2 ? 1 : 3 + 2 * static_cast<std::size_t>(variant);
                     const std::size_t h = 3 + static_cast<std::size_t>(variant);
                     return check_all({rng.uniform_tensor({h, 4, 2}, -1, 1), rng.uniform_tensor({k, k, 2, 3}, -1, 1),
                                       rng.uniform_tensor({3}, -1, 1)},
                                      [k](Graph&, const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], (k - 1) / 2); },
                                      rng);
                   }});
  cases.push_back({"bilinear_upsample", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const int factor = 1 + variant;
                     return check_all({rng.uniform_tensor({2, 3, 2}, -1, 1)},
                                      [factor](Graph&, const std::vector<Var>& v) { return bilinear_upsample(v[0], factor); },
                                      rng);
                   }});
  cases.push_back(unary("softmax", softmax, -3, 3));
  cases.push_back({"layer_norm", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const Shape s = vary(variant, {2, 5});
                     return check_all({rng.uniform_tensor(s, -2, 2), rng.uniform_tensor({5}, 0.5, 1.5),
                                       rng.uniform_tensor({5}, -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }, rng);
                   }});
  cases.push_back({"reshape", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const Shape s = vary(variant, {2, 3, 2});
                     return check_all({rng.uniform_tensor(s, -1, 1)},
                                      [s](Graph&, const std::vector<Var>& v) { return reshape(v[0], {s[0] * s[1], s[2]}); }, rng);
                   }});
  cases.push_back({"concat_last", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const auto n = static_cast<std::size_t>(2 + variant);
                     return check_all({rng.uniform_tensor({n, 2, 3}, -1, 1), rng.uniform_tensor({n, 2, 1}, -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return concat_last({v[0], v[1]}); }, rng);
                   }});
  cases.push_back({"concat_rows", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const auto n = static_cast<std::size_t>(1 + variant);
                     return check_all({rng.uniform_tensor({n, 3}, -1, 1), rng.uniform_tensor({2, 3}, -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return concat_rows({v[0], v[1]}); }, rng);
                   }});
  cases.push_back({"slice_last", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     return check_all({rng.uniform_tensor(vary(variant, {2, 6}), -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return slice_last(v[0], 1, 4); }, rng);
                   }});
  cases.push_back({"gather_rows", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     return check_all({rng.uniform_tensor(vary(variant, {3, 4}), -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) { return gather_rows(v[0], {2, 0, 2}); }, rng);
                   }});
  cases.push_back({"mask_columns", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     return check_all({rng.uniform_tensor(vary(variant, {2, 4}), -1, 1)},
                                      [](Graph&, const std::vector<Var>& v) {
                                        return mask_columns(v[0], {true, false, true, false}, -30.0);
                                      },
                                      rng);
                   }});
  cases.push_back({"multi_head_attention", [](std::uint64_t seed, int variant) {
                     Rng rng(seed);
                     const std::size_t c = 4;
                     const std::size_t heads = variant == 0 ? 1 : 2;
                     const auto nq = static_cast<std::size_t>(2 + variant);
                     const std::size_t nk = 3;
                     std::vector<Tensor> in = {rng.uniform_tensor({nq, c}, -1, 1), rng.uniform_tensor({nk, c}, -1, 1),
                                               rng.uniform_tensor({nk, c}, -1, 1)};
                     for (int i = 0; i < 4; ++i) {
                       in.push_back(rng.uniform_tensor({c, c}, -0.8, 0.8));
                       in.push_back(rng.uniform_tensor({c}, -0.3, 0.3));
                     }
                     // The last variant also carries an additive score bias.
                     Tensor bias;
                     if (variant == 2) bias = rng.uniform_tensor({nq, nk}, -1, 1);
                     return check_all(in,
                                      [heads, bias](Graph&, const std::vector<Var>& v) {
                                        AttentionWeights w{v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
                                        return multi_head_attention(v[0], v[1], v[2], heads, w, bias);
                                      },
                                      rng);
                   }});
  return cases;
}

std::vector<GradSuiteLine> run_grad_suite(const std::vector<GradCase>& cases, int seeds,
                                          double tolerance) {
  std::vector<GradSuiteLine> lines;
  for (const auto& c : cases) {
    GradSuiteLine line{c.name, 0.0, true};
    for (int s = 0; s < seeds; ++s) {
      for (int v = 0; v < c.variants; ++v) {
        const double err = c.run(Rng::derive(static_cast<std::uint64_t>(s), 977), v);
        line.max_error = std::max(line.max_error, err);
      }
    }
    line.pass = line.max_error < tolerance;
    lines.push_back(line);
  }
  return lines;
}

}  // namespace cadgd
