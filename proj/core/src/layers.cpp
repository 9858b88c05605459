#include "cadgd/layers.hpp"

#include <cmath>

namespace cadgd {
namespace {

Tensor init_tensor(Rng& rng, Shape shape, double fan_in, double fan_out, Init init) {
  if (init == Init::zero) return Tensor(std::move(shape));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = rng.uniform_tensor(std::move(shape), -bound, bound);
  if (init == Init::positive) {
    for (double& v : t.data()) v = std::fabs(v);
  }
  return t;
}

}  // namespace

void add_linear(ParamStore& store, Rng& rng, const std::string& path, std::size_t din,
                std::size_t dout, Init init) {
  store.add(path + "/weight", init_tensor(rng, {din, dout}, static_cast<double>(din),
                                          static_cast<double>(dout), init));
  store.add(path + "/bias", Tensor({dout}));
}

Var apply_linear(Graph& g, const ParamStore& store, const std::string& path, Var x) {
  return linear(x, g.parameter(store, path + "/weight"), g.parameter(store, path + "/bias"));
}

void add_conv(ParamStore& store, Rng& rng, const std::string& path, std::size_t k,
              std::size_t cin, std::size_t cout, Init init) {
  const auto area = static_cast<double>(k * k);
  store.add(path + "/weight", init_tensor(rng, {k, k, cin, cout}, area * static_cast<double>(cin),
                                          area * static_cast<double>(cout), init));
  store.add(path + "/bias", Tensor({cout}));
}

Var apply_conv(Graph& g, const ParamStore& store, const std::string& path, Var x) {
  Var w = g.parameter(store, path + "/weight");
  return conv2d(x, w, g.parameter(store, path + "/bias"), (w.value().dim(0) - 1) / 2);
}

void add_layer_norm(ParamStore& store, const std::string& path, std::size_t c) {
  store.add(path + "/gamma", Tensor({c}, 1.0));
  store.add(path + "/beta", Tensor({c}));
}

Var apply_layer_norm(Graph& g, const ParamStore& store, const std::string& path, Var x) {
  return layer_norm(x, g.parameter(store, path + "/gamma"), g.parameter(store, path + "/beta"));
}

void add_attention(ParamStore& store, Rng& rng, const std::string& path, std::size_t c,
                   bool zero_output) {
  add_linear(store, rng, path + "/q", c, c);
  add_linear(store, rng, path + "/k", c, c);
  add_linear(store, rng, path + "/v", c, c);
  add_linear(store, rng, path + "/out", c, c, zero_output ? Init::zero : Init::xavier);
}

AttentionWeights bind_attention(Graph& g, const ParamStore& store, const std::string& path) {
  auto p = [&](const char* name) { return g.parameter(store, path + name); };
  return {p("/q/weight"), p("/q/bias"), p("/k/weight"), p("/k/bias"),
          p("/v/weight"), p("/v/bias"), p("/out/weight"), p("/out/bias")};
}

}  // namespace cadgd
